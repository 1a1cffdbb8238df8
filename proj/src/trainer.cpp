#include "kmdx/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "kmdx/rng.hpp"

namespace kmdx {

namespace {

Tensor volume_tensor(const FactorRecord& rec) {
    const int s = rec.volume_side;
    std::vector<double> v(rec.volume.begin(), rec.volume.end());
    return Tensor::from_data({s, s, s}, std::move(v));
}

Tensor batch_mean(const std::vector<Tensor>& parts) {
    Tensor acc;
    for (const Tensor& p : parts) acc = acc.defined() ? add(acc, p) : p;
    return affine(acc, 1.0 / static_cast<double>(parts.size()), 0.0);
}

}  // namespace

SubjectInput make_subject_input(const FactorRecord& record,
                                const FactorSchema& schema,
                                const KnowledgeBank& bank, const Vocab& vocab,
                                const Ablation& abl,
                                const std::vector<std::string>& masked) {
    SubjectInput in;
    in.volume = volume_tensor(record);
    in.text_ids = vocab.encode(textualize_masked(record, schema, masked));
    if (!abl.no_knowledge)
        in.know_ids =
            vocab.encode(bank.render(factors_present(record, schema, masked)));
    in.label = record.label;
    return in;
}

PreparedCohort prepare_cohort(const Cohort& cohort, const KnowledgeBank& bank,
                              const ModelConfig& cfg, const Ablation& abl) {
    PreparedCohort out;
    std::vector<std::string> corpus;
    for (int i : cohort.train_idx) {
        const auto& rec = cohort.records[static_cast<size_t>(i)];
        corpus.push_back(textualize(rec, cohort.schema));
        if (!abl.no_knowledge)
            corpus.push_back(
                bank.render(factors_present(rec, cohort.schema)));
    }
    out.vocab = Vocab::build(corpus, cfg.vocab_size);
    for (const auto& rec : cohort.records) {
        out.subjects.push_back(
            make_subject_input(rec, cohort.schema, bank, out.vocab, abl));
        out.labels.push_back(rec.label);
    }
    out.train_idx = cohort.train_idx;
    out.val_idx = cohort.val_idx;
    out.test_idx = cohort.test_idx;
    return out;
}

std::string StepLosses::log_line() const {
    char buf[256];
    auto field = [](bool has, double v) {
        char t[32];
        if (has)
            std::snprintf(t, sizeof(t), "%.9g", v);
        else
            std::snprintf(t, sizeof(t), "na");
        return std::string(t);
    };
    std::snprintf(buf, sizeof(buf), "%lld %s %s %s %s %s %.9g",
                  static_cast<long long>(step), field(has_itc, itc).c_str(),
                  field(has_kdc, kdc).c_str(),
                  field(has_res_image, res_image).c_str(),
                  field(has_res_text, res_text).c_str(),
                  field(has_cls, cls).c_str(), total);
    return buf;
}

Trainer::Trainer(Model model_in, TrainConfig cfg_in, Vocab vocab_in)
    : model(std::move(model_in)),
      momentum(MomentumEncoders::create(model, cfg_in.ema_coefficient)),
      optimizer(),
      queue_image(cfg_in.queue_capacity),
      queue_text(cfg_in.queue_capacity),
      queue_data(cfg_in.queue_capacity),
      queue_knowledge(cfg_in.queue_capacity),
      cfg(cfg_in),
      vocab(std::move(vocab_in)) {
    cfg.weights.validate();
    ParamRefs params = model.params();
    optimizer = AdamW(params, cfg.optimizer);
}

Trainer::BatchFeatures Trainer::batch_features(
    const std::vector<const SubjectInput*>& batch,
    const std::vector<SubjectForward>& forwards) {
    BatchFeatures bf;
    const int d = model.cfg.embed_dim;
    const bool with_knowledge = !model.abl.no_knowledge;

    std::vector<Tensor> img_rows, txt_rows, data_rows, know_rows;
    for (const auto& f : forwards) {
        img_rows.push_back(f.h_img_cls);
        txt_rows.push_back(f.h_txt_cls);
        data_rows.push_back(
            reshape(concat_rows({f.h_img_cls, f.h_txt_cls}), {1, 2 * d}));
        if (with_knowledge) know_rows.push_back(f.h_know_cls);
    }
    bf.img = normalize_rows(model.proj_img.forward(concat_rows(img_rows)));
    bf.txt = normalize_rows(model.proj_txt.forward(concat_rows(txt_rows)));
    bf.data = normalize_rows(model.proj_data.forward(concat_rows(data_rows)));
    if (with_knowledge)
        bf.know =
            normalize_rows(model.proj_know.forward(concat_rows(know_rows)));

    // Momentum side: EMA weights, never taped.
    NoTapeScope off;
    std::vector<Tensor> img_m, txt_m, data_m, know_m;
    for (const SubjectInput* in : batch) {
        Tensor hi = momentum.image_enc.forward(in->volume);
        Tensor ht = momentum.text_enc.forward(in->text_ids);
        Tensor ci = slice_rows(hi, 0, 1);
        Tensor ct = slice_rows(ht, 0, 1);
        img_m.push_back(ci);
        txt_m.push_back(ct);
        data_m.push_back(reshape(concat_rows({ci, ct}), {1, 2 * d}));
        if (with_knowledge) {
            Tensor hk = momentum.text_enc.forward(in->know_ids);
            know_m.push_back(slice_rows(hk, 0, 1));
        }
    }
    bf.img_m = normalize_rows(momentum.proj_img.forward(concat_rows(img_m)));
    bf.txt_m = normalize_rows(momentum.proj_txt.forward(concat_rows(txt_m)));
    bf.data_m =
        normalize_rows(momentum.proj_data.forward(concat_rows(data_m)));
    if (with_knowledge)
        bf.know_m =
            normalize_rows(momentum.proj_know.forward(concat_rows(know_m)));
    return bf;
}

StepLosses Trainer::train_step(const std::vector<const SubjectInput*>& batch,
                               long long batch_idx,
                               long long batches_per_epoch) {
    const Ablation& abl = model.abl;
    // Prototype refresh fires when the trigger batch starts; the very first
    // trigger of a run finds empty banks and is skipped (warm-up).
    if (model.memory.has_value() &&
        refresh_due(batch_idx, batches_per_epoch))
        model.memory->refresh(cfg.seed, epoch, batch_idx);

    ParamRefs params = model.params();
    for (auto& [name, p] : params) p->zero_grad();

    const bool want_recon = !(abl.mask_res_image && abl.mask_res_text);
    StepLosses out;
    out.step = global_step;

    Tape tape;
    BatchFeatures bf;
    std::vector<KvCollector> collectors;
    {
        TapeScope scope(tape);
        std::vector<SubjectForward> forwards;
        std::vector<int> labels;
        for (const SubjectInput* in : batch) {
            forwards.push_back(model.forward_subject(
                *in, model.memory.has_value() ? &collectors : nullptr,
                want_recon));
            labels.push_back(in->label);
        }
        if (model.memory.has_value()) model.memory->push_batch(collectors);

        LossParts parts;
        if (!abl.mask_cls) {
            std::vector<Tensor> prob_rows;
            for (const auto& f : forwards) prob_rows.push_back(f.probs);
            parts.cls = classification_loss(concat_rows(prob_rows), labels);
            out.cls = parts.cls.item();
            out.has_cls = true;
        }
        if (!abl.mask_res_image) {
            std::vector<Tensor> losses;
            for (size_t i = 0; i < forwards.size(); ++i)
                losses.push_back(image_restoration_loss(
                    forwards[i].recon_image, batch[i]->volume));
            parts.res_image = batch_mean(losses);
            out.res_image = parts.res_image.item();
            out.has_res_image = true;
        }
        if (!abl.mask_res_text) {
            std::vector<Tensor> losses;
            for (size_t i = 0; i < forwards.size(); ++i)
                losses.push_back(text_restoration_loss(
                    forwards[i].text_logits, batch[i]->text_ids));
            parts.res_text = batch_mean(losses);
            out.res_text = parts.res_text.item();
            out.has_res_text = true;
        }
        bf = batch_features(batch, forwards);
        if (!abl.mask_itc) {
            const FeatureQueue* iq = abl.itc_queue ? &queue_image : nullptr;
            const FeatureQueue* tq = abl.itc_queue ? &queue_text : nullptr;
            parts.itc = itc_loss(bf.img, bf.txt, bf.img_m, bf.txt_m, iq, tq,
                                 cfg.weights.tau);
            out.itc = parts.itc.item();
            out.has_itc = true;
        }
        if (!abl.mask_kdc && !abl.no_knowledge) {
            parts.kdc =
                kdc_loss(bf.data, bf.know, bf.data_m, bf.know_m, &queue_data,
                         &queue_knowledge, cfg.weights.tau);
            out.kdc = parts.kdc.item();
            out.has_kdc = true;
        }
        Tensor total = total_loss(parts, cfg.weights);
        out.total = total.item();
        if (!std::isfinite(out.total))
            throw NumericError("non-finite training loss at step " +
                               std::to_string(global_step));
        tape.backward(total);
    }
    optimizer.step(params);
    ema_update(momentum.pair);
    queue_image.push(bf.img_m);
    queue_text.push(bf.txt_m);
    if (!abl.no_knowledge) {
        queue_data.push(bf.data_m);
        queue_knowledge.push(bf.know_m);
    }
    ++global_step;
    return out;
}

void Trainer::train(const PreparedCohort& data,
                    const std::function<void(const StepLosses&)>& on_step,
                    const std::function<bool(long long)>& after_epoch) {
    const long long batches_per_epoch =
        static_cast<long long>(data.train_idx.size()) / cfg.batch_size;
    if (batches_per_epoch == 0)
        throw ConfigError("train split smaller than one batch");
    for (; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order = data.train_idx;
        auto rng = rng_for(cfg.seed, "shuffle",
                           static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), rng);
        // partial trailing batch is dropped: bank pushes require one shape
        for (long long b = 0; b < batches_per_epoch; ++b) {
            std::vector<const SubjectInput*> batch;
            for (int k = 0; k < cfg.batch_size; ++k)
                batch.push_back(
                    &data.subjects[static_cast<size_t>(
                        order[static_cast<size_t>(b * cfg.batch_size + k)])]);
            StepLosses losses = train_step(batch, b, batches_per_epoch);
            if (on_step) on_step(losses);
        }
        if (after_epoch && !after_epoch(epoch)) {
            ++epoch;
            break;
        }
    }
}

std::vector<double> Trainer::scores(const PreparedCohort& data,
                                    const std::vector<int>& indices) {
    NoTapeScope off;
    std::vector<double> out;
    for (int i : indices) {
        SubjectForward f = model.forward_subject(
            data.subjects[static_cast<size_t>(i)], nullptr, false);
        out.push_back(f.probs.data()[1]);  // positive-class probability
    }
    return out;
}

Metrics Trainer::evaluate(const PreparedCohort& data,
                          const std::vector<int>& indices) {
    if (indices.empty()) throw ContractError("evaluate: empty split");
    std::vector<double> s = scores(data, indices);
    std::vector<int> labels;
    for (int i : indices)
        labels.push_back(data.labels[static_cast<size_t>(i)]);
    return compute_metrics(s, labels);
}

}  // namespace kmdx
