#include "kmdx/model.hpp"

namespace kmdx {

Model Model::init(const ModelConfig& cfg, const MemoryConfig& mcfg,
                  const Ablation& abl, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    m.mcfg = mcfg;
    m.abl = abl;
    m.image_enc = ImageEncoder::init(cfg, seed, "image_encoder");
    m.text_enc = TextEncoder::init(cfg, seed, "text_encoder");
    m.image_dec = ImageDecoder::init(cfg, seed, "image_decoder");
    m.text_dec = TextDecoder::init(cfg, seed, "text_decoder");
    m.kl = KnowledgeStack::init(cfg, seed, "kl");
    m.kl.gated = !abl.no_kag;
    if (!abl.no_memory)
        m.memory = MemoryStack::init(cfg, mcfg, seed, "mem");
    m.head = ClassifierHead::init(cfg, seed, "classifier");
    m.proj_img = LinearLayer::init(cfg.embed_dim, cfg.proj_dim, seed,
                                   "proj.image");
    m.proj_txt = LinearLayer::init(cfg.embed_dim, cfg.proj_dim, seed,
                                   "proj.text");
    m.proj_data = LinearLayer::init(2 * cfg.embed_dim, cfg.proj_dim, seed,
                                    "proj.data");
    m.proj_know = LinearLayer::init(cfg.embed_dim, cfg.proj_dim, seed,
                                    "proj.knowledge");
    return m;
}

Tensor Model::encode_knowledge(
    const std::vector<std::vector<int>>& factor_token_ids) const {
    std::vector<int> flat;
    for (const auto& ids : factor_token_ids)
        flat.insert(flat.end(), ids.begin(), ids.end());
    return text_enc.forward(flat);
}

SubjectForward Model::forward_subject(const SubjectInput& in,
                                      std::vector<KvCollector>* collectors,
                                      bool want_reconstruction) const {
    SubjectForward out;
    Tensor h_image = image_enc.forward(in.volume);
    Tensor h_text = text_enc.forward(in.text_ids);
    out.h_img_cls = slice_rows(h_image, 0, 1);
    out.h_txt_cls = slice_rows(h_text, 0, 1);

    Tensor h_knowledge;
    if (!abl.no_knowledge) {
        if (in.know_ids.empty())
            throw ContractError(
                "knowledge injection requires at least one factor (subject "
                "has an empty knowledge sequence)");
        h_knowledge = text_enc.forward(in.know_ids);
        out.h_know_cls = slice_rows(h_knowledge, 0, 1);
    }

    Tensor joint = build_joint_sequence(h_image, h_text);
    Tensor injected;
    if (abl.no_knowledge) {
        // Backbone-only path: the injection layers keep their joint
        // self-attention and FFN but skip the knowledge gate.
        Tensor h = joint;
        for (const auto& layer : kl.layers) {
            Tensor sa_out = multi_head_attention(layer.sa, h, h);
            Tensor h1 = layer.ln_sa.forward(add(sa_out, h));
            Tensor f = layer.ffn_out.forward(relu(layer.ffn_in.forward(h1)));
            h = layer.ln_ffn.forward(add(f, h1));
        }
        injected = h;
    } else {
        injected = kl.forward(joint, h_knowledge);
    }

    Tensor know_cls_for_fusion =
        abl.no_knowledge ? Tensor::zeros({1, cfg.embed_dim}) : h_knowledge;
    FusedRepresentation fused =
        fuse_cls(injected, h_image.dim(0), know_cls_for_fusion);
    out.fused_tokens = fused.tokens;

    Tensor final_seq = memory.has_value()
                           ? memory->forward(fused.tokens, collectors)
                           : fused.tokens;
    out.probs = head.forward(final_seq);

    if (want_reconstruction) {
        out.recon_image = image_dec.forward(h_image);
        out.text_logits = text_dec.forward(h_text);
    }
    return out;
}

ParamRefs Model::params() {
    ParamRefs refs;
    image_enc.collect(refs, "image_encoder");
    text_enc.collect(refs, "text_encoder");
    image_dec.collect(refs, "image_decoder");
    text_dec.collect(refs, "text_decoder");
    kl.collect(refs, "kl");
    if (memory.has_value()) memory->collect(refs, "mem");
    head.collect(refs, "classifier");
    proj_img.collect(refs, "proj.image");
    proj_txt.collect(refs, "proj.text");
    proj_data.collect(refs, "proj.data");
    proj_know.collect(refs, "proj.knowledge");
    return refs;
}

ParamRefs Model::momentum_source_params() {
    ParamRefs refs;
    image_enc.collect(refs, "image_encoder");
    text_enc.collect(refs, "text_encoder");
    proj_img.collect(refs, "proj.image");
    proj_txt.collect(refs, "proj.text");
    proj_data.collect(refs, "proj.data");
    proj_know.collect(refs, "proj.knowledge");
    return refs;
}

MomentumEncoders MomentumEncoders::create(Model& model, double coefficient) {
    MomentumEncoders m;
    m.pair = make_momentum(model.momentum_source_params(), "momentum.",
                           coefficient);
    m.rebind(model);
    return m;
}

void MomentumEncoders::rebind(Model& model) {
    size_t cursor = 0;
    image_enc = bind_momentum(model.image_enc, pair, cursor);
    text_enc = bind_momentum(model.text_enc, pair, cursor);
    proj_img = bind_momentum(model.proj_img, pair, cursor);
    proj_txt = bind_momentum(model.proj_txt, pair, cursor);
    proj_data = bind_momentum(model.proj_data, pair, cursor);
    proj_know = bind_momentum(model.proj_know, pair, cursor);
    if (cursor != pair.shadow.size())
        throw ContractError("momentum rebind did not consume every shadow");
}

}  // namespace kmdx
