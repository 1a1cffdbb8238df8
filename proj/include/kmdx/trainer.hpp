#pragma once

#include <functional>
#include <string>

#include "kmdx/cohort.hpp"
#include "kmdx/metrics.hpp"
#include "kmdx/model.hpp"
#include "kmdx/objectives.hpp"
#include "kmdx/optimizer.hpp"
#include "kmdx/tokenizer.hpp"

namespace kmdx {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 8;
    AdamWConfig optimizer;  // toy preset: lr 1e-3 (published scale uses 2e-5)
    LossWeights weights;
    double ema_coefficient = 0.995;
    int queue_capacity = 1024;
    std::uint64_t seed = 0;
};

// Cohort records turned into model-ready token/volume inputs.
struct PreparedCohort {
    Vocab vocab;
    std::vector<SubjectInput> subjects;  // aligned with cohort.records
    std::vector<int> train_idx, val_idx, test_idx;
    std::vector<int> labels;
};

// Vocabulary is built from the train split only; eval text falls back to
// UNK for unseen tokens.
PreparedCohort prepare_cohort(const Cohort& cohort, const KnowledgeBank& bank,
                              const ModelConfig& cfg, const Ablation& abl);

// One subject input outside a prepared cohort (explainability path).
SubjectInput make_subject_input(const FactorRecord& record,
                                const FactorSchema& schema,
                                const KnowledgeBank& bank, const Vocab& vocab,
                                const Ablation& abl,
                                const std::vector<std::string>& masked = {});

struct StepLosses {
    long long step = 0;
    double itc = 0, kdc = 0, res_image = 0, res_text = 0, cls = 0, total = 0;
    bool has_itc = false, has_kdc = false, has_res_image = false,
         has_res_text = false, has_cls = false;

    std::string log_line() const;
};

class Trainer {
 public:
    Trainer(Model model, TrainConfig cfg, Vocab vocab);

    // One optimizer step over a batch: refresh check, forward, Eq. 12 total,
    // backward, step, EMA update, queue update, bank push.
    StepLosses train_step(const std::vector<const SubjectInput*>& batch,
                          long long batch_idx, long long batches_per_epoch);

    // Full loop; per-step metrics lines go through `on_step` when set.
    // Throws NumericError on a non-finite loss.
    void train(const PreparedCohort& data,
               const std::function<void(const StepLosses&)>& on_step = {},
               const std::function<bool(long long epoch)>& after_epoch = {});

    // Positive-class probabilities, inference mode (frozen prototypes, no
    // bank pushes).
    std::vector<double> scores(const PreparedCohort& data,
                               const std::vector<int>& indices);
    Metrics evaluate(const PreparedCohort& data,
                     const std::vector<int>& indices);

    Model model;
    MomentumEncoders momentum;
    AdamW optimizer;
    FeatureQueue queue_image, queue_text, queue_data, queue_knowledge;
    long long global_step = 0;
    long long epoch = 0;
    TrainConfig cfg;
    Vocab vocab;

 private:
    struct BatchFeatures {
        Tensor img, txt, data, know;            // online, unit rows
        Tensor img_m, txt_m, data_m, know_m;    // momentum, unit rows
    };
    BatchFeatures batch_features(
        const std::vector<const SubjectInput*>& batch,
        const std::vector<SubjectForward>& forwards);
};

}  // namespace kmdx
