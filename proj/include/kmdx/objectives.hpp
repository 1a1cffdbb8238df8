#pragma once

#include <vector>

#include "kmdx/tensor.hpp"

namespace kmdx {

struct LossWeights {
    double lambda_al = 1.0;
    double lambda_res = 1.0;
    double lambda_cls = 1.0;
    double tau = 0.07;

    void validate() const {
        if (lambda_al < 0 || lambda_res < 0 || lambda_cls < 0)
            throw ConfigError("loss weights must be non-negative");
        if (tau <= 0) throw ConfigError("temperature must be positive");
    }
};

// FIFO ring of unit-normalized feature rows. Rows must come from momentum
// encoders: pushing anything attached to a gradient tape is a contract
// violation, so no gradient can ever reach queue contents.
class FeatureQueue {
 public:
    explicit FeatureQueue(int capacity = 1024);

    int capacity() const { return capacity_; }
    int size() const { return size_; }
    int dim() const { return dim_; }
    int cursor() const { return cursor_; }
    bool empty() const { return size_ == 0; }

    void push(const Tensor& momentum_feats);
    // Stored rows as a constant [size, dim] tensor; undefined when empty.
    Tensor contents() const;

    // Checkpoint restore.
    void restore(int dim, int size, int cursor, std::vector<double> rows);
    const std::vector<double>& raw() const { return rows_; }

 private:
    int capacity_;
    int dim_ = 0;
    int size_ = 0;
    int cursor_ = 0;
    std::vector<double> rows_;
};

// One InfoNCE direction: cross entropy of online rows against candidate rows
// (batch momentum features, then queue contents), positives on the diagonal.
Tensor info_nce(const Tensor& online, const Tensor& momentum_batch,
                const FeatureQueue* queue, double tau);

// Symmetric image/text contrastive loss. All features are unit-normalized
// projections; momentum features provide the candidate sides.
Tensor itc_loss(const Tensor& img_online, const Tensor& txt_online,
                const Tensor& img_momentum, const Tensor& txt_momentum,
                const FeatureQueue* img_queue, const FeatureQueue* txt_queue,
                double tau);

// Knowledge-data contrastive loss, same form with (data, knowledge) axes.
Tensor kdc_loss(const Tensor& data_online, const Tensor& know_online,
                const Tensor& data_momentum, const Tensor& know_momentum,
                const FeatureQueue* data_queue, const FeatureQueue* know_queue,
                double tau);

// Voxel-level reconstruction (MSE) and token-level reconstruction (cross
// entropy over non-pad positions; all-pad text scores 0 by convention).
Tensor image_restoration_loss(const Tensor& reconstructed,
                              const Tensor& original);
Tensor text_restoration_loss(const Tensor& logits,
                             const std::vector<int>& token_ids);

// Mean negative log-likelihood; probability rows must sum to 1 within 1e-6.
Tensor classification_loss(const Tensor& probs,
                           const std::vector<int>& labels);

struct LossParts {
    Tensor itc, kdc, res_image, res_text, cls;  // undefined when disabled
};

// Weighted total; zero-weight and disabled terms are skipped outright so an
// ablated total is bit-equal to the sum that simply omits those terms.
Tensor total_loss(const LossParts& parts, const LossWeights& weights);

}  // namespace kmdx
