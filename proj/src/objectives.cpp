#include "kmdx/objectives.hpp"

#include <cmath>

#include "kmdx/log.hpp"
#include "kmdx/ops.hpp"
#include "kmdx/tokenizer.hpp"

namespace kmdx {

FeatureQueue::FeatureQueue(int capacity) : capacity_(capacity) {
    if (capacity <= 0) throw ConfigError("queue capacity must be positive");
}

void FeatureQueue::push(const Tensor& momentum_feats) {
    if (momentum_feats.needs_grad() || momentum_feats.requires_grad())
        throw ContractError(
            "queue push: features are attached to a gradient tape; queues "
            "accept momentum-encoder outputs only");
    if (momentum_feats.ndim() != 2)
        throw ShapeError("queue push: expected [n, dim], got " +
                         shape_str(momentum_feats.shape()));
    const int n = momentum_feats.dim(0), d = momentum_feats.dim(1);
    if (dim_ == 0) {
        dim_ = d;
        rows_.assign(static_cast<size_t>(capacity_) * dim_, 0.0);
    } else if (d != dim_) {
        throw ShapeError("queue push: feature dim " + std::to_string(d) +
                         " != queue dim " + std::to_string(dim_));
    }
    for (int i = 0; i < n; ++i) {
        double sq = 0.0;
        for (int j = 0; j < d; ++j) {
            const double v = momentum_feats.data()[static_cast<size_t>(i) * d + j];
            sq += v * v;
        }
        if (std::abs(std::sqrt(sq) - 1.0) > 1e-6)
            throw ContractError("queue push: row " + std::to_string(i) +
                                " is not unit-normalized");
        std::copy(momentum_feats.data().begin() + static_cast<size_t>(i) * d,
                  momentum_feats.data().begin() + static_cast<size_t>(i + 1) * d,
                  rows_.begin() + static_cast<size_t>(cursor_) * d);
        cursor_ = (cursor_ + 1) % capacity_;
        size_ = std::min(size_ + 1, capacity_);
    }
}

Tensor FeatureQueue::contents() const {
    if (size_ == 0) return {};
    return Tensor::from_data(
        {size_, dim_},
        std::vector<double>(rows_.begin(),
                            rows_.begin() + static_cast<size_t>(size_) * dim_));
}

void FeatureQueue::restore(int dim, int size, int cursor,
                           std::vector<double> rows) {
    if (size < 0 || size > capacity_ || cursor < 0 || cursor >= capacity_ ||
        (dim > 0 && rows.size() != static_cast<size_t>(capacity_) * dim))
        throw ContractError("queue restore: inconsistent state");
    dim_ = dim;
    size_ = size;
    cursor_ = cursor;
    rows_ = std::move(rows);
}

Tensor info_nce(const Tensor& online, const Tensor& momentum_batch,
                const FeatureQueue* queue, double tau) {
    if (online.shape() != momentum_batch.shape())
        throw ShapeError("info_nce: online " + shape_str(online.shape()) +
                         " vs momentum " + shape_str(momentum_batch.shape()));
    const int n = online.dim(0);
    const bool have_queue = queue != nullptr && !queue->empty();
    if (n < 2 && !have_queue)
        throw ContractError(
            "contrastive loss undefined: batch of " + std::to_string(n) +
            " with an empty queue provides no negatives");
    Tensor candidates = momentum_batch;
    if (have_queue)
        candidates = concat_rows({momentum_batch, queue->contents()});
    Tensor logits = affine(matmul(online, candidates, false, true),
                           1.0 / tau, 0.0);
    std::vector<int> positives(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) positives[static_cast<size_t>(i)] = i;
    return cross_entropy_logits(logits, positives, -1);
}

Tensor itc_loss(const Tensor& img_online, const Tensor& txt_online,
                const Tensor& img_momentum, const Tensor& txt_momentum,
                const FeatureQueue* img_queue, const FeatureQueue* txt_queue,
                double tau) {
    Tensor i2t = info_nce(img_online, txt_momentum, txt_queue, tau);
    Tensor t2i = info_nce(txt_online, img_momentum, img_queue, tau);
    return affine(add(i2t, t2i), 0.5, 0.0);
}

Tensor kdc_loss(const Tensor& data_online, const Tensor& know_online,
                const Tensor& data_momentum, const Tensor& know_momentum,
                const FeatureQueue* data_queue, const FeatureQueue* know_queue,
                double tau) {
    Tensor d2k = info_nce(data_online, know_momentum, know_queue, tau);
    Tensor k2d = info_nce(know_online, data_momentum, data_queue, tau);
    return affine(add(d2k, k2d), 0.5, 0.0);
}

Tensor image_restoration_loss(const Tensor& reconstructed,
                              const Tensor& original) {
    return mse(reconstructed, original);
}

Tensor text_restoration_loss(const Tensor& logits,
                             const std::vector<int>& token_ids) {
    bool any_scored = false;
    for (int id : token_ids)
        if (id != kPadId) any_scored = true;
    if (!any_scored) {
        log_warn("text restoration: all positions are PAD, loss is 0");
        return Tensor::scalar(0.0);
    }
    return cross_entropy_logits(logits, token_ids, kPadId);
}

Tensor classification_loss(const Tensor& probs,
                           const std::vector<int>& labels) {
    const int n = probs.dim(0), c = probs.dim(1);
    for (int i = 0; i < n; ++i) {
        double row = 0.0;
        for (int j = 0; j < c; ++j)
            row += probs.data()[static_cast<size_t>(i) * c + j];
        if (std::abs(row - 1.0) > 1e-6)
            throw ContractError("classification_loss: prediction row " +
                                std::to_string(i) + " sums to " +
                                std::to_string(row));
    }
    return cross_entropy(probs, labels);
}

Tensor total_loss(const LossParts& parts, const LossWeights& weights) {
    weights.validate();
    Tensor acc;
    auto fold = [&acc](const Tensor& part, double lambda) {
        if (!part.defined() || lambda == 0.0) return;
        Tensor term = lambda == 1.0 ? part : affine(part, lambda, 0.0);
        acc = acc.defined() ? add(acc, term) : term;
    };
    fold(parts.itc, weights.lambda_al);
    fold(parts.kdc, weights.lambda_al);
    fold(parts.res_image, weights.lambda_res);
    fold(parts.res_text, weights.lambda_res);
    fold(parts.cls, weights.lambda_cls);
    if (!acc.defined()) return Tensor::scalar(0.0);
    return acc;
}

}  // namespace kmdx
