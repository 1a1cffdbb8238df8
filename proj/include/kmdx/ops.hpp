#pragma once

#include <vector>

#include "kmdx/tensor.hpp"

namespace kmdx {

// Differentiable operators. Every op allocates a fresh output (operands are
// never mutated) and registers its backward closure on the active tape when
// any operand needs gradients.

// b must have a's shape or a trailing suffix of it (broadcast over leading
// dims, e.g. [n,d]+[d] or [h,n,m]+[n,m]).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
// Elementwise product, identical shapes.
Tensor mul(const Tensor& a, const Tensor& b);
// scale * x + shift.
Tensor affine(const Tensor& x, double scale, double shift);

// op_a(a) x op_b(b) on the trailing two dims; operands are both 2-D, both
// 3-D with equal batch, or mixed (the 2-D side broadcasts over the batch).
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false,
              bool trans_b = false);

Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);

Tensor mse(const Tensor& pred, const Tensor& target);
// Mean negative log-likelihood of integer class labels under probability rows.
Tensor cross_entropy(const Tensor& probs, const std::vector<int>& labels);
// One-hot (or soft) target rows; probability rows must sum to 1 within 1e-6.
Tensor cross_entropy_onehot(const Tensor& probs, const Tensor& targets);
// Token-level cross entropy from logits; positions with target == ignore_id
// are excluded. All positions ignored yields a constant zero.
Tensor cross_entropy_logits(const Tensor& logits,
                            const std::vector<int>& targets, int ignore_id);

Tensor sum(const Tensor& x);
Tensor mean_all(const Tensor& x);
// [n,d] -> [d], mean over rows.
Tensor mean_rows(const Tensor& x);

// 2-D inputs with equal width, concatenated along the row (token) axis.
Tensor concat_rows(const std::vector<Tensor>& xs);
// 3-D inputs [B,na,d] and [B,nb,d] concatenated along the middle axis.
Tensor concat_batch_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, int start, int len);
// 1-D inputs of equal length stacked into [n,d].
Tensor stack_rows(const std::vector<Tensor>& xs);
Tensor reshape(const Tensor& x, Shape shape);

// [n,d] -> [heads,n,d/heads] and back.
Tensor split_heads(const Tensor& x, int heads);
Tensor merge_heads(const Tensor& x);

// Embedding lookup; backward scatter-adds into the table rows.
Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);
// Rows scaled to unit L2 norm (eps inside the square root guards zeros).
Tensor normalize_rows(const Tensor& x, double eps = 1e-12);

// [S,S,S] -> [(S/p)^3, p^3]: non-overlapping cubic patches, row-major in
// both the patch grid and within each patch. unpatchify is the exact inverse.
Tensor patchify(const Tensor& volume, int patch_side);
Tensor unpatchify(const Tensor& patches, int volume_side, int patch_side);

}  // namespace kmdx
