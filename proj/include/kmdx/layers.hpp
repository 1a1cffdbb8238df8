#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kmdx/ops.hpp"

namespace kmdx {

// Named references into a module's parameter tensors, in stable registration
// order. Drives the optimizer, EMA shadowing, and checkpoints.
using ParamRefs = std::vector<std::pair<std::string, Tensor*>>;

// Scaled-uniform init, bound 1/sqrt(fan_in), seeded per parameter path.
Tensor init_uniform(Shape shape, int fan_in, std::uint64_t seed,
                    const std::string& path);
Tensor init_zeros(Shape shape, const std::string& path);
Tensor init_const(Shape shape, double v, const std::string& path);

// Detached copy for momentum shadows: same values, no gradients ever.
Tensor clone_detached(const Tensor& src, const std::string& name);

struct LinearLayer {
    Tensor w;  // [in, out]
    Tensor b;  // [out]

    static LinearLayer init(int in, int out, std::uint64_t seed,
                            const std::string& path);
    Tensor forward(const Tensor& x) const { return add(matmul(x, w), b); }
    void collect(ParamRefs& out, const std::string& prefix);
};

struct LayerNormParams {
    Tensor gain;
    Tensor bias;

    static LayerNormParams init(int dim, const std::string& path);
    Tensor forward(const Tensor& x) const {
        return layer_norm(x, gain, bias);
    }
    void collect(ParamRefs& out, const std::string& prefix);
};

struct AttentionParams {
    LinearLayer wq, wk, wv, wo;
    int heads = 1;

    static AttentionParams init(int dim, int heads, std::uint64_t seed,
                                const std::string& path);
    void collect(ParamRefs& out, const std::string& prefix);
};

// Standard scaled dot-product multi-head attention. `mask` is an additive
// [len_q, len_kv] matrix (or undefined for none). Optional prototype
// prefixes extend keys/values per head: proto_k/proto_v are [heads, m, dh]
// constants prepended before the projected keys/values.
Tensor multi_head_attention(const AttentionParams& p, const Tensor& query_seq,
                            const Tensor& kv_seq, const Tensor& mask = {},
                            const Tensor& proto_k = {},
                            const Tensor& proto_v = {});

// Post-norm transformer block: LN(SA(x)+x) then LN(FFN(.)+.), ReLU FFN.
struct TransformerBlock {
    AttentionParams attn;
    LayerNormParams ln_attn, ln_ffn;
    LinearLayer ffn_in, ffn_out;

    static TransformerBlock init(int dim, int heads, int ffn_mult,
                                 std::uint64_t seed, const std::string& path);
    Tensor forward(const Tensor& x, const Tensor& mask = {}) const;
    void collect(ParamRefs& out, const std::string& prefix);
};

}  // namespace kmdx
