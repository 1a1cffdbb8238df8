#include "kmdx/layers.hpp"

#include <cmath>

#include "kmdx/rng.hpp"

namespace kmdx {

Tensor init_uniform(Shape shape, int fan_in, std::uint64_t seed,
                    const std::string& path) {
    auto rng = rng_for(seed, "init:" + path);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (double& e : v) e = dist(rng);
    return Tensor::param(std::move(shape), std::move(v), path);
}

Tensor init_zeros(Shape shape, const std::string& path) {
    return Tensor::param(
        std::move(shape),
        std::vector<double>(static_cast<size_t>(shape_numel(shape)), 0.0),
        path);
}

Tensor init_const(Shape shape, double v, const std::string& path) {
    return Tensor::param(
        std::move(shape),
        std::vector<double>(static_cast<size_t>(shape_numel(shape)), v),
        path);
}

Tensor clone_detached(const Tensor& src, const std::string& name) {
    Tensor t = Tensor::from_data(src.shape(), src.data());
    t.node()->name = name;
    return t;
}

LinearLayer LinearLayer::init(int in, int out, std::uint64_t seed,
                              const std::string& path) {
    LinearLayer l;
    l.w = init_uniform({in, out}, in, seed, path + ".w");
    l.b = init_uniform({out}, in, seed, path + ".b");
    return l;
}

void LinearLayer::collect(ParamRefs& out, const std::string& prefix) {
    out.emplace_back(prefix + ".w", &w);
    out.emplace_back(prefix + ".b", &b);
}

LayerNormParams LayerNormParams::init(int dim, const std::string& path) {
    LayerNormParams p;
    p.gain = init_const({dim}, 1.0, path + ".gain");
    p.bias = init_zeros({dim}, path + ".bias");
    return p;
}

void LayerNormParams::collect(ParamRefs& out, const std::string& prefix) {
    out.emplace_back(prefix + ".gain", &gain);
    out.emplace_back(prefix + ".bias", &bias);
}

AttentionParams AttentionParams::init(int dim, int heads, std::uint64_t seed,
                                      const std::string& path) {
    AttentionParams p;
    p.wq = LinearLayer::init(dim, dim, seed, path + ".wq");
    p.wk = LinearLayer::init(dim, dim, seed, path + ".wk");
    p.wv = LinearLayer::init(dim, dim, seed, path + ".wv");
    p.wo = LinearLayer::init(dim, dim, seed, path + ".wo");
    p.heads = heads;
    return p;
}

void AttentionParams::collect(ParamRefs& out, const std::string& prefix) {
    wq.collect(out, prefix + ".wq");
    wk.collect(out, prefix + ".wk");
    wv.collect(out, prefix + ".wv");
    wo.collect(out, prefix + ".wo");
}

Tensor multi_head_attention(const AttentionParams& p, const Tensor& query_seq,
                            const Tensor& kv_seq, const Tensor& mask,
                            const Tensor& proto_k, const Tensor& proto_v) {
    const int dh = query_seq.dim(1) / p.heads;
    Tensor qh = split_heads(p.wq.forward(query_seq), p.heads);
    Tensor kh = split_heads(p.wk.forward(kv_seq), p.heads);
    Tensor vh = split_heads(p.wv.forward(kv_seq), p.heads);
    if (proto_k.defined()) {
        kh = concat_batch_rows(proto_k, kh);
        vh = concat_batch_rows(proto_v, vh);
    }
    Tensor scores = affine(matmul(qh, kh, false, true),
                           1.0 / std::sqrt(static_cast<double>(dh)), 0.0);
    if (mask.defined()) scores = add(scores, mask);
    Tensor weights = softmax(scores, 2);
    Tensor ctx = merge_heads(matmul(weights, vh));
    return p.wo.forward(ctx);
}

TransformerBlock TransformerBlock::init(int dim, int heads, int ffn_mult,
                                        std::uint64_t seed,
                                        const std::string& path) {
    TransformerBlock b;
    b.attn = AttentionParams::init(dim, heads, seed, path + ".attn");
    b.ln_attn = LayerNormParams::init(dim, path + ".ln_attn");
    b.ln_ffn = LayerNormParams::init(dim, path + ".ln_ffn");
    b.ffn_in = LinearLayer::init(dim, dim * ffn_mult, seed, path + ".ffn_in");
    b.ffn_out = LinearLayer::init(dim * ffn_mult, dim, seed, path + ".ffn_out");
    return b;
}

Tensor TransformerBlock::forward(const Tensor& x, const Tensor& mask) const {
    Tensor attended = multi_head_attention(attn, x, x, mask);
    Tensor h = ln_attn.forward(add(attended, x));
    Tensor f = ffn_out.forward(relu(ffn_in.forward(h)));
    return ln_ffn.forward(add(f, h));
}

void TransformerBlock::collect(ParamRefs& out, const std::string& prefix) {
    attn.collect(out, prefix + ".attn");
    ln_attn.collect(out, prefix + ".ln_attn");
    ln_ffn.collect(out, prefix + ".ln_ffn");
    ffn_in.collect(out, prefix + ".ffn_in");
    ffn_out.collect(out, prefix + ".ffn_out");
}

}  // namespace kmdx
