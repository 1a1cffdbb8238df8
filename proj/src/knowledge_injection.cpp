#include "kmdx/knowledge_injection.hpp"

namespace kmdx {

KagParams KagParams::init(int dim, int heads, std::uint64_t seed,
                          const std::string& path) {
    KagParams p;
    p.ca = AttentionParams::init(dim, heads, seed, path + ".ca");
    p.gate_w = init_uniform({dim, dim}, dim, seed, path + ".gate_w");
    // Positive bias keeps early training close to the data path.
    p.gate_b = init_const({dim}, 2.0, path + ".gate_b");
    p.ln = LayerNormParams::init(dim, path + ".ln");
    return p;
}

void KagParams::collect(ParamRefs& out, const std::string& prefix) {
    ca.collect(out, prefix + ".ca");
    out.emplace_back(prefix + ".gate_w", &gate_w);
    out.emplace_back(prefix + ".gate_b", &gate_b);
    ln.collect(out, prefix + ".ln");
}

KagOutput kag(const KagParams& p, const Tensor& h_in,
              const Tensor& h_knowledge, bool gated) {
    if (!h_knowledge.defined() || h_knowledge.dim(0) == 0)
        throw ContractError("kag: knowledge sequence is empty (n_K >= 1)");
    KagOutput o;
    o.attended = multi_head_attention(p.ca, h_in, h_knowledge);
    if (!gated) {
        o.pre_ln = add(o.attended, h_in);
        o.out = p.ln.forward(o.pre_ln);
        return o;
    }
    o.gate = sigmoid(add(matmul(h_in, p.gate_w), p.gate_b));
    Tensor inverse_gate = affine(o.gate, -1.0, 1.0);
    o.pre_ln = add(mul(o.gate, h_in), mul(inverse_gate, o.attended));
    o.out = p.ln.forward(o.pre_ln);
    return o;
}

KnowledgeLayer KnowledgeLayer::init(const ModelConfig& cfg,
                                    std::uint64_t seed,
                                    const std::string& path) {
    KnowledgeLayer l;
    l.sa = AttentionParams::init(cfg.embed_dim, cfg.heads, seed, path + ".sa");
    l.ln_sa = LayerNormParams::init(cfg.embed_dim, path + ".ln_sa");
    l.gate = KagParams::init(cfg.embed_dim, cfg.heads, seed, path + ".kag");
    l.ffn_in = LinearLayer::init(cfg.embed_dim, cfg.embed_dim * cfg.ffn_mult,
                                 seed, path + ".ffn_in");
    l.ffn_out = LinearLayer::init(cfg.embed_dim * cfg.ffn_mult, cfg.embed_dim,
                                  seed, path + ".ffn_out");
    l.ln_ffn = LayerNormParams::init(cfg.embed_dim, path + ".ln_ffn");
    return l;
}

Tensor KnowledgeLayer::forward(const Tensor& h, const Tensor& h_knowledge,
                               bool gated) const {
    // self-attention with residual, then LN
    Tensor sa_out = multi_head_attention(sa, h, h);
    Tensor h1 = ln_sa.forward(add(sa_out, h));
    // knowledge gating
    Tensor h2 = kag(gate, h1, h_knowledge, gated).out;
    // FFN with residual, then LN
    Tensor f = ffn_out.forward(relu(ffn_in.forward(h2)));
    return ln_ffn.forward(add(f, h2));
}

void KnowledgeLayer::collect(ParamRefs& out, const std::string& prefix) {
    sa.collect(out, prefix + ".sa");
    ln_sa.collect(out, prefix + ".ln_sa");
    gate.collect(out, prefix + ".kag");
    ffn_in.collect(out, prefix + ".ffn_in");
    ffn_out.collect(out, prefix + ".ffn_out");
    ln_ffn.collect(out, prefix + ".ln_ffn");
}

KnowledgeStack KnowledgeStack::init(const ModelConfig& cfg,
                                    std::uint64_t seed,
                                    const std::string& path) {
    KnowledgeStack s;
    for (int l = 0; l < cfg.kl_layers; ++l)
        s.layers.push_back(KnowledgeLayer::init(
            cfg, seed, path + ".layer" + std::to_string(l)));
    return s;
}

Tensor KnowledgeStack::forward(const Tensor& joint,
                               const Tensor& h_knowledge) const {
    Tensor h = joint;
    for (const auto& layer : layers) h = layer.forward(h, h_knowledge, gated);
    return h;
}

void KnowledgeStack::collect(ParamRefs& out, const std::string& prefix) {
    for (size_t l = 0; l < layers.size(); ++l)
        layers[l].collect(out, prefix + ".layer" + std::to_string(l));
}

Tensor build_joint_sequence(const Tensor& h_image, const Tensor& h_text) {
    if (h_image.dim(1) != h_text.dim(1))
        throw ShapeError("joint sequence: embed widths " +
                         shape_str(h_image.shape()) + " vs " +
                         shape_str(h_text.shape()));
    return concat_rows({h_image, h_text});
}

FusedRepresentation fuse_cls(const Tensor& injected_joint, int image_len,
                             const Tensor& h_knowledge) {
    FusedRepresentation f;
    const int d = injected_joint.dim(1);
    Tensor h_img = slice_rows(injected_joint, 0, 1);
    Tensor h_txt = slice_rows(injected_joint, image_len, 1);
    Tensor h_kno = slice_rows(h_knowledge, 0, 1);
    f.tokens = concat_rows({h_img, h_txt, h_kno});
    f.flat = reshape(f.tokens, {3 * d});
    return f;
}

}  // namespace kmdx
