#pragma once

#include <vector>

#include "kmdx/config.hpp"
#include "kmdx/layers.hpp"

namespace kmdx {

// Gated knowledge cross-attention. The gate decides per token and channel
// how much of the data path passes through versus attended knowledge.
struct KagParams {
    AttentionParams ca;
    Tensor gate_w;  // [d, d]
    Tensor gate_b;  // [d], initialized positive to favor data passthrough
    LayerNormParams ln;

    static KagParams init(int dim, int heads, std::uint64_t seed,
                          const std::string& path);
    void collect(ParamRefs& out, const std::string& prefix);
};

struct KagOutput {
    Tensor out;       // LN(gate blend)
    Tensor pre_ln;    // g .* H + (1-g) .* attended
    Tensor gate;      // sigmoid(H W_g + b_g), every element in (0,1)
    Tensor attended;  // CA(H, K_K, V_K)
};

// gated=false degrades to the additive variant LN(CA + H) (ablation).
KagOutput kag(const KagParams& p, const Tensor& h_in,
              const Tensor& h_knowledge, bool gated = true);

// One knowledge-injection layer: joint self-attention with residual + LN,
// knowledge gating, then FFN with residual + LN.
struct KnowledgeLayer {
    AttentionParams sa;
    LayerNormParams ln_sa;
    KagParams gate;
    LinearLayer ffn_in, ffn_out;
    LayerNormParams ln_ffn;

    static KnowledgeLayer init(const ModelConfig& cfg, std::uint64_t seed,
                               const std::string& path);
    Tensor forward(const Tensor& h, const Tensor& h_knowledge,
                   bool gated) const;
    void collect(ParamRefs& out, const std::string& prefix);
};

struct KnowledgeStack {
    std::vector<KnowledgeLayer> layers;
    bool gated = true;  // false under --no-kag

    static KnowledgeStack init(const ModelConfig& cfg, std::uint64_t seed,
                               const std::string& path);
    Tensor forward(const Tensor& joint, const Tensor& h_knowledge) const;
    void collect(ParamRefs& out, const std::string& prefix);
};

// Joint multimodal sequence, image tokens first.
Tensor build_joint_sequence(const Tensor& h_image, const Tensor& h_text);

struct FusedRepresentation {
    Tensor tokens;  // [3, d]: image CLS, text CLS, knowledge CLS
    Tensor flat;    // [3d] concatenation
};

// Image/text CLS are read from the injected joint sequence (positions 0 and
// image_len); the knowledge CLS is the knowledge encoder's own.
FusedRepresentation fuse_cls(const Tensor& injected_joint, int image_len,
                             const Tensor& h_knowledge);

}  // namespace kmdx
