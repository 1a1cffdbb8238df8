#pragma once

#include <vector>

#include "kmdx/config.hpp"
#include "kmdx/layers.hpp"

namespace kmdx {

// Unimodal encoders. Every output sequence carries the CLS embedding at
// row 0 followed by one row per patch/token.

struct ImageEncoder {
    LinearLayer patch_embed;  // patch voxels -> d
    Tensor pos;               // [1 + num_patches, d], zero-init
    Tensor cls;               // [d]
    std::vector<TransformerBlock> blocks;
    int patch_side = 0;
    int volume_side = 0;
    bool use_positional = true;

    static ImageEncoder init(const ModelConfig& cfg, std::uint64_t seed,
                             const std::string& path);
    // volume [S,S,S] -> [1 + (S/p)^3, d]
    Tensor forward(const Tensor& volume) const;
    void collect(ParamRefs& out, const std::string& prefix);
};

struct TextEncoder {
    Tensor token_embed;  // [vocab, d]
    Tensor pos;          // [1 + max_text_len, d], zero-init
    Tensor cls;          // [d]
    std::vector<TransformerBlock> blocks;
    int max_text_len = 0;
    bool use_positional = true;

    static TextEncoder init(const ModelConfig& cfg, std::uint64_t seed,
                            const std::string& path);
    // ids -> [1 + len, d]; PAD positions are masked out of attention, so
    // appended padding never changes live rows.
    Tensor forward(const std::vector<int>& ids) const;
    void collect(ParamRefs& out, const std::string& prefix);
};

// Reconstruction decoders (restorative branch).
struct ImageDecoder {
    std::vector<TransformerBlock> blocks;
    LinearLayer voxel_proj;  // d -> patch voxels
    int patch_side = 0;
    int volume_side = 0;

    static ImageDecoder init(const ModelConfig& cfg, std::uint64_t seed,
                             const std::string& path);
    // encoder output [1+n, d] -> reconstructed volume [S,S,S]
    Tensor forward(const Tensor& h_image) const;
    void collect(ParamRefs& out, const std::string& prefix);
};

struct TextDecoder {
    std::vector<TransformerBlock> blocks;
    LinearLayer vocab_proj;  // d -> vocab

    static TextDecoder init(const ModelConfig& cfg, std::uint64_t seed,
                            const std::string& path);
    // encoder output [1+len, d] -> per-position vocabulary logits [len, vocab]
    Tensor forward(const Tensor& h_text) const;
    void collect(ParamRefs& out, const std::string& prefix);
};

// Online parameters and their EMA shadows, kept in lockstep order. Shadows
// never receive gradients and are the sole producers of queue features.
struct MomentumPair {
    ParamRefs online;
    std::vector<Tensor> shadow;
    double coefficient = 0.995;
};

// Builds shadows as detached copies named "<prefix><name>".
MomentumPair make_momentum(const ParamRefs& online, const std::string& prefix,
                           double coefficient = 0.995);

// xi <- m_c * xi + (1 - m_c) * theta, elementwise, applied after the
// optimizer step.
void ema_update(MomentumPair& pair);

// Repoints every parameter tensor of a copied module at the shadow tensors,
// in collect() order. The copy then runs forward passes with EMA weights.
template <typename Module>
Module bind_momentum(const Module& online, MomentumPair& pair,
                     size_t& cursor) {
    Module shadow = online;
    ParamRefs refs;
    shadow.collect(refs, "");
    for (auto& [name, tensor] : refs) {
        if (cursor >= pair.shadow.size())
            throw ContractError("momentum shadow underrun at " + name);
        *tensor = pair.shadow[cursor++];
    }
    return shadow;
}

}  // namespace kmdx
