#pragma once

#include <string>

#include "kmdx/common.hpp"

namespace kmdx {

struct ModelConfig {
    int embed_dim = 64;
    int heads = 4;
    int encoder_layers = 2;
    int decoder_layers = 2;
    int kl_layers = 2;
    int mem_layers = 2;
    int volume_side = 32;
    int patch_side = 8;
    int vocab_size = 512;
    int max_text_len = 128;
    int num_classes = 2;

    int ffn_mult = 4;   // FFN hidden width = ffn_mult * embed_dim
    int proj_dim = 32;  // contrastive projection space
    // Learned positional embeddings; switched off by permutation-invariance
    // tests.
    bool use_positional = true;

    int patches_per_side() const { return volume_side / patch_side; }
    int num_patches() const {
        const int g = patches_per_side();
        return g * g * g;
    }
    int patch_voxels() const { return patch_side * patch_side * patch_side; }

    void validate() const {
        if (volume_side <= 0 || patch_side <= 0 ||
            volume_side % patch_side != 0)
            throw ConfigError("volume_side " + std::to_string(volume_side) +
                              " not divisible by patch_side " +
                              std::to_string(patch_side));
        if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0)
            throw ConfigError("embed_dim " + std::to_string(embed_dim) +
                              " not divisible by heads " +
                              std::to_string(heads));
        if (vocab_size <= 4 || max_text_len <= 0 || num_classes < 2)
            throw ConfigError("invalid vocab/text/class configuration");
    }

    static ModelConfig toy() { return ModelConfig{}; }

    // Published-scale preset; constructible for fidelity, far beyond desk
    // budgets to train.
    static ModelConfig paper_scale() {
        ModelConfig c;
        c.embed_dim = 768;
        c.heads = 12;
        c.encoder_layers = 12;
        c.decoder_layers = 6;
        c.kl_layers = 6;
        c.mem_layers = 6;
        c.volume_side = 128;
        c.patch_side = 16;
        c.max_text_len = 512;
        return c;
    }

    static ModelConfig preset(const std::string& name) {
        if (name == "toy") return toy();
        if (name == "paper-scale") return paper_scale();
        throw ConfigError("unknown preset '" + name +
                          "', expected toy or paper-scale");
    }
};

}  // namespace kmdx
