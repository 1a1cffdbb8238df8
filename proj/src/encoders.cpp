#include "kmdx/encoders.hpp"

#include "kmdx/tokenizer.hpp"

namespace kmdx {

namespace {

// Additive attention mask hiding PAD key columns from every query.
Tensor pad_mask(const std::vector<int>& ids) {
    bool any = false;
    for (int id : ids)
        if (id == kPadId) any = true;
    if (!any) return {};
    const int n = static_cast<int>(ids.size()) + 1;  // CLS at column 0
    std::vector<double> m(static_cast<size_t>(n) * n, 0.0);
    for (int j = 0; j < n - 1; ++j)
        if (ids[static_cast<size_t>(j)] == kPadId)
            for (int i = 0; i < n; ++i)
                m[static_cast<size_t>(i) * n + (j + 1)] = -1e30;
    return Tensor::from_data({n, n}, std::move(m));
}

}  // namespace

ImageEncoder ImageEncoder::init(const ModelConfig& cfg, std::uint64_t seed,
                                const std::string& path) {
    cfg.validate();
    ImageEncoder e;
    e.patch_side = cfg.patch_side;
    e.volume_side = cfg.volume_side;
    e.use_positional = cfg.use_positional;
    e.patch_embed = LinearLayer::init(cfg.patch_voxels(), cfg.embed_dim, seed,
                                      path + ".patch_embed");
    e.pos = init_zeros({1 + cfg.num_patches(), cfg.embed_dim}, path + ".pos");
    e.cls = init_uniform({cfg.embed_dim}, cfg.embed_dim, seed, path + ".cls");
    for (int l = 0; l < cfg.encoder_layers; ++l)
        e.blocks.push_back(TransformerBlock::init(
            cfg.embed_dim, cfg.heads, cfg.ffn_mult, seed,
            path + ".block" + std::to_string(l)));
    return e;
}

Tensor ImageEncoder::forward(const Tensor& volume) const {
    Tensor patches = patchify(volume, patch_side);
    Tensor x = patch_embed.forward(patches);
    Tensor seq = concat_rows({reshape(cls, {1, cls.dim(0)}), x});
    if (use_positional) seq = add(seq, pos);
    for (const auto& block : blocks) seq = block.forward(seq);
    return seq;
}

void ImageEncoder::collect(ParamRefs& out, const std::string& prefix) {
    patch_embed.collect(out, prefix + ".patch_embed");
    out.emplace_back(prefix + ".pos", &pos);
    out.emplace_back(prefix + ".cls", &cls);
    for (size_t l = 0; l < blocks.size(); ++l)
        blocks[l].collect(out, prefix + ".block" + std::to_string(l));
}

TextEncoder TextEncoder::init(const ModelConfig& cfg, std::uint64_t seed,
                              const std::string& path) {
    cfg.validate();
    TextEncoder e;
    e.max_text_len = cfg.max_text_len;
    e.use_positional = cfg.use_positional;
    e.token_embed = init_uniform({cfg.vocab_size, cfg.embed_dim},
                                 cfg.embed_dim, seed, path + ".token_embed");
    e.pos = init_zeros({1 + cfg.max_text_len, cfg.embed_dim}, path + ".pos");
    e.cls = init_uniform({cfg.embed_dim}, cfg.embed_dim, seed, path + ".cls");
    for (int l = 0; l < cfg.encoder_layers; ++l)
        e.blocks.push_back(TransformerBlock::init(
            cfg.embed_dim, cfg.heads, cfg.ffn_mult, seed,
            path + ".block" + std::to_string(l)));
    return e;
}

Tensor TextEncoder::forward(const std::vector<int>& ids) const {
    if (static_cast<int>(ids.size()) > max_text_len)
        throw InputError("text of " + std::to_string(ids.size()) +
                         " tokens exceeds max_text_len " +
                         std::to_string(max_text_len));
    Tensor x = gather_rows(token_embed, ids);  // validates id range
    Tensor seq = concat_rows({reshape(cls, {1, cls.dim(0)}), x});
    if (use_positional)
        seq = add(seq, slice_rows(pos, 0, static_cast<int>(ids.size()) + 1));
    Tensor mask = pad_mask(ids);
    for (const auto& block : blocks) seq = block.forward(seq, mask);
    return seq;
}

void TextEncoder::collect(ParamRefs& out, const std::string& prefix) {
    out.emplace_back(prefix + ".token_embed", &token_embed);
    out.emplace_back(prefix + ".pos", &pos);
    out.emplace_back(prefix + ".cls", &cls);
    for (size_t l = 0; l < blocks.size(); ++l)
        blocks[l].collect(out, prefix + ".block" + std::to_string(l));
}

ImageDecoder ImageDecoder::init(const ModelConfig& cfg, std::uint64_t seed,
                                const std::string& path) {
    ImageDecoder d;
    d.patch_side = cfg.patch_side;
    d.volume_side = cfg.volume_side;
    for (int l = 0; l < cfg.decoder_layers; ++l)
        d.blocks.push_back(TransformerBlock::init(
            cfg.embed_dim, cfg.heads, cfg.ffn_mult, seed,
            path + ".block" + std::to_string(l)));
    d.voxel_proj = LinearLayer::init(cfg.embed_dim, cfg.patch_voxels(), seed,
                                     path + ".voxel_proj");
    return d;
}

Tensor ImageDecoder::forward(const Tensor& h_image) const {
    Tensor h = h_image;
    for (const auto& block : blocks) h = block.forward(h);
    Tensor patches = voxel_proj.forward(slice_rows(h, 1, h.dim(0) - 1));
    return unpatchify(patches, volume_side, patch_side);
}

void ImageDecoder::collect(ParamRefs& out, const std::string& prefix) {
    for (size_t l = 0; l < blocks.size(); ++l)
        blocks[l].collect(out, prefix + ".block" + std::to_string(l));
    voxel_proj.collect(out, prefix + ".voxel_proj");
}

TextDecoder TextDecoder::init(const ModelConfig& cfg, std::uint64_t seed,
                              const std::string& path) {
    TextDecoder d;
    for (int l = 0; l < cfg.decoder_layers; ++l)
        d.blocks.push_back(TransformerBlock::init(
            cfg.embed_dim, cfg.heads, cfg.ffn_mult, seed,
            path + ".block" + std::to_string(l)));
    d.vocab_proj = LinearLayer::init(cfg.embed_dim, cfg.vocab_size, seed,
                                     path + ".vocab_proj");
    return d;
}

Tensor TextDecoder::forward(const Tensor& h_text) const {
    Tensor h = h_text;
    for (const auto& block : blocks) h = block.forward(h);
    return vocab_proj.forward(slice_rows(h, 1, h.dim(0) - 1));
}

void TextDecoder::collect(ParamRefs& out, const std::string& prefix) {
    for (size_t l = 0; l < blocks.size(); ++l)
        blocks[l].collect(out, prefix + ".block" + std::to_string(l));
    vocab_proj.collect(out, prefix + ".vocab_proj");
}

MomentumPair make_momentum(const ParamRefs& online, const std::string& prefix,
                           double coefficient) {
    MomentumPair pair;
    pair.online = online;
    pair.coefficient = coefficient;
    for (const auto& [name, tensor] : online)
        pair.shadow.push_back(clone_detached(*tensor, prefix + name));
    return pair;
}

void ema_update(MomentumPair& pair) {
    const double m = pair.coefficient;
    for (size_t i = 0; i < pair.online.size(); ++i) {
        const auto& theta = pair.online[i].second->data();
        auto& xi = pair.shadow[i].mutable_data();
        if (xi.size() != theta.size())
            throw ContractError("momentum shapes drifted at " +
                                pair.online[i].first);
        for (size_t j = 0; j < xi.size(); ++j)
            xi[j] = m * xi[j] + (1.0 - m) * theta[j];
    }
}

}  // namespace kmdx
