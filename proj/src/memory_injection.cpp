#include "kmdx/memory_injection.hpp"

#include <cmath>

#include "kmdx/log.hpp"
#include "kmdx/rng.hpp"

namespace kmdx {

MemoryBank::MemoryBank(int capacity) : capacity_(capacity) {
    if (capacity <= 0)
        throw ConfigError("memory bank capacity must be positive");
}

void MemoryBank::push(KvBatch batch) {
    if (batch.rows <= 0 || batch.dim <= 0 ||
        batch.keys.size() != static_cast<size_t>(batch.rows) * batch.dim ||
        batch.values.size() != batch.keys.size())
        throw ContractError("memory bank push: malformed batch");
    if (!entries_.empty() && (entries_.front().rows != batch.rows ||
                              entries_.front().dim != batch.dim))
        throw ContractError(
            "memory bank push: shape drift, expected " +
            std::to_string(entries_.front().rows) + "x" +
            std::to_string(entries_.front().dim) + ", got " +
            std::to_string(batch.rows) + "x" + std::to_string(batch.dim));
    entries_.push_front(std::move(batch));
    while (static_cast<int>(entries_.size()) > capacity_) entries_.pop_back();
}

int MemoryBank::total_rows() const {
    int rows = 0;
    for (const auto& e : entries_) rows += e.rows;
    return rows;
}

void MemoryBank::flatten(std::vector<double>& keys,
                         std::vector<double>& values) const {
    keys.clear();
    values.clear();
    for (const auto& e : entries_) {  // newest first
        keys.insert(keys.end(), e.keys.begin(), e.keys.end());
        values.insert(values.end(), e.values.begin(), e.values.end());
    }
}

MemLayer MemLayer::init(const ModelConfig& cfg, const MemoryConfig& mcfg,
                        std::uint64_t seed, const std::string& path) {
    MemLayer l;
    l.attn = AttentionParams::init(cfg.embed_dim, cfg.heads, seed,
                                   path + ".attn");
    l.ln_attn = LayerNormParams::init(cfg.embed_dim, path + ".ln_attn");
    l.ln_ffn = LayerNormParams::init(cfg.embed_dim, path + ".ln_ffn");
    l.ffn_in = LinearLayer::init(cfg.embed_dim, cfg.embed_dim * cfg.ffn_mult,
                                 seed, path + ".ffn_in");
    l.ffn_out = LinearLayer::init(cfg.embed_dim * cfg.ffn_mult, cfg.embed_dim,
                                  seed, path + ".ffn_out");
    for (int h = 0; h < cfg.heads; ++h) {
        l.banks.emplace_back(mcfg.window);
        l.protos.emplace_back();
        l.protos.back().dim = cfg.embed_dim / cfg.heads;
    }
    return l;
}

Tensor MemLayer::proto_key_tensor() const {
    const int heads = static_cast<int>(protos.size());
    const int m = protos.empty() ? 0 : protos[0].count;
    if (m == 0) return {};
    const int dh = protos[0].dim;
    std::vector<double> buf;
    buf.reserve(static_cast<size_t>(heads) * m * dh);
    for (const auto& p : protos)
        buf.insert(buf.end(), p.keys.begin(), p.keys.end());
    return Tensor::from_data({heads, m, dh}, std::move(buf));
}

Tensor MemLayer::proto_value_tensor() const {
    const int heads = static_cast<int>(protos.size());
    const int m = protos.empty() ? 0 : protos[0].count;
    if (m == 0) return {};
    const int dh = protos[0].dim;
    std::vector<double> buf;
    buf.reserve(static_cast<size_t>(heads) * m * dh);
    for (const auto& p : protos)
        buf.insert(buf.end(), p.values.begin(), p.values.end());
    return Tensor::from_data({heads, m, dh}, std::move(buf));
}

Tensor MemLayer::forward(const Tensor& seq, KvCollector* collector) const {
    const int heads = attn.heads;
    const int n = seq.dim(0);
    const int dh = seq.dim(1) / heads;
    // Projected keys/values are both the attention inputs and the stream
    // that feeds the banks.
    Tensor qh = split_heads(attn.wq.forward(seq), heads);
    Tensor kh = split_heads(attn.wk.forward(seq), heads);
    Tensor vh = split_heads(attn.wv.forward(seq), heads);
    if (collector != nullptr) {
        if (collector->heads == 0) {
            collector->heads = heads;
            collector->dim = dh;
            collector->keys.resize(static_cast<size_t>(heads));
            collector->values.resize(static_cast<size_t>(heads));
        }
        for (int h = 0; h < heads; ++h) {
            const size_t base = static_cast<size_t>(h) * n * dh;
            auto& ck = collector->keys[static_cast<size_t>(h)];
            auto& cv = collector->values[static_cast<size_t>(h)];
            ck.insert(ck.end(), kh.data().begin() + base,
                      kh.data().begin() + base + static_cast<size_t>(n) * dh);
            cv.insert(cv.end(), vh.data().begin() + base,
                      vh.data().begin() + base + static_cast<size_t>(n) * dh);
        }
    }
    // Prototype-prefixed attention; prototypes are constants, never taped.
    Tensor pk = proto_key_tensor();
    if (pk.defined()) {
        kh = concat_batch_rows(pk, kh);
        vh = concat_batch_rows(proto_value_tensor(), vh);
    }
    Tensor scores = affine(matmul(qh, kh, false, true),
                           1.0 / std::sqrt(static_cast<double>(dh)), 0.0);
    Tensor ctx = merge_heads(matmul(softmax(scores, 2), vh));
    Tensor attended = attn.wo.forward(ctx);
    Tensor h1 = ln_attn.forward(add(attended, seq));
    Tensor f = ffn_out.forward(relu(ffn_in.forward(h1)));
    return ln_ffn.forward(add(f, h1));
}

void MemLayer::collect(ParamRefs& out, const std::string& prefix) {
    attn.collect(out, prefix + ".attn");
    ln_attn.collect(out, prefix + ".ln_attn");
    ln_ffn.collect(out, prefix + ".ln_ffn");
    ffn_in.collect(out, prefix + ".ffn_in");
    ffn_out.collect(out, prefix + ".ffn_out");
}

ClassifierHead ClassifierHead::init(const ModelConfig& cfg,
                                    std::uint64_t seed,
                                    const std::string& path) {
    ClassifierHead h;
    h.fc1 = LinearLayer::init(cfg.embed_dim, cfg.embed_dim, seed,
                              path + ".fc1");
    h.fc2 = LinearLayer::init(cfg.embed_dim, cfg.num_classes, seed,
                              path + ".fc2");
    return h;
}

Tensor ClassifierHead::forward(const Tensor& seq) const {
    Tensor pooled = reshape(mean_rows(seq), {1, seq.dim(1)});
    Tensor logits = fc2.forward(relu(fc1.forward(pooled)));
    return softmax(logits, 1);
}

void ClassifierHead::collect(ParamRefs& out, const std::string& prefix) {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
}

MemoryStack MemoryStack::init(const ModelConfig& cfg,
                              const MemoryConfig& mcfg, std::uint64_t seed,
                              const std::string& path) {
    MemoryStack s;
    s.mcfg = mcfg;
    for (int l = 0; l < cfg.mem_layers; ++l)
        s.layers.push_back(MemLayer::init(
            cfg, mcfg, seed, path + ".layer" + std::to_string(l)));
    return s;
}

Tensor MemoryStack::forward(const Tensor& seq,
                            std::vector<KvCollector>* collectors) const {
    if (collectors != nullptr && collectors->size() != layers.size())
        collectors->resize(layers.size());
    Tensor h = seq;
    for (size_t l = 0; l < layers.size(); ++l)
        h = layers[l].forward(
            h, collectors != nullptr ? &(*collectors)[l] : nullptr);
    return h;
}

void MemoryStack::push_batch(const std::vector<KvCollector>& collectors) {
    if (collectors.size() != layers.size())
        throw ContractError("push_batch: collector count mismatch");
    ++push_counter;
    for (size_t l = 0; l < layers.size(); ++l) {
        const KvCollector& c = collectors[l];
        for (int h = 0; h < c.heads; ++h) {
            KvBatch batch;
            batch.iteration = push_counter;
            batch.dim = c.dim;
            batch.rows =
                static_cast<int>(c.keys[static_cast<size_t>(h)].size()) / c.dim;
            batch.keys = c.keys[static_cast<size_t>(h)];
            batch.values = c.values[static_cast<size_t>(h)];
            layers[l].banks[static_cast<size_t>(h)].push(std::move(batch));
        }
    }
}

bool MemoryStack::refresh(std::uint64_t seed, long long epoch,
                          long long batch_idx) {
    bool any_content = false;
    for (const auto& layer : layers)
        for (const auto& bank : layer.banks)
            if (!bank.empty()) any_content = true;
    if (!any_content) {
        log_warn("prototype refresh skipped: memory banks empty (warm-up)");
        return false;
    }
    for (size_t l = 0; l < layers.size(); ++l) {
        MemLayer& layer = layers[l];
        for (size_t h = 0; h < layer.banks.size(); ++h) {
            std::vector<double> keys, values;
            layer.banks[h].flatten(keys, values);
            const int dh = layer.banks[h].entries().front().dim;
            const int n = static_cast<int>(keys.size()) / dh;
            int m = mcfg.prototypes;
            if (m > n) {
                log_warn("prototype count " + std::to_string(m) +
                         " clamped to bank population " + std::to_string(n));
                m = n;
            }
            const std::uint64_t sub_seed = splitmix64(
                seed ^ hash_tag("refresh:" + std::to_string(epoch) + ":" +
                                std::to_string(batch_idx) + ":" +
                                std::to_string(l) + ":" + std::to_string(h)));
            KMeansResult km =
                kmeans(keys, n, dh, m, sub_seed, mcfg.kmeans_restarts,
                       mcfg.kmeans_max_iters, mcfg.kmeans_tol);
            PrototypeMemory& proto = layer.protos[h];
            proto.count = m;
            proto.dim = dh;
            proto.keys = km.centroids;
            proto.values =
                value_prototypes(km.centroids, m, dh, keys, values, n,
                                 mcfg.top_k, mcfg.normalize_weights);
            proto.built_epoch = epoch;
            proto.built_batch = batch_idx;
        }
    }
    return true;
}

void MemoryStack::collect(ParamRefs& out, const std::string& prefix) {
    for (size_t l = 0; l < layers.size(); ++l)
        layers[l].collect(out, prefix + ".layer" + std::to_string(l));
}

bool refresh_due(long long batch_idx, long long batches_per_epoch) {
    return batch_idx == 0 || batch_idx == batches_per_epoch / 2;
}

}  // namespace kmdx
