#pragma once

#include <deque>
#include <vector>

#include "kmdx/config.hpp"
#include "kmdx/kmeans.hpp"
#include "kmdx/layers.hpp"

namespace kmdx {

struct MemoryConfig {
    int window = 100;     // T, sliding window in iterations
    int prototypes = 16;  // m per head
    int top_k = 8;        // neighbors for value interpolation
    bool normalize_weights = false;  // Eq. 9 is an unnormalized sum
    int kmeans_restarts = 10;
    int kmeans_max_iters = 50;
    double kmeans_tol = 1e-6;
};

// One mini-batch worth of projected keys/values for a single head.
struct KvBatch {
    long long iteration = 0;
    int rows = 0;
    int dim = 0;
    std::vector<double> keys;    // rows x dim
    std::vector<double> values;  // rows x dim
};

// Sliding window over the last T pushed batches, newest first.
class MemoryBank {
 public:
    explicit MemoryBank(int capacity = 100);

    void push(KvBatch batch);  // throws ContractError on shape drift
    int size() const { return static_cast<int>(entries_.size()); }
    int capacity() const { return capacity_; }
    bool empty() const { return entries_.empty(); }
    const std::deque<KvBatch>& entries() const { return entries_; }

    int total_rows() const;
    // Contiguous newest-first key/value matrices.
    void flatten(std::vector<double>& keys, std::vector<double>& values) const;

 private:
    int capacity_;
    std::deque<KvBatch> entries_;  // front = newest
};

struct PrototypeMemory {
    int count = 0;  // 0 until the first refresh
    int dim = 0;
    std::vector<double> keys;    // count x dim
    std::vector<double> values;  // count x dim
    long long built_epoch = -1;
    long long built_batch = -1;
};

// Collects a batch's per-head keys/values across subjects before one bank
// push.
struct KvCollector {
    int heads = 0;
    int dim = 0;
    std::vector<std::vector<double>> keys;    // [head][rows*dim]
    std::vector<std::vector<double>> values;
};

// Memory-augmented attention layer over the fused 3-token sequence.
struct MemLayer {
    AttentionParams attn;
    LayerNormParams ln_attn, ln_ffn;
    LinearLayer ffn_in, ffn_out;

    std::vector<MemoryBank> banks;        // one per head
    std::vector<PrototypeMemory> protos;  // one per head

    static MemLayer init(const ModelConfig& cfg, const MemoryConfig& mcfg,
                         std::uint64_t seed, const std::string& path);
    // Residual+LN ordering: LN(PMM(Q,K,V)+Q), then LN(FFN(.)+.).
    // When `collector` is set (training), the subject's projected per-head
    // keys/values are appended for the batch-level bank push.
    Tensor forward(const Tensor& seq, KvCollector* collector) const;
    void collect(ParamRefs& out, const std::string& prefix);

    // Prototype prefixes as constant tensors; undefined before any refresh.
    Tensor proto_key_tensor() const;
    Tensor proto_value_tensor() const;
};

struct ClassifierHead {
    LinearLayer fc1, fc2;

    static ClassifierHead init(const ModelConfig& cfg, std::uint64_t seed,
                               const std::string& path);
    // mean over tokens -> ReLU MLP -> softmax probabilities
    Tensor forward(const Tensor& seq) const;
    void collect(ParamRefs& out, const std::string& prefix);
};

// The full memory stack plus refresh bookkeeping.
struct MemoryStack {
    MemoryConfig mcfg;
    std::vector<MemLayer> layers;
    long long push_counter = 0;  // iterations pushed so far

    static MemoryStack init(const ModelConfig& cfg, const MemoryConfig& mcfg,
                            std::uint64_t seed, const std::string& path);
    Tensor forward(const Tensor& seq,
                   std::vector<KvCollector>* collectors) const;
    // One bank push per layer/head from the collected batch.
    void push_batch(const std::vector<KvCollector>& collectors);
    // Rebuild every layer/head prototype set from current bank contents.
    // Returns false (skipped, warning logged) when banks are still empty.
    bool refresh(std::uint64_t seed, long long epoch, long long batch_idx);
    void collect(ParamRefs& out, const std::string& prefix);
};

// Twice per epoch: batch 0 and batch floor(B/2).
bool refresh_due(long long batch_idx, long long batches_per_epoch);

}  // namespace kmdx
