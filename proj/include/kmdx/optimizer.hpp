#pragma once

#include <vector>

#include "kmdx/layers.hpp"

namespace kmdx {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Adam with decoupled weight decay. Parameter values are snapped back to the
// float32 grid after every update so checkpointed state round-trips exactly.
class AdamW {
 public:
    AdamW() = default;
    AdamW(const ParamRefs& params, AdamWConfig cfg);

    void step(const ParamRefs& params);

    long long step_count() const { return t_; }
    const AdamWConfig& config() const { return cfg_; }
    const std::vector<std::vector<double>>& m() const { return m_; }
    const std::vector<std::vector<double>>& v() const { return v_; }
    void restore(long long t, std::vector<std::vector<double>> m,
                 std::vector<std::vector<double>> v);

 private:
    AdamWConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    long long t_ = 0;
};

}  // namespace kmdx
