#include "kmdx/optimizer.hpp"

#include <cmath>

namespace kmdx {

AdamW::AdamW(const ParamRefs& params, AdamWConfig cfg) : cfg_(cfg) {
    for (const auto& [name, p] : params) {
        m_.emplace_back(p->data().size(), 0.0);
        v_.emplace_back(p->data().size(), 0.0);
    }
}

void AdamW::step(const ParamRefs& params) {
    if (params.size() != m_.size())
        throw ContractError("optimizer sees a different parameter count");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i].second;
        const std::vector<double> g = p.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        if (g.size() != m.size())
            throw ContractError("gradient shape drifted for " +
                                params[i].first);
        auto& w = p.mutable_data();
        for (size_t j = 0; j < w.size(); ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            const double update =
                m_hat / (std::sqrt(v_hat) + cfg_.eps) +
                cfg_.weight_decay * w[j];
            w[j] = round_f32(w[j] - cfg_.lr * update);
        }
    }
}

void AdamW::restore(long long t, std::vector<std::vector<double>> m,
                    std::vector<std::vector<double>> v) {
    if (m.size() != m_.size() || v.size() != v_.size())
        throw ContractError("optimizer restore: state layout mismatch");
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

}  // namespace kmdx
