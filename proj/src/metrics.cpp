#include "kmdx/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "kmdx/common.hpp"

namespace kmdx {

std::optional<double> mann_whitney_auc(const std::vector<double>& scores,
                                       const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw ContractError("auc: score/label length mismatch");
    const size_t n = scores.size();
    long long n_pos = 0;
    for (int y : labels) n_pos += (y > 0);
    const long long n_neg = static_cast<long long>(n) - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return scores[a] < scores[b];
    });
    // Midranks over tied groups.
    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = (static_cast<double>(i) + static_cast<double>(j)) /
                               2.0 +
                           1.0;
        for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double rank_sum_pos = 0.0;
    for (size_t k = 0; k < n; ++k)
        if (labels[k] > 0) rank_sum_pos += rank[k];
    const double u = rank_sum_pos -
                     static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

Metrics compute_metrics(const std::vector<double>& scores,
                        const std::vector<int>& labels, double threshold) {
    if (scores.size() != labels.size() || scores.empty())
        throw ContractError("metrics: empty or mismatched inputs");
    Metrics m;
    for (size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        const bool truth = labels[i] > 0;
        if (pred && truth) ++m.tp;
        else if (pred && !truth) ++m.fp;
        else if (!pred && truth) ++m.fn;
        else ++m.tn;
    }
    const long long total = m.tp + m.tn + m.fp + m.fn;
    m.acc = static_cast<double>(m.tp + m.tn) / total;
    m.sen = (m.tp + m.fn) > 0
                ? static_cast<double>(m.tp) / (m.tp + m.fn)
                : 0.0;
    m.spe = (m.tn + m.fp) > 0
                ? static_cast<double>(m.tn) / (m.tn + m.fp)
                : 0.0;
    m.auc = mann_whitney_auc(scores, labels);
    return m;
}

}  // namespace kmdx
