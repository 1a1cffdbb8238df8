#pragma once

#include <optional>
#include <vector>

namespace kmdx {

struct Metrics {
    double acc = 0.0;
    double sen = 0.0;
    double spe = 0.0;
    std::optional<double> auc;  // empty when only one class is present
    long long tp = 0, tn = 0, fp = 0, fn = 0;
};

// Mann-Whitney rank statistic with midrank tie correction; empty optional
// when a class is missing.
std::optional<double> mann_whitney_auc(const std::vector<double>& scores,
                                       const std::vector<int>& labels);

// Confusion metrics at the given threshold on the positive-class score,
// plus AUC.
Metrics compute_metrics(const std::vector<double>& scores,
                        const std::vector<int>& labels,
                        double threshold = 0.5);

}  // namespace kmdx
