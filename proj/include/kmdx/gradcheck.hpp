#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kmdx/tensor.hpp"

namespace kmdx {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    long long worst_index = -1;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;
    bool pass = true;

    std::string summary() const;
};

// Central-difference check of reverse-mode gradients. loss_fn must be a
// deterministic scalar function of the given parameters; it is re-evaluated
// under perturbation of every parameter element. Two initial forward passes
// must agree bit-exactly or the check aborts with ContractError.
GradCheckReport finite_difference_check(
    const std::function<Tensor()>& loss_fn,
    const std::vector<std::pair<std::string, Tensor>>& params,
    double step = 1e-5, double tolerance = 1e-4);

}  // namespace kmdx
