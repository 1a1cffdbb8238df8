#pragma once

#include <string>
#include <vector>

#include "kmdx/model.hpp"
#include "kmdx/tokenizer.hpp"
#include "kmdx/trainer.hpp"

namespace kmdx {

struct ShapleyReport {
    std::vector<std::string> factors;  // maskable non-imaging factors
    std::vector<double> phi;           // exact Shapley values
    double baseline = 0.0;             // f(all masked)
    double full = 0.0;                 // f(nothing masked)
    double efficiency_gap = 0.0;       // |sum(phi) - (full - baseline)|

    std::string text() const;
};

// Exact Shapley values of the positive-class probability over all 2^n
// factor coalitions. Masking a factor replaces its sentence with the
// unknown rendering and drops its knowledge entry. Refuses more than
// `factor_limit` maskable factors (group them instead); never samples.
// The efficiency axiom is checked on every report.
ShapleyReport exact_shapley(const Model& model, const FactorRecord& record,
                            const FactorSchema& schema,
                            const KnowledgeBank& bank, const Vocab& vocab,
                            int factor_limit = 12);

}  // namespace kmdx
