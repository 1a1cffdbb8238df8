#include "kmdx/shapley.hpp"

#include <cmath>
#include <cstdio>

namespace kmdx {

std::string ShapleyReport::text() const {
    char buf[160];
    std::string out;
    std::snprintf(buf, sizeof(buf),
                  "baseline=%.6f full=%.6f efficiency_gap=%.3e\n", baseline,
                  full, efficiency_gap);
    out += buf;
    for (size_t i = 0; i < factors.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%-28s %+.6f\n", factors[i].c_str(),
                      phi[i]);
        out += buf;
    }
    return out;
}

ShapleyReport exact_shapley(const Model& model, const FactorRecord& record,
                            const FactorSchema& schema,
                            const KnowledgeBank& bank, const Vocab& vocab,
                            int factor_limit) {
    ShapleyReport report;
    for (const auto& f : schema.non_imaging())
        report.factors.push_back(f.name);
    const int n = static_cast<int>(report.factors.size());
    if (n == 0) throw ConfigError("no maskable non-imaging factors");
    if (n > factor_limit)
        throw ConfigError(
            std::to_string(n) + " maskable factors exceed the exact budget " +
            std::to_string(factor_limit) +
            "; group related factors instead of sampling");

    // f(S) for every coalition S (bit i set = factor i unmasked).
    NoTapeScope off;
    const std::uint32_t n_coalitions = 1u << n;
    std::vector<double> value(n_coalitions);
    for (std::uint32_t s = 0; s < n_coalitions; ++s) {
        std::vector<std::string> masked;
        for (int i = 0; i < n; ++i)
            if (!(s & (1u << i)))
                masked.push_back(report.factors[static_cast<size_t>(i)]);
        SubjectInput in = make_subject_input(record, schema, bank, vocab,
                                             model.abl, masked);
        SubjectForward fwd = model.forward_subject(in, nullptr, false);
        value[s] = fwd.probs.data()[1];
    }
    report.baseline = value[0];
    report.full = value[n_coalitions - 1];

    // phi_i = sum_S |S|!(n-|S|-1)!/n! * (f(S+i) - f(S))
    std::vector<double> factorial(static_cast<size_t>(n) + 1, 1.0);
    for (int i = 1; i <= n; ++i)
        factorial[static_cast<size_t>(i)] =
            factorial[static_cast<size_t>(i - 1)] * i;
    std::vector<double> weight(static_cast<size_t>(n));
    for (int s = 0; s < n; ++s)
        weight[static_cast<size_t>(s)] =
            factorial[static_cast<size_t>(s)] *
            factorial[static_cast<size_t>(n - s - 1)] /
            factorial[static_cast<size_t>(n)];

    report.phi.assign(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        const std::uint32_t bit = 1u << i;
        for (std::uint32_t s = 0; s < n_coalitions; ++s) {
            if (s & bit) continue;
            const int size = __builtin_popcount(s);
            report.phi[static_cast<size_t>(i)] +=
                weight[static_cast<size_t>(size)] * (value[s | bit] - value[s]);
        }
    }

    double total = 0.0;
    for (double p : report.phi) total += p;
    report.efficiency_gap = std::abs(total - (report.full - report.baseline));
    if (report.efficiency_gap > 1e-9)
        throw NumericError("shapley efficiency axiom violated: gap " +
                           std::to_string(report.efficiency_gap));
    return report;
}

}  // namespace kmdx
