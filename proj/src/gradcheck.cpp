#include "kmdx/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

namespace kmdx {

std::string GradCheckReport::summary() const {
    char buf[160];
    std::string out;
    for (const auto& e : entries) {
        std::snprintf(buf, sizeof(buf), "%-40s max_rel_err=%.3e %s\n",
                      e.name.c_str(), e.max_rel_err,
                      e.pass ? "ok" : "FAIL");
        out += buf;
    }
    std::snprintf(buf, sizeof(buf), "overall max_rel_err=%.3e %s\n",
                  max_rel_err, pass ? "ok" : "FAIL");
    out += buf;
    return out;
}

GradCheckReport finite_difference_check(
    const std::function<Tensor()>& loss_fn,
    const std::vector<std::pair<std::string, Tensor>>& params, double step,
    double tolerance) {
    // Determinism probe: two untaped forward passes must agree bit-exactly.
    double v1, v2;
    {
        NoTapeScope off;
        v1 = loss_fn().item();
        v2 = loss_fn().item();
    }
    if (std::memcmp(&v1, &v2, sizeof(double)) != 0)
        throw ContractError(
            "finite_difference_check: loss function is not deterministic");

    // Analytic gradients.
    std::vector<std::vector<double>> analytic;
    {
        for (const auto& [name, p] : params) p.node()->grad.clear();
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = loss_fn();
        tape.backward(loss);
        for (const auto& [name, p] : params) analytic.push_back(p.grad());
    }

    GradCheckReport report;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        const auto& [name, p] = params[pi];
        GradCheckEntry entry;
        entry.name = name;
        auto& data = p.node()->value;
        for (size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            double fp, fm;
            {
                NoTapeScope off;
                data[i] = saved + step;
                fp = loss_fn().item();
                data[i] = saved - step;
                fm = loss_fn().item();
            }
            data[i] = saved;
            const double fd = (fp - fm) / (2.0 * step);
            const double an = analytic[pi][i];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
            const double rel = std::abs(fd - an) / denom;
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_index = static_cast<long long>(i);
            }
        }
        entry.pass = entry.max_rel_err < tolerance;
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.pass = report.pass && entry.pass;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace kmdx
