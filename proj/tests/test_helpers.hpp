#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "diffcl/autograd.hpp"
#include "diffcl/rng.hpp"

namespace diffcl::testing {

// Central-difference gradient check against the tape. Rebuilds the graph via
// `forward` (params must be captured by the callable) and compares d(loss)/dp
// for the listed (param, flat index) entries.
struct GradCheckEntry {
    NodePtr param;
    std::size_t index;
};

struct GradCheckResult {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::size_t worst_entry = 0;
    bool ok(double rel_tol) const { return max_rel_err <= rel_tol; }
};

inline GradCheckResult grad_check(const std::function<NodePtr()>& forward,
                                  const std::vector<GradCheckEntry>& entries,
                                  double h = 1e-5) {
    // analytic pass
    for (const auto& e : entries) e.param->zero_grad();
    NodePtr loss = forward();
    backward(loss);
    std::vector<double> analytic(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        analytic[i] = e.param->grad.numel() ? e.param->grad.data[e.index] : 0.0;
    }
    GradCheckResult res;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        const double orig = e.param->value.data[e.index];
        e.param->value.data[e.index] = orig + h;
        const double lp = forward()->value.data[0];
        e.param->value.data[e.index] = orig - h;
        const double lm = forward()->value.data[0];
        e.param->value.data[e.index] = orig;
        const double fd = (lp - lm) / (2.0 * h);
        const double abs_err = std::abs(fd - analytic[i]);
        const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-8});
        const double rel = abs_err / denom;
        if (rel > res.max_rel_err) {
            res.max_rel_err = rel;
            res.worst_entry = i;
        }
        res.max_abs_err = std::max(res.max_abs_err, abs_err);
    }
    for (const auto& e : entries) e.param->zero_grad();
    return res;
}

// picks `count` deterministic random entries across the given params
inline std::vector<GradCheckEntry> sample_entries(const std::vector<NodePtr>& params,
                                                  std::size_t count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<GradCheckEntry> out;
    if (params.empty()) return out;
    for (std::size_t i = 0; i < count; ++i) {
        const auto& p = params[rng.index(params.size())];
        out.push_back({p, rng.index(p->value.numel())});
    }
    return out;
}

}  // namespace diffcl::testing
