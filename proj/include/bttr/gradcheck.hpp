#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bttr/ops.hpp"
#include "bttr/tensor.hpp"

namespace bttr {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0;
    std::int64_t worst_index = -1;
    double analytic = 0;
    double numeric = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0;
    double tolerance = 0;
    bool ok = false;
    int resamples = 0;  // how many fresh sample points were needed
    std::string worst_param;
};

struct NamedParam {
    std::string name;
    Tensor tensor;
};

// Central finite differences against the analytic backward pass.
// err = |a - n| / max(|a|, |n|, 1), so near-zero gradients are compared
// absolutely and large ones relatively.
inline GradCheckReport gradcheck(const std::function<Tensor()>& build_loss, std::vector<NamedParam> params,
                                 double tolerance = 1e-3, double h = 1e-4) {
    GradCheckReport report;
    report.tolerance = tolerance;

    for (auto& p : params) p.tensor.zero_grad();
    Tensor loss = build_loss();
    backward(loss);

    std::vector<std::vector<real>> analytic;
    for (auto& p : params) analytic.push_back(p.tensor.grad());

    NoGradGuard ng;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        GradCheckEntry entry;
        entry.name = params[pi].name;
        auto& vals = params[pi].tensor.values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            real orig = vals[i];
            vals[i] = orig + h;
            real fp = build_loss().item();
            vals[i] = orig - h;
            real fm = build_loss().item();
            vals[i] = orig;
            double numeric = (fp - fm) / (2 * h);
            double a = analytic[pi][i];
            double denom = std::max({std::abs(a), std::abs(numeric), 1.0});
            double rel = std::abs(a - numeric) / denom;
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_index = static_cast<std::int64_t>(i);
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        if (entry.max_rel_err > report.max_rel_err) {
            report.max_rel_err = entry.max_rel_err;
            report.worst_param = entry.name;
        }
        report.entries.push_back(std::move(entry));
    }
    report.ok = report.max_rel_err <= tolerance;
    return report;
}

// Retries at fresh sample points when the first check lands on a
// non-differentiable point (e.g. a ReLU kink at exactly zero).
inline GradCheckReport gradcheck_resample(const std::function<std::vector<NamedParam>(RngState&)>& sample,
                                          const std::function<Tensor(std::vector<NamedParam>&)>& build_loss,
                                          RngState& rng, double tolerance = 1e-3, double h = 1e-4,
                                          int max_attempts = 5) {
    GradCheckReport report;
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        auto params = sample(rng);
        report = gradcheck([&]() { return build_loss(params); }, params, tolerance, h);
        report.resamples = attempt;
        if (report.ok) return report;
    }
    return report;
}

}  // namespace bttr
