#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "searec/registry.hpp"
#include "searec/tape.hpp"

namespace searec {

struct GradCheckEntry {
    std::string param;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    bool pass = false;
    GradCheckEntry worst;
    std::vector<GradCheckEntry> failures;  // entries above tolerance
};

// Central-difference check of d(loss)/d(theta) for every parameter component
// (optionally a strided subset per tensor). The loss function must be a pure
// function of the parameters: callers disable dropout and fix all sampling
// before handing it over. Relative error uses |a - n| / max(|a| + |n|, floor)
// so components whose true gradient is zero compare at an absolute scale.
template <typename Real>
GradCheckReport grad_check(const std::function<TensorPtr<Real>(Tape<Real>&)>& loss_fn,
                           ParamRegistry<Real>& registry, double h = 1e-5, double tol = 1e-4,
                           std::size_t max_per_param = 0, double denom_floor = 1e-3) {
    registry.zero_grads();
    Tape<Real> tape;
    tape.training = false;
    auto loss = loss_fn(tape);
    if (loss->numel() != 1) throw ShapeError("grad_check: loss must be scalar");
    tape.backward(loss);

    std::vector<std::vector<Real>> analytic;
    analytic.reserve(registry.params().size());
    for (auto& kv : registry.params()) {
        kv.second->ensure_grad();
        analytic.push_back(kv.second->grad);
    }
    registry.zero_grads();

    auto eval = [&]() -> double {
        Tape<Real> t;
        t.training = false;
        t.grad_enabled = false;
        return static_cast<double>(loss_fn(t)->scalar());
    };

    GradCheckReport report;
    report.pass = true;
    for (std::size_t pi = 0; pi < registry.params().size(); ++pi) {
        Tensor<Real>& p = *registry.params()[pi].second;
        std::size_t n = p.numel();
        std::size_t stride = 1;
        if (max_per_param > 0 && n > max_per_param) stride = (n + max_per_param - 1) / max_per_param;
        for (std::size_t i = 0; i < n; i += stride) {
            Real orig = p.values[i];
            p.values[i] = static_cast<Real>(static_cast<double>(orig) + h);
            double up = eval();
            p.values[i] = static_cast<Real>(static_cast<double>(orig) - h);
            double down = eval();
            p.values[i] = orig;

            double numeric = (up - down) / (2.0 * h);
            double a = static_cast<double>(analytic[pi][i]);
            double denom = std::abs(a) + std::abs(numeric);
            if (denom < denom_floor) denom = denom_floor;
            double rel = std::abs(a - numeric) / denom;

            report.checked += 1;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = {registry.params()[pi].first, i, a, numeric, rel};
            }
            if (rel > tol) {
                report.pass = false;
                if (report.failures.size() < 32)
                    report.failures.push_back({registry.params()[pi].first, i, a, numeric, rel});
            }
        }
    }
    return report;
}

}  // namespace searec
