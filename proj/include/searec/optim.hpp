#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "searec/registry.hpp"

namespace searec {

// step^-0.5 decay with linear warmup, scaled by d^-0.5
inline double lr_at(long long step, std::size_t d, long long warmup) {
    if (step < 1) throw ConfigError("lr_at: step must be >= 1");
    if (warmup < 1) throw ConfigError("lr_at: warmup must be >= 1");
    if (d < 1) throw ConfigError("lr_at: model dim must be >= 1");
    double s = static_cast<double>(step);
    double w = static_cast<double>(warmup);
    double decay = 1.0 / std::sqrt(s);
    double ramp = s / (w * std::sqrt(w));
    return (decay < ramp ? decay : ramp) / std::sqrt(static_cast<double>(d));
}

template <typename Real>
struct Adam {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long long t = 0;
    // first/second moment per canonical parameter, keyed by registry name
    std::unordered_map<std::string, std::vector<Real>> m, v;

    void step(ParamRegistry<Real>& registry, double lr) {
        if (!(lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
        ++t;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (auto& kv : registry.params()) {
            Tensor<Real>& p = *kv.second;
            if (p.grad.empty()) p.ensure_grad();
            std::vector<Real>& mm = moments(m, kv.first, p.numel());
            std::vector<Real>& vv = moments(v, kv.first, p.numel());
            for (std::size_t i = 0; i < p.values.size(); ++i) {
                double g = static_cast<double>(p.grad[i]);
                double mi = beta1 * static_cast<double>(mm[i]) + (1.0 - beta1) * g;
                double vi = beta2 * static_cast<double>(vv[i]) + (1.0 - beta2) * g * g;
                mm[i] = static_cast<Real>(mi);
                vv[i] = static_cast<Real>(vi);
                double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps);
                p.values[i] = static_cast<Real>(static_cast<double>(p.values[i]) - update);
            }
        }
        registry.zero_grads();
    }

  private:
    static std::vector<Real>& moments(std::unordered_map<std::string, std::vector<Real>>& store,
                                      const std::string& name, std::size_t n) {
        auto it = store.find(name);
        if (it == store.end()) it = store.emplace(name, std::vector<Real>(n, Real(0))).first;
        if (it->second.size() != n)
            throw ConfigError("adam: stale moment size for " + name);
        return it->second;
    }
};

}  // namespace searec
