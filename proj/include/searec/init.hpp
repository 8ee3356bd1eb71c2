#pragma once

#include <cmath>
#include <random>

#include "searec/tensor.hpp"

namespace searec {

template <typename Real>
double xavier_bound(const Tensor<Real>& t) {
    double fan_in, fan_out;
    if (t.rank() == 2) {
        fan_in = static_cast<double>(t.shape[0]);
        fan_out = static_cast<double>(t.shape[1]);
    } else {
        double last = t.shape.empty() ? 1.0 : static_cast<double>(t.shape.back());
        fan_in = fan_out = last;
    }
    return std::sqrt(6.0 / (fan_in + fan_out));
}

template <typename Real>
void xavier_fill(Tensor<Real>& t, std::uint64_t seed) {
    double b = xavier_bound(t);
    std::mt19937_64 rng(seed);
    for (Real& v : t.values) v = static_cast<Real>(uniform_real(rng, -b, b));
}

}  // namespace searec
