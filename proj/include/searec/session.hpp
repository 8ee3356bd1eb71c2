#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "searec/registry.hpp"
#include "searec/tape.hpp"

namespace searec {

// Session boundary predictor. Sequences are carved into up to N sessions; a
// small head reads per-chunk mean hidden states and emits a center offset and
// a half-length per session. Ranges live on the continuous axis [0, T] where
// position t occupies [t, t+1) and its midpoint is t + 0.5.

template <typename Real>
struct SessionParams {
    TensorPtr<Real> w;  // (N*d) x 2N, starts at zero so the initial layout is uniform
    TensorPtr<Real> b;  // N, starts at tanh^-1(0.5) so initial half-lengths span a chunk
};

// nearest double to atanh(0.5); tanh(bias) is 0.5 up to the last bit, which
// is why fresh parameters lay sessions out as (near-)uniform chunks
inline constexpr double kHalfLengthBias = 0.54930614433405489;

template <typename Real>
SessionParams<Real> build_session_params(ParamRegistry<Real>& reg, std::size_t n_sessions,
                                         std::size_t d) {
    SessionParams<Real> p;
    p.w = reg.add("session.w", make_tensor<Real>({n_sessions * d, 2 * n_sessions}));
    auto b = make_tensor<Real>({n_sessions});
    for (auto& v : b->values) v = static_cast<Real>(kHalfLengthBias);
    p.b = reg.add("session.b", b);
    return p;
}

inline std::size_t effective_sessions(std::size_t n_sessions, std::size_t t_valid) {
    if (t_valid == 0) throw DataError("session layout needs a non-empty sequence");
    if (n_sessions == 0) throw ConfigError("session count must be positive");
    return n_sessions < t_valid ? n_sessions : t_valid;
}

template <typename Real>
struct SessionRanges {
    std::size_t n = 0;
    std::size_t t_valid = 0;
    std::vector<TensorPtr<Real>> left, right;  // scalars, values in [0, t_valid]
};

// value-level snapshot for reporting and diagnostics
struct SessionLayout {
    std::size_t n = 0;
    std::size_t t_valid = 0;
    bool hard = false;
    std::vector<double> left, right;
    std::vector<std::vector<double>> weight;  // n x t_valid membership

    // midpoints between consecutive session ranges, length n - 1
    std::vector<double> internal_boundaries() const {
        std::vector<double> out;
        for (std::size_t i = 1; i < n; ++i) out.push_back(0.5 * (right[i - 1] + left[i]));
        return out;
    }
};

namespace detail {

// Shared arithmetic for both the uniform initial layout and the predicted
// layout: raw offsets in (-1, 1) scaled by T/2n, raw half-lengths in [0, 1)
// scaled by T/n, then clamped to the sequence and widened to at least one
// position. Keeping one code path makes "zero offsets reproduce the uniform
// layout" hold bit for bit.
template <typename Real>
SessionRanges<Real> assemble_ranges(Tape<Real>& tape, std::size_t t_valid, std::size_t n,
                                    const TensorPtr<Real>& dx_raw, const TensorPtr<Real>& s_raw) {
    double tv = static_cast<double>(t_valid);
    double nn = static_cast<double>(n);
    auto centers = make_tensor<Real>({n});
    for (std::size_t i = 0; i < n; ++i)
        centers->values[i] = static_cast<Real>((static_cast<double>(i) + 0.5) * (tv / nn));
    auto dx = tape.scale(dx_raw, tv / (2.0 * nn));
    auto s = tape.scale(s_raw, tv / nn);
    auto l_vec = tape.clamp(tape.add(centers, tape.sub(dx, s)), 0.0, tv);
    auto r_vec = tape.clamp(tape.add(centers, tape.add(dx, s)), 0.0, tv);

    SessionRanges<Real> out;
    out.n = n;
    out.t_valid = t_valid;
    for (std::size_t i = 0; i < n; ++i) {
        double lv = static_cast<double>(l_vec->values[i]);
        double rv = static_cast<double>(r_vec->values[i]);
        if (rv - lv >= 1.0) {
            out.left.push_back(tape.element(l_vec, i));
            out.right.push_back(tape.element(r_vec, i));
        } else {
            // Collapsed range: widen to one position around its midpoint. The
            // midpoint stays on the tape so the layout keeps a gradient even
            // when a session shrinks below one position; clamping it to
            // [0.5, tv - 0.5] reproduces the edge snapping exactly.
            auto mid = tape.scale(tape.add(tape.element(l_vec, i), tape.element(r_vec, i)), 0.5);
            auto mid_c = tape.clamp(mid, 0.5, tv - 0.5);
            out.left.push_back(tape.add(mid_c, make_scalar<Real>(Real(-0.5))));
            out.right.push_back(tape.add(mid_c, make_scalar<Real>(Real(0.5))));
        }
    }
    return out;
}

}  // namespace detail

// The layout the predictor emits when its linear map is zero: offsets vanish
// and half-lengths come from the bias alone. Computing it through the same
// tanh/relu arithmetic as predict_ranges keeps the two bitwise identical at
// initialization even though libm's tanh(bias) may be an ulp off 0.5.
template <typename Real>
SessionRanges<Real> init_uniform_ranges(Tape<Real>& tape, std::size_t t_valid,
                                        std::size_t n_sessions, const TensorPtr<Real>& bias) {
    std::size_t n = effective_sessions(n_sessions, t_valid);
    auto dx_raw = make_tensor<Real>({n});
    auto s_raw = tape.relu(tape.tanh_op(tape.slice_vec(bias, 0, n)));
    return detail::assemble_ranges(tape, t_valid, n, dx_raw, s_raw);
}

template <typename Real>
SessionRanges<Real> init_uniform_ranges(Tape<Real>& tape, std::size_t t_valid,
                                        std::size_t n_sessions) {
    std::size_t cap = n_sessions < t_valid ? n_sessions : t_valid;
    auto bias = make_tensor<Real>({cap == 0 ? 1 : cap});
    for (auto& v : bias->values) v = static_cast<Real>(kHalfLengthBias);
    return init_uniform_ranges(tape, t_valid, n_sessions, bias);
}

// chunk index of position t under the uniform split of t_valid rows into n
inline std::size_t uniform_chunk_of(std::size_t t, std::size_t t_valid, std::size_t n) {
    auto idx = static_cast<std::size_t>((static_cast<double>(t) + 0.5) * static_cast<double>(n) /
                                        static_cast<double>(t_valid));
    return idx >= n ? n - 1 : idx;
}

// Offsets and half-lengths from the hidden states: per-chunk means are
// concatenated, passed through ReLU and a linear map to 2n logits; tanh
// bounds the offsets, ReLU(tanh(. + b)) bounds the half-lengths. Short
// sequences use the leading n-session block of the parameters.
template <typename Real>
SessionRanges<Real> predict_ranges(Tape<Real>& tape, const SessionParams<Real>& params,
                                   const TensorPtr<Real>& h_valid, std::size_t n_sessions) {
    std::size_t t_valid = h_valid->shape[0];
    std::size_t d = h_valid->shape[1];
    std::size_t n_max = params.b->shape[0];
    std::size_t n = effective_sessions(n_sessions < n_max ? n_sessions : n_max, t_valid);

    std::vector<TensorPtr<Real>> means;
    std::size_t row = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t end = row;
        while (end < t_valid && uniform_chunk_of(end, t_valid, n) == i) ++end;
        if (end == row) throw NumericError("empty uniform chunk");  // cannot happen for n <= T
        means.push_back(tape.mean_rows(tape.slice_rows(h_valid, row, end)));
        row = end;
    }
    auto f_in = tape.relu(tape.concat_vec(means));
    auto w_rows = tape.slice_rows(params.w, 0, n * d);
    auto w_off = tape.slice_cols(w_rows, 0, n);
    auto w_len = tape.slice_cols(w_rows, n_max, n_max + n);
    auto dx_raw = tape.tanh_op(tape.vecmat(f_in, w_off));
    auto b_slice = tape.slice_vec(params.b, 0, n);
    auto s_raw = tape.relu(tape.tanh_op(tape.add(tape.vecmat(f_in, w_len), b_slice)));
    return detail::assemble_ranges(tape, t_valid, n, dx_raw, s_raw);
}

// ranges taken directly from timestamp gaps: the n-1 largest inter-interaction
// gaps split the sequence into contiguous segments (no learned parameters)
template <typename Real>
SessionRanges<Real> ranges_from_timestamps(Tape<Real>& tape, const std::vector<std::int64_t>& ts,
                                           std::size_t t_valid, std::size_t n_sessions) {
    std::size_t n = effective_sessions(n_sessions, t_valid);
    std::vector<std::pair<std::int64_t, std::size_t>> gaps;  // (gap size, boundary position)
    for (std::size_t t = 1; t < t_valid; ++t)
        gaps.emplace_back(ts[t] - ts[t - 1], t);
    std::sort(gaps.begin(), gaps.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    std::vector<std::size_t> cuts;
    for (std::size_t i = 0; i + 1 < n && i < gaps.size(); ++i) cuts.push_back(gaps[i].second);
    std::sort(cuts.begin(), cuts.end());
    cuts.push_back(t_valid);

    SessionRanges<Real> out;
    out.n = cuts.size();
    out.t_valid = t_valid;
    std::size_t start = 0;
    for (std::size_t cut : cuts) {
        out.left.push_back(make_scalar<Real>(static_cast<Real>(start)));
        out.right.push_back(make_scalar<Real>(static_cast<Real>(cut)));
        start = cut;
    }
    return out;
}

// soft membership of every position in every session
template <typename Real>
std::vector<TensorPtr<Real>> soft_membership(Tape<Real>& tape, const SessionRanges<Real>& ranges,
                                             double tau) {
    if (!(tau > 0.0)) throw ConfigError("membership temperature must be positive");
    std::size_t tv = ranges.t_valid;
    auto tpos = make_tensor<Real>({tv});
    for (std::size_t t = 0; t < tv; ++t)
        tpos->values[t] = static_cast<Real>(static_cast<double>(t) + 0.5);
    std::vector<TensorPtr<Real>> out;
    for (std::size_t i = 0; i < ranges.n; ++i) {
        auto lb = tape.broadcast_scalar(ranges.left[i], tv);
        auto rb = tape.broadcast_scalar(ranges.right[i], tv);
        auto rise = tape.sigmoid(tape.scale(tape.sub(tpos, lb), 1.0 / tau));
        auto fall = tape.sigmoid(tape.scale(tape.sub(rb, tpos), 1.0 / tau));
        out.push_back(tape.mul(rise, fall));
    }
    return out;
}

// hard membership: position midpoints inside [left, right); an empty session
// claims the single position nearest its center
template <typename Real>
std::vector<TensorPtr<Real>> hard_membership(Tape<Real>& tape, const SessionRanges<Real>& ranges) {
    (void)tape;
    std::vector<TensorPtr<Real>> out;
    for (std::size_t i = 0; i < ranges.n; ++i) {
        double l = static_cast<double>(ranges.left[i]->values[0]);
        double r = static_cast<double>(ranges.right[i]->values[0]);
        auto w = make_tensor<Real>({ranges.t_valid});
        std::size_t hits = 0;
        for (std::size_t t = 0; t < ranges.t_valid; ++t) {
            double mid = static_cast<double>(t) + 0.5;
            if (mid >= l && mid < r) {
                w->values[t] = Real(1);
                ++hits;
            }
        }
        if (hits == 0) {
            double center = 0.5 * (l + r);
            auto t_near = static_cast<std::size_t>(center < 0 ? 0 : center);
            if (t_near >= ranges.t_valid) t_near = ranges.t_valid - 1;
            w->values[t_near] = Real(1);
        }
        out.push_back(w);
    }
    return out;
}

// weight-normalized mean of hidden states per session
template <typename Real>
std::vector<TensorPtr<Real>> session_representations(Tape<Real>& tape,
                                                     const std::vector<TensorPtr<Real>>& weights,
                                                     const TensorPtr<Real>& h_valid) {
    std::vector<TensorPtr<Real>> reps;
    for (const auto& w : weights)
        reps.push_back(tape.div_scalar(tape.vecmat(w, h_valid), tape.sum(w)));
    return reps;
}

// F_t = H_t + sum_i w_i(t) * I_i
template <typename Real>
TensorPtr<Real> enhance(Tape<Real>& tape, const TensorPtr<Real>& h_valid,
                        const std::vector<TensorPtr<Real>>& weights,
                        const std::vector<TensorPtr<Real>>& reps) {
    auto out = h_valid;
    for (std::size_t i = 0; i < weights.size(); ++i)
        out = tape.add(out, tape.outer(weights[i], reps[i]));
    return out;
}

// Self-supervision over session representations: adjacent sessions within a
// branch are pushed apart; for the search scenario, aligned sessions across
// branches are pulled together.
template <typename Real>
TensorPtr<Real> ssl_adjacent(Tape<Real>& tape, const std::vector<TensorPtr<Real>>& reps) {
    auto total = make_scalar<Real>(Real(0));
    for (std::size_t i = 0; i + 1 < reps.size(); ++i)
        total = tape.add(total, tape.cosine(reps[i], reps[i + 1]));
    return total;
}

template <typename Real>
TensorPtr<Real> ssl_alignment(Tape<Real>& tape, const std::vector<TensorPtr<Real>>& reps_p,
                              const std::vector<TensorPtr<Real>>& reps_q) {
    if (reps_p.size() != reps_q.size())
        throw ShapeError("alignment needs equal session counts, got " +
                         std::to_string(reps_p.size()) + " and " + std::to_string(reps_q.size()));
    auto total = make_scalar<Real>(Real(0));
    for (std::size_t i = 0; i < reps_p.size(); ++i)
        total = tape.add(total, tape.cosine(reps_p[i], reps_q[i]));
    return total;
}

template <typename Real>
SessionLayout to_layout(const SessionRanges<Real>& ranges,
                        const std::vector<TensorPtr<Real>>& weights, bool hard) {
    SessionLayout out;
    out.n = ranges.n;
    out.t_valid = ranges.t_valid;
    out.hard = hard;
    for (std::size_t i = 0; i < ranges.n; ++i) {
        out.left.push_back(static_cast<double>(ranges.left[i]->values[0]));
        out.right.push_back(static_cast<double>(ranges.right[i]->values[0]));
        out.weight.emplace_back(weights[i]->values.begin(), weights[i]->values.end());
    }
    return out;
}

}  // namespace searec
