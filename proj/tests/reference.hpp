// Plain-loop reference implementations used as oracles in tests. Everything
// here is double precision, written directly from the math with no shared
// code with the library implementation.
#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <vector>

#include "searec/tensor.hpp"

namespace ref {

struct RMat {
    std::size_t r = 0, c = 0;
    std::vector<double> v;
    RMat() = default;
    RMat(std::size_t r_, std::size_t c_) : r(r_), c(c_), v(r_ * c_, 0.0) {}
    double& at(std::size_t i, std::size_t j) { return v[i * c + j]; }
    double at(std::size_t i, std::size_t j) const { return v[i * c + j]; }
};

template <typename Real>
RMat to_rmat(const searec::TensorPtr<Real>& t) {
    RMat m(t->rows(), t->cols());
    for (std::size_t i = 0; i < t->values.size(); ++i) m.v[i] = static_cast<double>(t->values[i]);
    return m;
}

template <typename Real>
std::vector<double> to_rvec(const searec::TensorPtr<Real>& t) {
    return std::vector<double>(t->values.begin(), t->values.end());
}

inline RMat rmatmul(const RMat& a, const RMat& b) {
    assert(a.c == b.r);
    RMat out(a.r, b.c);
    for (std::size_t i = 0; i < a.r; ++i)
        for (std::size_t j = 0; j < b.c; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < a.c; ++k) s += a.at(i, k) * b.at(k, j);
            out.at(i, j) = s;
        }
    return out;
}

inline RMat radd(const RMat& a, const RMat& b) {
    RMat out(a.r, a.c);
    for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] + b.v[i];
    return out;
}

inline RMat rsoftmax_masked(const RMat& a, const std::vector<std::uint8_t>& key_valid) {
    RMat out(a.r, a.c);
    bool any = false;
    for (auto m : key_valid) any |= (m != 0);
    if (!any) return out;
    for (std::size_t i = 0; i < a.r; ++i) {
        double mx = -1e300;
        for (std::size_t j = 0; j < a.c; ++j)
            if (key_valid[j] && a.at(i, j) > mx) mx = a.at(i, j);
        double z = 0;
        for (std::size_t j = 0; j < a.c; ++j) {
            double e = key_valid[j] ? std::exp(a.at(i, j) - mx) : 0.0;
            out.at(i, j) = e;
            z += e;
        }
        for (std::size_t j = 0; j < a.c; ++j) out.at(i, j) /= z;
    }
    return out;
}

inline RMat rlayernorm(const RMat& x, const std::vector<double>& g, const std::vector<double>& b,
                       double eps = 1e-5) {
    RMat out(x.r, x.c);
    for (std::size_t i = 0; i < x.r; ++i) {
        double mu = 0;
        for (std::size_t j = 0; j < x.c; ++j) mu += x.at(i, j);
        mu /= static_cast<double>(x.c);
        double var = 0;
        for (std::size_t j = 0; j < x.c; ++j) {
            double d = x.at(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<double>(x.c);
        double isd = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < x.c; ++j)
            out.at(i, j) = g[j] * (x.at(i, j) - mu) * isd + b[j];
    }
    return out;
}

struct RAttention {
    std::vector<RMat> wq, wk, wv;
    RMat wo;
};

inline RMat rmha(const RMat& q_in, const RMat& kv_in, const RAttention& w,
                 const std::vector<std::uint8_t>& key_mask) {
    std::size_t h = w.wq.size();
    std::size_t dh = w.wq[0].c;
    RMat concat(q_in.r, h * dh);
    for (std::size_t head = 0; head < h; ++head) {
        RMat q = rmatmul(q_in, w.wq[head]);
        RMat k = rmatmul(kv_in, w.wk[head]);
        RMat v = rmatmul(kv_in, w.wv[head]);
        RMat scores(q.r, k.r);
        for (std::size_t i = 0; i < q.r; ++i)
            for (std::size_t j = 0; j < k.r; ++j) {
                double s = 0;
                for (std::size_t p = 0; p < dh; ++p) s += q.at(i, p) * k.at(j, p);
                scores.at(i, j) = s / std::sqrt(static_cast<double>(dh));
            }
        RMat probs = rsoftmax_masked(scores, key_mask);
        for (std::size_t i = 0; i < q.r; ++i)
            for (std::size_t p = 0; p < dh; ++p) {
                double s = 0;
                for (std::size_t j = 0; j < k.r; ++j) s += probs.at(i, j) * v.at(j, p);
                concat.at(i, head * dh + p) = s;
            }
    }
    return rmatmul(concat, w.wo);
}

struct RLayer {
    RAttention self_attn, cross_attn;
    bool has_cross = true;
    RMat ffn_w1, ffn_w2;
    std::vector<double> ffn_b1, ffn_b2;
    std::vector<double> ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
};

inline RMat rffn(const RMat& x, const RLayer& l) {
    RMat h = rmatmul(x, l.ffn_w1);
    for (std::size_t i = 0; i < h.r; ++i)
        for (std::size_t j = 0; j < h.c; ++j) {
            double v = h.at(i, j) + l.ffn_b1[j];
            h.at(i, j) = v > 0 ? v : 0;
        }
    RMat out = rmatmul(h, l.ffn_w2);
    for (std::size_t i = 0; i < out.r; ++i)
        for (std::size_t j = 0; j < out.c; ++j) out.at(i, j) += l.ffn_b2[j];
    return out;
}

// one dual-branch layer, dropout inert (evaluation mode)
inline void rlayer_pair(const RLayer& lp, const RLayer& lq, RMat& hp, RMat& hq,
                        const std::vector<std::uint8_t>& mask_p,
                        const std::vector<std::uint8_t>& mask_q) {
    RMat sp = rlayernorm(radd(hp, rmha(hp, hp, lp.self_attn, mask_p)), lp.ln1_g, lp.ln1_b);
    RMat sq = rlayernorm(radd(hq, rmha(hq, hq, lq.self_attn, mask_q)), lq.ln1_g, lq.ln1_b);
    RMat cp = sp, cq = sq;
    if (lp.has_cross) {
        cp = rlayernorm(radd(sp, rmha(sp, sq, lp.cross_attn, mask_q)), lp.ln2_g, lp.ln2_b);
        cq = rlayernorm(radd(sq, rmha(sq, sp, lq.cross_attn, mask_p)), lq.ln2_g, lq.ln2_b);
    }
    hp = rlayernorm(radd(cp, rffn(cp, lp)), lp.ln3_g, lp.ln3_b);
    hq = rlayernorm(radd(cq, rffn(cq, lq)), lq.ln3_g, lq.ln3_b);
}

// single-branch layer: the cross block runs with its own output as source
inline void rlayer_single(const RLayer& lp, RMat& hp, const std::vector<std::uint8_t>& mask_p) {
    RMat sp = rlayernorm(radd(hp, rmha(hp, hp, lp.self_attn, mask_p)), lp.ln1_g, lp.ln1_b);
    RMat cp = sp;
    if (lp.has_cross)
        cp = rlayernorm(radd(sp, rmha(sp, sp, lp.cross_attn, mask_p)), lp.ln2_g, lp.ln2_b);
    hp = rlayernorm(radd(cp, rffn(cp, lp)), lp.ln3_g, lp.ln3_b);
}

// session pipeline: uniform chunk means -> offsets/half-lengths -> clamped
// ranges -> soft membership -> normalized means -> enhanced states
struct RSession {
    std::vector<double> left, right;            // n ranges
    std::vector<std::vector<double>> weight;    // n x T soft membership
    std::vector<std::vector<double>> reps;      // n session vectors
    RMat enhanced;                              // T x d
};

inline RSession rsession(const RMat& h, const RMat& w_full, const std::vector<double>& b_full,
                         std::size_t n_max, double tau) {
    std::size_t tv = h.r, d = h.c;
    std::size_t n = n_max < tv ? n_max : tv;
    RSession out;

    std::vector<double> f_in;  // relu of concatenated chunk means
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t lo = tv, hi = 0;
        for (std::size_t t = 0; t < tv; ++t) {
            auto chunk = static_cast<std::size_t>((t + 0.5) * n / tv);
            if (chunk >= n) chunk = n - 1;
            if (chunk == i) {
                lo = std::min(lo, t);
                hi = std::max(hi, t + 1);
            }
        }
        for (std::size_t j = 0; j < d; ++j) {
            double s = 0;
            for (std::size_t t = lo; t < hi; ++t) s += h.at(t, j);
            double mean = s / static_cast<double>(hi - lo);
            f_in.push_back(mean > 0 ? mean : 0);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        double off_logit = 0, len_logit = 0;
        for (std::size_t k = 0; k < n * d; ++k) {
            off_logit += f_in[k] * w_full.at(k, i);
            len_logit += f_in[k] * w_full.at(k, n_max + i);
        }
        double center = (i + 0.5) * (static_cast<double>(tv) / n);
        double dx = std::tanh(off_logit) * (static_cast<double>(tv) / (2.0 * n));
        double half = std::tanh(len_logit + b_full[i]);
        if (half < 0) half = 0;
        half *= static_cast<double>(tv) / n;
        auto clamp_t = [&](double x) { return x < 0 ? 0.0 : (x > tv ? static_cast<double>(tv) : x); };
        double l = clamp_t(center + dx - half), r = clamp_t(center + dx + half);
        if (r - l < 1.0) {
            double mid = 0.5 * (l + r);
            l = mid - 0.5;
            r = mid + 0.5;
            if (l < 0) {
                l = 0;
                r = 1;
            } else if (r > tv) {
                r = tv;
                l = tv - 1.0;
            }
        }
        out.left.push_back(l);
        out.right.push_back(r);
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> w(tv);
        for (std::size_t t = 0; t < tv; ++t) {
            double mid = t + 0.5;
            double rise = 1.0 / (1.0 + std::exp(-(mid - out.left[i]) / tau));
            double fall = 1.0 / (1.0 + std::exp(-(out.right[i] - mid) / tau));
            w[t] = rise * fall;
        }
        out.weight.push_back(w);
    }
    for (std::size_t i = 0; i < n; ++i) {
        double z = 0;
        for (double x : out.weight[i]) z += x;
        std::vector<double> rep(d, 0.0);
        for (std::size_t t = 0; t < tv; ++t)
            for (std::size_t j = 0; j < d; ++j) rep[j] += out.weight[i][t] * h.at(t, j);
        for (double& x : rep) x /= z;
        out.reps.push_back(rep);
    }
    out.enhanced = h;
    for (std::size_t t = 0; t < tv; ++t)
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t i = 0; i < n; ++i)
                out.enhanced.at(t, j) += out.weight[i][t] * out.reps[i][j];
    return out;
}

inline double rcos(const std::vector<double>& u, const std::vector<double>& v) {
    double uu = 0, vv = 0, uv = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        uu += u[i] * u[i];
        vv += v[i] * v[i];
        uv += u[i] * v[i];
    }
    if (uu <= 0 || vv <= 0) return 0.0;
    return uv / (std::sqrt(uu) * std::sqrt(vv));
}

// adjacent-discrimination minus cross-branch alignment
inline double rssl_search(const std::vector<std::vector<double>>& reps_p,
                          const std::vector<std::vector<double>>& reps_q) {
    double loss = 0;
    for (std::size_t i = 0; i + 1 < reps_p.size(); ++i) loss += rcos(reps_p[i], reps_p[i + 1]);
    for (std::size_t i = 0; i + 1 < reps_q.size(); ++i) loss += rcos(reps_q[i], reps_q[i + 1]);
    for (std::size_t i = 0; i < reps_p.size(); ++i) loss -= rcos(reps_p[i], reps_q[i]);
    return loss;
}

inline double rssl_rec(const std::vector<std::vector<double>>& reps_p) {
    double loss = 0;
    for (std::size_t i = 0; i + 1 < reps_p.size(); ++i) loss += rcos(reps_p[i], reps_p[i + 1]);
    return loss;
}

inline double rsigmoid(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// negative log-likelihood of one positive against sampled negatives,
// probabilities clamped away from {0, 1}
inline double rbce(double pos_score, const std::vector<double>& neg_scores) {
    auto clamp01 = [](double p) {
        if (p < 1e-7) return 1e-7;
        if (p > 1.0 - 1e-7) return 1.0 - 1e-7;
        return p;
    };
    double loss = -std::log(clamp01(rsigmoid(pos_score)));
    for (double s : neg_scores) loss -= std::log(1.0 - clamp01(rsigmoid(s)));
    return loss;
}

}  // namespace ref
