#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "searec/tensor.hpp"

namespace searec {

// Per-thread gradient buffer. Parameter gradients are redirected here while a
// worker thread runs backward; the trainer flushes sinks in thread order so
// accumulation into the shared parameter tensors happens in a fixed sequence.
template <typename Real>
struct GradSink {
    std::unordered_map<Tensor<Real>*, std::vector<Real>> buffers;

    Real* buffer_for(Tensor<Real>* t) {
        auto it = buffers.find(t);
        if (it == buffers.end())
            it = buffers.emplace(t, std::vector<Real>(t->numel(), Real(0))).first;
        return it->second.data();
    }

    void flush_into_grads() {
        for (auto& kv : buffers) {
            kv.first->ensure_grad();
            Real* g = kv.first->grad.data();
            const std::vector<Real>& buf = kv.second;
            for (std::size_t i = 0; i < buf.size(); ++i) g[i] += buf[i];
        }
        buffers.clear();
    }
};

struct TapeStats {
    std::size_t zero_norm_cosines = 0;
    std::size_t empty_query_pools = 0;
};

// Eager reverse-mode tape. Every op computes its output immediately and, when
// gradients are wanted, records a closure that scatters the output gradient
// back to its inputs. backward() replays closures newest-first; gradients
// accumulate until the caller zeroes them.
template <typename Real>
class Tape {
  public:
    bool training = true;       // dropout active
    bool grad_enabled = true;   // record closures
    bool debug_checks = false;  // scan op outputs for non-finite values
    GradSink<Real>* sink = nullptr;
    std::mt19937_64 dropout_rng{0x9a3f5e1dULL};
    TapeStats stats;

    void clear() {
        nodes_.clear();
        internals_.clear();
    }
    std::size_t node_count() const { return nodes_.size(); }

    void backward(const TensorPtr<Real>& loss, Real seed = Real(1)) {
        if (loss->numel() != 1)
            throw ShapeError("backward: loss must be scalar, got " + loss->shape_str());
        // Adjoints of tape-created intermediates are scratch space per backward
        // pass; only leaves (parameters, user inputs) accumulate across calls.
        for (auto& t : internals_) t->zero_grad();
        loss->ensure_grad();
        loss->grad[0] += seed;
        for (std::size_t i = nodes_.size(); i-- > 0;) nodes_[i]();
    }

    // ---- matrix products ----

    TensorPtr<Real> matmul(const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
        require(a->rank() == 2 && b->rank() == 2 && a->shape[1] == b->shape[0],
                "matmul", a, b);
        std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
        auto out = fresh({m, n}, a, b);
        const Real* A = a->values.data();
        const Real* B = b->values.data();
        Real* O = out->values.data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                Real aik = A[i * k + p];
                if (aik == Real(0)) continue;
                const Real* Bp = B + p * n;
                Real* Oi = O + i * n;
                for (std::size_t j = 0; j < n; ++j) Oi[j] += aik * Bp[j];
            }
        record(out, [this, a, b, out, m, k, n] {
            const Real* G = out->grad.data();
            const Real* A = a->values.data();
            const Real* B = b->values.data();
            if (Real* dA = grad_dst(a)) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        Real s = 0;
                        const Real* Gi = G + i * n;
                        const Real* Bp = B + p * n;
                        for (std::size_t j = 0; j < n; ++j) s += Gi[j] * Bp[j];
                        dA[i * k + p] += s;
                    }
            }
            if (Real* dB = grad_dst(b)) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        Real aik = A[i * k + p];
                        if (aik == Real(0)) continue;
                        const Real* Gi = G + i * n;
                        Real* dBp = dB + p * n;
                        for (std::size_t j = 0; j < n; ++j) dBp[j] += aik * Gi[j];
                    }
            }
        });
        return finish(out, "matmul");
    }

    // a (m x k) times b-transposed, with b stored (n x k)
    TensorPtr<Real> matmul_nt(const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
        require(a->rank() == 2 && b->rank() == 2 && a->shape[1] == b->shape[1],
                "matmul_nt", a, b);
        std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[0];
        auto out = fresh({m, n}, a, b);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                Real s = 0;
                const Real* Ai = a->values.data() + i * k;
                const Real* Bj = b->values.data() + j * k;
                for (std::size_t p = 0; p < k; ++p) s += Ai[p] * Bj[p];
                out->values[i * n + j] = s;
            }
        record(out, [this, a, b, out, m, k, n] {
            const Real* G = out->grad.data();
            if (Real* dA = grad_dst(a)) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        Real g = G[i * n + j];
                        if (g == Real(0)) continue;
                        const Real* Bj = b->values.data() + j * k;
                        Real* dAi = dA + i * k;
                        for (std::size_t p = 0; p < k; ++p) dAi[p] += g * Bj[p];
                    }
            }
            if (Real* dB = grad_dst(b)) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        Real g = G[i * n + j];
                        if (g == Real(0)) continue;
                        const Real* Ai = a->values.data() + i * k;
                        Real* dBj = dB + j * k;
                        for (std::size_t p = 0; p < k; ++p) dBj[p] += g * Ai[p];
                    }
            }
        });
        return finish(out, "matmul_nt");
    }

    TensorPtr<Real> matvec(const TensorPtr<Real>& a, const TensorPtr<Real>& x) {
        require(a->rank() == 2 && x->rank() == 1 && a->shape[1] == x->shape[0],
                "matvec", a, x);
        std::size_t m = a->shape[0], n = a->shape[1];
        auto out = fresh({m}, a, x);
        for (std::size_t i = 0; i < m; ++i) {
            Real s = 0;
            const Real* Ai = a->values.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) s += Ai[j] * x->values[j];
            out->values[i] = s;
        }
        record(out, [this, a, x, out, m, n] {
            const Real* G = out->grad.data();
            if (Real* dA = grad_dst(a)) {
                for (std::size_t i = 0; i < m; ++i) {
                    Real g = G[i];
                    if (g == Real(0)) continue;
                    Real* dAi = dA + i * n;
                    for (std::size_t j = 0; j < n; ++j) dAi[j] += g * x->values[j];
                }
            }
            if (Real* dX = grad_dst(x)) {
                for (std::size_t i = 0; i < m; ++i) {
                    Real g = G[i];
                    if (g == Real(0)) continue;
                    const Real* Ai = a->values.data() + i * n;
                    for (std::size_t j = 0; j < n; ++j) dX[j] += g * Ai[j];
                }
            }
        });
        return finish(out, "matvec");
    }

    TensorPtr<Real> vecmat(const TensorPtr<Real>& x, const TensorPtr<Real>& a) {
        require(x->rank() == 1 && a->rank() == 2 && x->shape[0] == a->shape[0],
                "vecmat", x, a);
        std::size_t m = a->shape[0], n = a->shape[1];
        auto out = fresh({n}, x, a);
        for (std::size_t i = 0; i < m; ++i) {
            Real xi = x->values[i];
            if (xi == Real(0)) continue;
            const Real* Ai = a->values.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) out->values[j] += xi * Ai[j];
        }
        record(out, [this, x, a, out, m, n] {
            const Real* G = out->grad.data();
            if (Real* dX = grad_dst(x)) {
                for (std::size_t i = 0; i < m; ++i) {
                    Real s = 0;
                    const Real* Ai = a->values.data() + i * n;
                    for (std::size_t j = 0; j < n; ++j) s += Ai[j] * G[j];
                    dX[i] += s;
                }
            }
            if (Real* dA = grad_dst(a)) {
                for (std::size_t i = 0; i < m; ++i) {
                    Real xi = x->values[i];
                    if (xi == Real(0)) continue;
                    Real* dAi = dA + i * n;
                    for (std::size_t j = 0; j < n; ++j) dAi[j] += xi * G[j];
                }
            }
        });
        return finish(out, "vecmat");
    }

    TensorPtr<Real> outer(const TensorPtr<Real>& u, const TensorPtr<Real>& v) {
        require(u->rank() == 1 && v->rank() == 1, "outer", u, v);
        std::size_t m = u->shape[0], n = v->shape[0];
        auto out = fresh({m, n}, u, v);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                out->values[i * n + j] = u->values[i] * v->values[j];
        record(out, [this, u, v, out, m, n] {
            const Real* G = out->grad.data();
            if (Real* dU = grad_dst(u))
                for (std::size_t i = 0; i < m; ++i) {
                    Real s = 0;
                    for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * v->values[j];
                    dU[i] += s;
                }
            if (Real* dV = grad_dst(v))
                for (std::size_t j = 0; j < n; ++j) {
                    Real s = 0;
                    for (std::size_t i = 0; i < m; ++i) s += G[i * n + j] * u->values[i];
                    dV[j] += s;
                }
        });
        return finish(out, "outer");
    }

    // ---- elementwise and broadcast arithmetic ----

    TensorPtr<Real> add(const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
        require(a->shape == b->shape, "add", a, b);
        auto out = fresh(a->shape, a, b);
        for (std::size_t i = 0; i < out->values.size(); ++i)
            out->values[i] = a->values[i] + b->values[i];
        record(out, [this, a, b, out] {
            const Real* G = out->grad.data();
            if (Real* dA = grad_dst(a))
                for (std::size_t i = 0; i < out->values.size(); ++i) dA[i] += G[i];
            if (Real* dB = grad_dst(b))
                for (std::size_t i = 0; i < out->values.size(); ++i) dB[i] += G[i];
        });
        return finish(out, "add");
    }

    TensorPtr<Real> sub(const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
        require(a->shape == b->shape, "sub", a, b);
        auto out = fresh(a->shape, a, b);
        for (std::size_t i = 0; i < out->values.size(); ++i)
            out->values[i] = a->values[i] - b->values[i];
        record(out, [this, a, b, out] {
            const Real* G = out->grad.data();
            if (Real* dA = grad_dst(a))
                for (std::size_t i = 0; i < out->values.size(); ++i) dA[i] += G[i];
            if (Real* dB = grad_dst(b))
                for (std::size_t i = 0; i < out->values.size(); ++i) dB[i] -= G[i];
        });
        return finish(out, "sub");
    }

    TensorPtr<Real> mul(const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
        require(a->shape == b->shape, "mul", a, b);
        auto out = fresh(a->shape, a, b);
        for (std::size_t i = 0; i < out->values.size(); ++i)
            out->values[i] = a->values[i] * b->values[i];
        record(out, [this, a, b, out] {
            const Real* G = out->grad.data();
            if (Real* dA = grad_dst(a))
                for (std::size_t i = 0; i < out->values.size(); ++i) dA[i] += G[i] * b->values[i];
            if (Real* dB = grad_dst(b))
                for (std::size_t i = 0; i < out->values.size(); ++i) dB[i] += G[i] * a->values[i];
        });
        return finish(out, "mul");
    }

    TensorPtr<Real> scale(const TensorPtr<Real>& a, double c) {
        auto out = fresh(a->shape, a);
        Real rc = static_cast<Real>(c);
        for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] * rc;
        record(out, [this, a, out, rc] {
            if (Real* dA = grad_dst(a)) {
                const Real* G = out->grad.data();
                for (std::size_t i = 0; i < out->values.size(); ++i) dA[i] += G[i] * rc;
            }
        });
        return finish(out, "scale");
    }

    TensorPtr<Real> add_rowvec(const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
        require(a->rank() == 2 && b->rank() == 1 && a->shape[1] == b->shape[0],
                "add_rowvec", a, b);
        std::size_t m = a->shape[0], n = a->shape[1];
        auto out = fresh(a->shape, a, b);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                out->values[i * n + j] = a->values[i * n + j] + b->values[j];
        record(out, [this, a, b, out, m, n] {
            const Real* G = out->grad.data();
            if (Real* dA = grad_dst(a))
                for (std::size_t i = 0; i < m * n; ++i) dA[i] += G[i];
            if (Real* dB = grad_dst(b))
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) dB[j] += G[i * n + j];
        });
        return finish(out, "add_rowvec");
    }

    // broadcast scalar tensor across a
    TensorPtr<Real> mul_scalar(const TensorPtr<Real>& a, const TensorPtr<Real>& s) {
        require(s->numel() == 1, "mul_scalar", a, s);
        auto out = fresh(a->shape, a, s);
        Real sv = s->values[0];
        for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] * sv;
        record(out, [this, a, s, out, sv] {
            const Real* G = out->grad.data();
            if (Real* dA = grad_dst(a))
                for (std::size_t i = 0; i < out->values.size(); ++i) dA[i] += G[i] * sv;
            if (Real* dS = grad_dst(s)) {
                Real acc = 0;
                for (std::size_t i = 0; i < out->values.size(); ++i) acc += G[i] * a->values[i];
                dS[0] += acc;
            }
        });
        return finish(out, "mul_scalar");
    }

    TensorPtr<Real> div_scalar(const TensorPtr<Real>& a, const TensorPtr<Real>& s) {
        require(s->numel() == 1, "div_scalar", a, s);
        Real sv = s->values[0];
        if (sv == Real(0)) throw NumericError("div_scalar: divide by zero");
        auto out = fresh(a->shape, a, s);
        for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] / sv;
        record(out, [this, a, s, out, sv] {
            const Real* G = out->grad.data();
            if (Real* dA = grad_dst(a))
                for (std::size_t i = 0; i < out->values.size(); ++i) dA[i] += G[i] / sv;
            if (Real* dS = grad_dst(s)) {
                Real acc = 0;
                for (std::size_t i = 0; i < out->values.size(); ++i)
                    acc -= G[i] * a->values[i] / (sv * sv);
                dS[0] += acc;
            }
        });
        return finish(out, "div_scalar");
    }

    // ---- shape plumbing ----

    TensorPtr<Real> concat_cols(const std::vector<TensorPtr<Real>>& parts) {
        if (parts.empty()) throw ShapeError("concat_cols: no inputs");
        std::size_t m = parts[0]->shape[0], total = 0;
        for (const auto& p : parts) {
            if (p->rank() != 2 || p->shape[0] != m)
                throw ShapeError("concat_cols: row mismatch " + p->shape_str());
            total += p->shape[1];
        }
        auto out = fresh_multi({m, total}, parts);
        std::size_t off = 0;
        for (const auto& p : parts) {
            std::size_t n = p->shape[1];
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    out->values[i * total + off + j] = p->values[i * n + j];
            off += n;
        }
        record(out, [this, parts, out, m, total] {
            const Real* G = out->grad.data();
            std::size_t off = 0;
            for (const auto& p : parts) {
                std::size_t n = p->shape[1];
                if (Real* dP = grad_dst(p))
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j)
                            dP[i * n + j] += G[i * total + off + j];
                off += n;
            }
        });
        return finish(out, "concat_cols");
    }

    TensorPtr<Real> concat_vec(const std::vector<TensorPtr<Real>>& parts) {
        if (parts.empty()) throw ShapeError("concat_vec: no inputs");
        std::size_t total = 0;
        for (const auto& p : parts) {
            if (p->rank() != 1) throw ShapeError("concat_vec: want rank-1, got " + p->shape_str());
            total += p->shape[0];
        }
        auto out = fresh_multi({total}, parts);
        std::size_t off = 0;
        for (const auto& p : parts) {
            for (std::size_t i = 0; i < p->shape[0]; ++i) out->values[off + i] = p->values[i];
            off += p->shape[0];
        }
        record(out, [this, parts, out] {
            const Real* G = out->grad.data();
            std::size_t off = 0;
            for (const auto& p : parts) {
                if (Real* dP = grad_dst(p))
                    for (std::size_t i = 0; i < p->shape[0]; ++i) dP[i] += G[off + i];
                off += p->shape[0];
            }
        });
        return finish(out, "concat_vec");
    }

    TensorPtr<Real> stack_rows(const std::vector<TensorPtr<Real>>& rows_in) {
        if (rows_in.empty()) throw ShapeError("stack_rows: no inputs");
        std::size_t n = rows_in[0]->shape[0];
        for (const auto& r : rows_in)
            if (r->rank() != 1 || r->shape[0] != n)
                throw ShapeError("stack_rows: length mismatch " + r->shape_str());
        std::size_t m = rows_in.size();
        auto out = fresh_multi({m, n}, rows_in);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out->values[i * n + j] = rows_in[i]->values[j];
        record(out, [this, rows_in, out, n] {
            const Real* G = out->grad.data();
            for (std::size_t i = 0; i < rows_in.size(); ++i)
                if (Real* dR = grad_dst(rows_in[i]))
                    for (std::size_t j = 0; j < n; ++j) dR[j] += G[i * n + j];
        });
        return finish(out, "stack_rows");
    }

    TensorPtr<Real> slice_rows(const TensorPtr<Real>& a, std::size_t r0, std::size_t r1) {
        if (a->rank() != 2 || r0 > r1 || r1 > a->shape[0])
            throw ShapeError("slice_rows: bad range [" + std::to_string(r0) + "," +
                             std::to_string(r1) + ") for " + a->shape_str());
        std::size_t n = a->shape[1], m = r1 - r0;
        auto out = fresh({m, n}, a);
        for (std::size_t i = 0; i < m * n; ++i) out->values[i] = a->values[r0 * n + i];
        record(out, [this, a, out, r0, m, n] {
            if (Real* dA = grad_dst(a)) {
                const Real* G = out->grad.data();
                for (std::size_t i = 0; i < m * n; ++i) dA[r0 * n + i] += G[i];
            }
        });
        return finish(out, "slice_rows");
    }

    TensorPtr<Real> slice_cols(const TensorPtr<Real>& a, std::size_t c0, std::size_t c1) {
        if (a->rank() != 2 || c0 > c1 || c1 > a->shape[1])
            throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + "," +
                             std::to_string(c1) + ") for " + a->shape_str());
        std::size_t m = a->shape[0], n = a->shape[1], w = c1 - c0;
        auto out = fresh({m, w}, a);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j)
                out->values[i * w + j] = a->values[i * n + c0 + j];
        record(out, [this, a, out, c0, m, n, w] {
            if (Real* dA = grad_dst(a)) {
                const Real* G = out->grad.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j) dA[i * n + c0 + j] += G[i * w + j];
            }
        });
        return finish(out, "slice_cols");
    }

    TensorPtr<Real> slice_vec(const TensorPtr<Real>& a, std::size_t i0, std::size_t i1) {
        if (a->rank() != 1 || i0 > i1 || i1 > a->shape[0])
            throw ShapeError("slice_vec: bad range [" + std::to_string(i0) + "," +
                             std::to_string(i1) + ") for " + a->shape_str());
        std::size_t n = i1 - i0;
        auto out = fresh({n}, a);
        for (std::size_t i = 0; i < n; ++i) out->values[i] = a->values[i0 + i];
        record(out, [this, a, out, i0, n] {
            if (Real* dA = grad_dst(a)) {
                const Real* G = out->grad.data();
                for (std::size_t i = 0; i < n; ++i) dA[i0 + i] += G[i];
            }
        });
        return finish(out, "slice_vec");
    }

    TensorPtr<Real> row(const TensorPtr<Real>& a, std::size_t r) {
        if (a->rank() != 2 || r >= a->shape[0])
            throw ShapeError("row: index " + std::to_string(r) + " for " + a->shape_str());
        std::size_t n = a->shape[1];
        auto out = fresh({n}, a);
        for (std::size_t j = 0; j < n; ++j) out->values[j] = a->values[r * n + j];
        record(out, [this, a, out, r, n] {
            if (Real* dA = grad_dst(a)) {
                const Real* G = out->grad.data();
                for (std::size_t j = 0; j < n; ++j) dA[r * n + j] += G[j];
            }
        });
        return finish(out, "row");
    }

    TensorPtr<Real> element(const TensorPtr<Real>& a, std::size_t i) {
        if (i >= a->numel())
            throw ShapeError("element: index " + std::to_string(i) + " for " + a->shape_str());
        auto out = fresh({}, a);
        out->values[0] = a->values[i];
        record(out, [this, a, out, i] {
            if (Real* dA = grad_dst(a)) dA[i] += out->grad[0];
        });
        return finish(out, "element");
    }

    TensorPtr<Real> broadcast_rows(const TensorPtr<Real>& u, std::size_t m) {
        if (u->rank() != 1) throw ShapeError("broadcast_rows: want rank-1, got " + u->shape_str());
        std::size_t n = u->shape[0];
        auto out = fresh({m, n}, u);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out->values[i * n + j] = u->values[j];
        record(out, [this, u, out, m, n] {
            if (Real* dU = grad_dst(u)) {
                const Real* G = out->grad.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) dU[j] += G[i * n + j];
            }
        });
        return finish(out, "broadcast_rows");
    }

    TensorPtr<Real> broadcast_scalar(const TensorPtr<Real>& s, std::size_t n) {
        require(s->numel() == 1, "broadcast_scalar", s, s);
        auto out = fresh({n}, s);
        for (std::size_t i = 0; i < n; ++i) out->values[i] = s->values[0];
        record(out, [this, s, out, n] {
            if (Real* dS = grad_dst(s)) {
                Real acc = 0;
                for (std::size_t i = 0; i < n; ++i) acc += out->grad[i];
                dS[0] += acc;
            }
        });
        return finish(out, "broadcast_scalar");
    }

    // ---- reductions ----

    TensorPtr<Real> mean_rows(const TensorPtr<Real>& a) {
        if (a->rank() != 2 || a->shape[0] == 0)
            throw ShapeError("mean_rows: want non-empty rank-2, got " + a->shape_str());
        std::size_t m = a->shape[0], n = a->shape[1];
        auto out = fresh({n}, a);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out->values[j] += a->values[i * n + j];
        Real inv = Real(1) / static_cast<Real>(m);
        for (std::size_t j = 0; j < n; ++j) out->values[j] *= inv;
        record(out, [this, a, out, m, n, inv] {
            if (Real* dA = grad_dst(a)) {
                const Real* G = out->grad.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) dA[i * n + j] += G[j] * inv;
            }
        });
        return finish(out, "mean_rows");
    }

    TensorPtr<Real> sum(const TensorPtr<Real>& a) {
        auto out = fresh({}, a);
        Real s = 0;
        for (Real v : a->values) s += v;
        out->values[0] = s;
        record(out, [this, a, out] {
            if (Real* dA = grad_dst(a)) {
                Real g = out->grad[0];
                for (std::size_t i = 0; i < a->values.size(); ++i) dA[i] += g;
            }
        });
        return finish(out, "sum");
    }

    TensorPtr<Real> dot(const TensorPtr<Real>& u, const TensorPtr<Real>& v) {
        require(u->rank() == 1 && v->rank() == 1 && u->shape[0] == v->shape[0], "dot", u, v);
        auto out = fresh({}, u, v);
        Real s = 0;
        for (std::size_t i = 0; i < u->shape[0]; ++i) s += u->values[i] * v->values[i];
        out->values[0] = s;
        record(out, [this, u, v, out] {
            Real g = out->grad[0];
            if (Real* dU = grad_dst(u))
                for (std::size_t i = 0; i < u->shape[0]; ++i) dU[i] += g * v->values[i];
            if (Real* dV = grad_dst(v))
                for (std::size_t i = 0; i < u->shape[0]; ++i) dV[i] += g * u->values[i];
        });
        return finish(out, "dot");
    }

    // ---- nonlinearities ----

    TensorPtr<Real> relu(const TensorPtr<Real>& a) {
        auto out = fresh(a->shape, a);
        for (std::size_t i = 0; i < a->values.size(); ++i)
            out->values[i] = a->values[i] > Real(0) ? a->values[i] : Real(0);
        record(out, [this, a, out] {
            if (Real* dA = grad_dst(a)) {
                const Real* G = out->grad.data();
                for (std::size_t i = 0; i < a->values.size(); ++i)
                    if (a->values[i] > Real(0)) dA[i] += G[i];
            }
        });
        return finish(out, "relu");
    }

    TensorPtr<Real> tanh_op(const TensorPtr<Real>& a) {
        auto out = fresh(a->shape, a);
        for (std::size_t i = 0; i < a->values.size(); ++i)
            out->values[i] = std::tanh(a->values[i]);
        record(out, [this, a, out] {
            if (Real* dA = grad_dst(a)) {
                const Real* G = out->grad.data();
                for (std::size_t i = 0; i < a->values.size(); ++i) {
                    Real t = out->values[i];
                    dA[i] += G[i] * (Real(1) - t * t);
                }
            }
        });
        return finish(out, "tanh");
    }

    TensorPtr<Real> sigmoid(const TensorPtr<Real>& a) {
        auto out = fresh(a->shape, a);
        for (std::size_t i = 0; i < a->values.size(); ++i) {
            Real x = a->values[i];
            out->values[i] = x >= Real(0) ? Real(1) / (Real(1) + std::exp(-x))
                                          : std::exp(x) / (Real(1) + std::exp(x));
        }
        record(out, [this, a, out] {
            if (Real* dA = grad_dst(a)) {
                const Real* G = out->grad.data();
                for (std::size_t i = 0; i < a->values.size(); ++i) {
                    Real s = out->values[i];
                    dA[i] += G[i] * s * (Real(1) - s);
                }
            }
        });
        return finish(out, "sigmoid");
    }

    TensorPtr<Real> log_op(const TensorPtr<Real>& a) {
        auto out = fresh(a->shape, a);
        for (std::size_t i = 0; i < a->values.size(); ++i) {
            if (a->values[i] <= Real(0))
                throw NumericError("log: non-positive input " + std::to_string((double)a->values[i]));
            out->values[i] = std::log(a->values[i]);
        }
        record(out, [this, a, out] {
            if (Real* dA = grad_dst(a)) {
                const Real* G = out->grad.data();
                for (std::size_t i = 0; i < a->values.size(); ++i) dA[i] += G[i] / a->values[i];
            }
        });
        return finish(out, "log");
    }

    // gradient passes through where lo <= value <= hi
    TensorPtr<Real> clamp(const TensorPtr<Real>& a, double lo, double hi) {
        auto out = fresh(a->shape, a);
        Real rl = static_cast<Real>(lo), rh = static_cast<Real>(hi);
        for (std::size_t i = 0; i < a->values.size(); ++i) {
            Real v = a->values[i];
            out->values[i] = v < rl ? rl : (v > rh ? rh : v);
        }
        record(out, [this, a, out, rl, rh] {
            if (Real* dA = grad_dst(a)) {
                const Real* G = out->grad.data();
                for (std::size_t i = 0; i < a->values.size(); ++i)
                    if (a->values[i] >= rl && a->values[i] <= rh) dA[i] += G[i];
            }
        });
        return finish(out, "clamp");
    }

    TensorPtr<Real> clamp_min(const TensorPtr<Real>& a, double lo) {
        auto out = fresh(a->shape, a);
        Real rl = static_cast<Real>(lo);
        for (std::size_t i = 0; i < a->values.size(); ++i)
            out->values[i] = a->values[i] < rl ? rl : a->values[i];
        record(out, [this, a, out, rl] {
            if (Real* dA = grad_dst(a)) {
                const Real* G = out->grad.data();
                for (std::size_t i = 0; i < a->values.size(); ++i)
                    if (a->values[i] >= rl) dA[i] += G[i];
            }
        });
        return finish(out, "clamp_min");
    }

    // inverted scaling: kept entries multiplied by 1/(1-p) so eval needs no rescale
    TensorPtr<Real> dropout(const TensorPtr<Real>& a, double p) {
        if (p < 0.0 || p >= 1.0)
            throw ConfigError("dropout rate must be in [0,1), got " + std::to_string(p));
        if (!training || p == 0.0) return a;
        auto out = fresh(a->shape, a);
        auto mask = std::make_shared<std::vector<Real>>(a->values.size());
        Real keep_scale = static_cast<Real>(1.0 / (1.0 - p));
        for (std::size_t i = 0; i < a->values.size(); ++i) {
            Real m = uniform_unit(dropout_rng) >= p ? keep_scale : Real(0);
            (*mask)[i] = m;
            out->values[i] = a->values[i] * m;
        }
        record(out, [this, a, out, mask] {
            if (Real* dA = grad_dst(a)) {
                const Real* G = out->grad.data();
                for (std::size_t i = 0; i < a->values.size(); ++i) dA[i] += G[i] * (*mask)[i];
            }
        });
        return finish(out, "dropout");
    }

    // ---- structured ops ----

    // Row-wise softmax over key positions; key_valid[j] == 0 means masked out.
    // A row with no valid key becomes all zeros.
    TensorPtr<Real> softmax_rows_masked(const TensorPtr<Real>& a,
                                        const std::vector<std::uint8_t>& key_valid) {
        if (a->rank() != 2 || key_valid.size() != a->shape[1])
            throw ShapeError("softmax_rows_masked: mask size " + std::to_string(key_valid.size()) +
                             " for " + a->shape_str());
        std::size_t m = a->shape[0], n = a->shape[1];
        bool any_valid = false;
        for (auto v : key_valid) any_valid |= (v != 0);
        auto out = fresh({m, n}, a);
        if (any_valid) {
            for (std::size_t i = 0; i < m; ++i) {
                Real mx = -std::numeric_limits<Real>::infinity();
                for (std::size_t j = 0; j < n; ++j)
                    if (key_valid[j] && a->values[i * n + j] > mx) mx = a->values[i * n + j];
                Real z = 0;
                for (std::size_t j = 0; j < n; ++j) {
                    Real e = key_valid[j] ? std::exp(a->values[i * n + j] - mx) : Real(0);
                    out->values[i * n + j] = e;
                    z += e;
                }
                for (std::size_t j = 0; j < n; ++j) out->values[i * n + j] /= z;
            }
        }
        record(out, [this, a, out, key_valid, m, n] {
            if (Real* dA = grad_dst(a)) {
                const Real* G = out->grad.data();
                for (std::size_t i = 0; i < m; ++i) {
                    Real s = 0;
                    for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * out->values[i * n + j];
                    for (std::size_t j = 0; j < n; ++j)
                        if (key_valid[j])
                            dA[i * n + j] += out->values[i * n + j] * (G[i * n + j] - s);
                }
            }
        });
        return finish(out, "softmax_rows_masked");
    }

    // Row-wise normalization with learned affine, biased variance, epsilon inside
    // the square root. A constant row maps to y = 0 (then beta).
    TensorPtr<Real> layer_norm_rows(const TensorPtr<Real>& a, const TensorPtr<Real>& gamma,
                                    const TensorPtr<Real>& beta, double eps = 1e-5) {
        if (a->rank() != 2 || gamma->rank() != 1 || beta->rank() != 1 ||
            gamma->shape[0] != a->shape[1] || beta->shape[0] != a->shape[1])
            throw ShapeError("layer_norm_rows: got " + a->shape_str() + " with affine " +
                             gamma->shape_str() + "/" + beta->shape_str());
        std::size_t m = a->shape[0], n = a->shape[1];
        auto out = fresh_multi({m, n}, {a, gamma, beta});
        auto norm = std::make_shared<std::vector<Real>>(m * n);    // (x - mu) / sd
        auto inv_sd = std::make_shared<std::vector<Real>>(m);
        Real re = static_cast<Real>(eps);
        for (std::size_t i = 0; i < m; ++i) {
            Real mu = 0;
            for (std::size_t j = 0; j < n; ++j) mu += a->values[i * n + j];
            mu /= static_cast<Real>(n);
            Real var = 0;
            for (std::size_t j = 0; j < n; ++j) {
                Real d = a->values[i * n + j] - mu;
                var += d * d;
            }
            var /= static_cast<Real>(n);
            Real isd = Real(1) / std::sqrt(var + re);
            (*inv_sd)[i] = isd;
            for (std::size_t j = 0; j < n; ++j) {
                Real y = (a->values[i * n + j] - mu) * isd;
                (*norm)[i * n + j] = y;
                out->values[i * n + j] = gamma->values[j] * y + beta->values[j];
            }
        }
        record(out, [this, a, gamma, beta, out, norm, inv_sd, m, n] {
            const Real* G = out->grad.data();
            if (Real* dG = grad_dst(gamma))
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) dG[j] += G[i * n + j] * (*norm)[i * n + j];
            if (Real* dB = grad_dst(beta))
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) dB[j] += G[i * n + j];
            if (Real* dA = grad_dst(a)) {
                for (std::size_t i = 0; i < m; ++i) {
                    Real mean_gy = 0, mean_gyy = 0;
                    for (std::size_t j = 0; j < n; ++j) {
                        Real gy = G[i * n + j] * gamma->values[j];
                        mean_gy += gy;
                        mean_gyy += gy * (*norm)[i * n + j];
                    }
                    mean_gy /= static_cast<Real>(n);
                    mean_gyy /= static_cast<Real>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                        Real gy = G[i * n + j] * gamma->values[j];
                        dA[i * n + j] +=
                            (gy - mean_gy - (*norm)[i * n + j] * mean_gyy) * (*inv_sd)[i];
                    }
                }
            }
        });
        return finish(out, "layer_norm_rows");
    }

    // cos(u, v); a zero-norm side yields 0 with no gradient and bumps a counter
    TensorPtr<Real> cosine(const TensorPtr<Real>& u, const TensorPtr<Real>& v) {
        require(u->rank() == 1 && v->rank() == 1 && u->shape[0] == v->shape[0], "cosine", u, v);
        std::size_t n = u->shape[0];
        Real uu = 0, vv = 0, uv = 0;
        for (std::size_t i = 0; i < n; ++i) {
            uu += u->values[i] * u->values[i];
            vv += v->values[i] * v->values[i];
            uv += u->values[i] * v->values[i];
        }
        Real nu = std::sqrt(uu), nv = std::sqrt(vv);
        auto out = fresh({}, u, v);
        if (nu <= Real(0) || nv <= Real(0)) {
            stats.zero_norm_cosines += 1;
            out->requires_grad = false;
            return finish(out, "cosine");
        }
        Real c = uv / (nu * nv);
        out->values[0] = c;
        record(out, [this, u, v, out, nu, nv, c, n] {
            Real g = out->grad[0];
            if (g == Real(0)) return;
            if (Real* dU = grad_dst(u))
                for (std::size_t i = 0; i < n; ++i)
                    dU[i] += g * (v->values[i] / (nu * nv) - c * u->values[i] / (nu * nu));
            if (Real* dV = grad_dst(v))
                for (std::size_t i = 0; i < n; ++i)
                    dV[i] += g * (u->values[i] / (nu * nv) - c * v->values[i] / (nv * nv));
        });
        return finish(out, "cosine");
    }

    // Embedding lookup. id == pad_id produces a zero row with no gradient edge;
    // out-of-range ids are an input error.
    TensorPtr<Real> gather_rows(const TensorPtr<Real>& table, const std::vector<std::int32_t>& ids,
                                std::int32_t pad_id = 0) {
        if (table->rank() != 2) throw ShapeError("gather_rows: table " + table->shape_str());
        std::size_t v = table->shape[0], d = table->shape[1];
        for (std::int32_t id : ids)
            if (id < 0 || static_cast<std::size_t>(id) >= v)
                throw DataError("gather_rows: id " + std::to_string(id) + " outside table of " +
                                std::to_string(v));
        auto out = fresh({ids.size(), d}, table);
        for (std::size_t t = 0; t < ids.size(); ++t) {
            if (ids[t] == pad_id) continue;
            const Real* src = table->values.data() + static_cast<std::size_t>(ids[t]) * d;
            for (std::size_t j = 0; j < d; ++j) out->values[t * d + j] = src[j];
        }
        record(out, [this, table, out, ids, pad_id, d] {
            if (Real* dT = grad_dst(table)) {
                const Real* G = out->grad.data();
                for (std::size_t t = 0; t < ids.size(); ++t) {
                    if (ids[t] == pad_id) continue;
                    Real* dst = dT + static_cast<std::size_t>(ids[t]) * d;
                    for (std::size_t j = 0; j < d; ++j) dst[j] += G[t * d + j];
                }
            }
        });
        return finish(out, "gather_rows");
    }

  private:
    std::vector<std::function<void()>> nodes_;
    std::vector<TensorPtr<Real>> internals_;

    void require(bool ok, const char* op, const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
        if (!ok)
            throw ShapeError(std::string(op) + ": incompatible shapes " + a->shape_str() + " and " +
                             b->shape_str());
    }

    TensorPtr<Real> fresh(std::vector<std::size_t> shape, const TensorPtr<Real>& a) {
        auto out = make_tensor<Real>(std::move(shape));
        out->requires_grad = grad_enabled && a->requires_grad;
        return out;
    }
    TensorPtr<Real> fresh(std::vector<std::size_t> shape, const TensorPtr<Real>& a,
                          const TensorPtr<Real>& b) {
        auto out = make_tensor<Real>(std::move(shape));
        out->requires_grad = grad_enabled && (a->requires_grad || b->requires_grad);
        return out;
    }
    TensorPtr<Real> fresh_multi(std::vector<std::size_t> shape,
                                const std::vector<TensorPtr<Real>>& inputs) {
        auto out = make_tensor<Real>(std::move(shape));
        if (grad_enabled)
            for (const auto& t : inputs)
                if (t->requires_grad) {
                    out->requires_grad = true;
                    break;
                }
        return out;
    }

    template <typename Fn>
    void record(const TensorPtr<Real>& out, Fn&& fn) {
        if (out->requires_grad) nodes_.emplace_back(std::forward<Fn>(fn));
    }

    TensorPtr<Real> finish(const TensorPtr<Real>& out, const char* op) {
        if (debug_checks)
            for (Real v : out->values)
                if (!std::isfinite(static_cast<double>(v)))
                    throw NumericError(std::string(op) + ": non-finite output");
        if (out->requires_grad) {
            out->ensure_grad();
            internals_.push_back(out);
        }
        return out;
    }

    Real* grad_dst(const TensorPtr<Real>& t) {
        if (!t->requires_grad) return nullptr;
        if (t->is_param && sink) return sink->buffer_for(t.get());
        t->ensure_grad();
        return t->grad.data();
    }
};

}  // namespace searec
