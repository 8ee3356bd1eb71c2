#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "searec/registry.hpp"
#include "searec/tape.hpp"

namespace searec {

// Learnable convex blend between the two branch outputs for search scoring.
// The logit starts at zero, a balanced blend of 0.5 after the sigmoid.
template <typename Real>
struct PredictorParams {
    TensorPtr<Real> w_logit;   // scalar
    bool unconstrained = false;
};

template <typename Real>
PredictorParams<Real> build_predictor_params(ParamRegistry<Real>& reg, bool unconstrained) {
    PredictorParams<Real> p;
    p.w_logit = reg.add("predict.w", make_scalar<Real>(Real(0)));
    p.unconstrained = unconstrained;
    return p;
}

template <typename Real>
TensorPtr<Real> blend_weight(Tape<Real>& tape, const PredictorParams<Real>& p) {
    return p.unconstrained ? p.w_logit : tape.sigmoid(p.w_logit);
}

template <typename Real>
TensorPtr<Real> blend_vectors(Tape<Real>& tape, const PredictorParams<Real>& p,
                              const TensorPtr<Real>& f_product, const TensorPtr<Real>& f_query) {
    auto w = blend_weight(tape, p);
    auto one_minus = tape.sub(make_scalar<Real>(Real(1)), w);
    return tape.add(tape.mul_scalar(f_product, w), tape.mul_scalar(f_query, one_minus));
}

// dot of the state vector with each candidate's product embedding;
// candidates[0] is the positive by convention
template <typename Real>
TensorPtr<Real> score_candidates(Tape<Real>& tape, const TensorPtr<Real>& product_table,
                                 const TensorPtr<Real>& f, const std::vector<std::int32_t>& ids) {
    if (ids.empty()) throw DataError("no candidates to score");
    for (std::int32_t id : ids)
        if (id <= 0) throw DataError("candidate id must be a real product, got " + std::to_string(id));
    return tape.matvec(tape.gather_rows(product_table, ids, 0), f);
}

// binary cross-entropy of one positive (index 0) against sampled negatives,
// with probabilities clamped to [1e-7, 1 - 1e-7] to keep the loss finite
template <typename Real>
TensorPtr<Real> bce_loss(Tape<Real>& tape, const TensorPtr<Real>& scores) {
    if (scores->rank() != 1 || scores->shape[0] == 0)
        throw ShapeError("bce_loss: want a non-empty score vector, got " + scores->shape_str());
    auto probs = tape.clamp(tape.sigmoid(scores), 1e-7, 1.0 - 1e-7);
    auto pos_term = tape.scale(tape.log_op(tape.element(probs, 0)), -1.0);
    if (scores->shape[0] == 1) return pos_term;
    auto negs = tape.slice_vec(probs, 1, scores->shape[0]);
    auto ones = make_tensor<Real>({negs->shape[0]});
    for (auto& v : ones->values) v = Real(1);
    auto neg_term = tape.scale(tape.sum(tape.log_op(tape.sub(ones, negs))), -1.0);
    return tape.add(pos_term, neg_term);
}

// prediction loss plus alpha-weighted self-supervision; a null or
// gradient-free zero ssl term leaves the prediction loss untouched
template <typename Real>
TensorPtr<Real> joint_loss(Tape<Real>& tape, const TensorPtr<Real>& predict,
                           const TensorPtr<Real>& ssl, double alpha) {
    if (!ssl || (ssl->values[0] == Real(0) && !ssl->requires_grad)) return predict;
    return tape.add(predict, tape.scale(ssl, alpha));
}

}  // namespace searec
