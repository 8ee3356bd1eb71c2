#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "searec/embedding.hpp"
#include "searec/encoder.hpp"
#include "searec/example.hpp"
#include "searec/predictor.hpp"
#include "searec/registry.hpp"
#include "searec/session.hpp"
#include "searec/tape.hpp"

namespace searec {

// Structural variants, named for what they change relative to the full model:
//   full            shared encoder for both branches and both scenarios
//   no_pretrain     same structure; the trainer skips the joint pretrain stage
//   no_cross        cross-attention blocks removed
//   split_branches  separate encoders for the product and query branches
//   split_scenarios separate encoders for the search and rec scenarios
//   time_sessions   session ranges read from timestamp gaps, not learned
//   no_sessions     session module bypassed entirely (no enhancement, no ssl)
enum class Variant {
    full,
    no_pretrain,
    no_cross,
    split_branches,
    split_scenarios,
    time_sessions,
    no_sessions,
};

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::no_pretrain: return "no_pretrain";
        case Variant::no_cross: return "no_cross";
        case Variant::split_branches: return "split_branches";
        case Variant::split_scenarios: return "split_scenarios";
        case Variant::time_sessions: return "time_sessions";
        case Variant::no_sessions: return "no_sessions";
    }
    throw ConfigError("unknown variant");
}

inline Variant variant_from(const std::string& s) {
    for (Variant v : {Variant::full, Variant::no_pretrain, Variant::no_cross,
                      Variant::split_branches, Variant::split_scenarios, Variant::time_sessions,
                      Variant::no_sessions})
        if (s == variant_name(v)) return v;
    throw ConfigError("unknown variant: " + s);
}

struct ModelConfig {
    VocabSizes vocab;
    std::size_t d = 32;
    std::size_t heads = 2;
    std::size_t layers = 2;
    std::size_t sessions = 2;  // max sessions per sequence
    std::size_t max_len = 100;
    double alpha = 0.1;    // self-supervision weight in the joint loss
    double dropout = 0.1;
    double tau = 1.0;      // soft membership temperature
    bool unconstrained_blend = false;
    Variant variant = Variant::full;
    std::uint64_t seed = 42;
};

template <typename Real>
struct ForwardResult {
    TensorPtr<Real> loss;     // scalar joint objective
    TensorPtr<Real> predict;  // scalar cross-entropy part
    TensorPtr<Real> ssl;      // scalar self-supervision part (zero when bypassed)
    TensorPtr<Real> scores;   // candidate scores, index 0 is the positive
    std::size_t sessions_used = 0;
};

template <typename Real>
class Model {
  public:
    ModelConfig cfg;
    ParamRegistry<Real> reg;
    EmbeddingTables<Real> tables;
    EncoderStack<Real> stack_product, stack_query, stack_rec;  // may alias each other
    SessionParams<Real> session;
    PredictorParams<Real> predictor;

    explicit Model(const ModelConfig& c) : cfg(c) {
        EncoderConfig ecfg{cfg.d, cfg.heads, cfg.dropout};
        (void)ecfg.d_head();  // validate d/heads early
        if (cfg.vocab.users == 0 || cfg.vocab.products == 0)
            throw ConfigError("vocabulary sizes must be set before building the model");
        tables = build_embedding_tables<Real>(reg, cfg.vocab, cfg.d, cfg.max_len, cfg.seed);
        bool cross = cfg.variant != Variant::no_cross;
        switch (cfg.variant) {
            case Variant::split_branches:
                // distinct prefixes feed the per-name init seeds, so the two
                // stacks start from different draws
                stack_product =
                    build_encoder_stack(reg, "encoder.product", cfg.layers, ecfg, cross, cfg.seed);
                stack_query =
                    build_encoder_stack(reg, "encoder.query", cfg.layers, ecfg, cross, cfg.seed);
                stack_rec = stack_product;
                alias_encoder_stack(reg, "encoder.rec", "encoder.product", cfg.layers, ecfg, cross);
                break;
            case Variant::split_scenarios:
                stack_product =
                    build_encoder_stack(reg, "encoder.search", cfg.layers, ecfg, cross, cfg.seed);
                stack_query = stack_product;
                stack_rec =
                    build_encoder_stack(reg, "encoder.rec", cfg.layers, ecfg, cross, cfg.seed);
                break;
            default:
                stack_product = build_encoder_stack(reg, "encoder", cfg.layers, ecfg, cross, cfg.seed);
                stack_query = stack_product;
                stack_rec = stack_product;
                break;
        }
        session = build_session_params<Real>(reg, cfg.sessions, cfg.d);
        predictor = build_predictor_params<Real>(reg, cfg.unconstrained_blend);
    }

    ForwardResult<Real> forward(Tape<Real>& tape, const Example& ex, bool hard_sessions = false) {
        return ex.scenario == Scenario::search ? forward_search(tape, ex, hard_sessions)
                                               : forward_rec(tape, ex, hard_sessions);
    }

    // candidate scores without gradient bookkeeping; hard session membership
    std::vector<Real> score_eval(const Example& ex) {
        Tape<Real> tape;
        tape.training = false;
        tape.grad_enabled = false;
        auto r = forward(tape, ex, true);
        return r.scores->values;
    }

    // session layout of the product branch, for diagnostics
    SessionLayout session_layout(const Example& ex, bool hard = true) {
        if (cfg.variant == Variant::no_sessions)
            throw ConfigError("variant no_sessions has no session layout");
        Tape<Real> tape;
        tape.training = false;
        tape.grad_enabled = false;
        std::size_t v = ex.valid_len;
        TensorPtr<Real> hp;
        if (ex.scenario == Scenario::search) {
            auto ep = product_sequence_input(tape, tables, ex, cfg.max_len);
            auto eq = query_sequence_input(tape, tables, ex, cfg.max_len);
            auto enc = encode_search(tape, stack_product, stack_query, ep, eq,
                                     valid_mask(ep->shape[0], v), valid_mask(eq->shape[0], v + 1),
                                     cfg.dropout);
            hp = tape.slice_rows(enc.product, 0, v);
        } else {
            auto ep = product_sequence_input(tape, tables, ex, cfg.max_len);
            hp = tape.slice_rows(
                encode_rec(tape, stack_rec, ep, valid_mask(ep->shape[0], v), cfg.dropout), 0, v);
        }
        std::size_t n = effective_sessions(cfg.sessions, v);
        auto ranges = branch_ranges(tape, ex, hp, n);
        auto weights = hard ? hard_membership(tape, ranges) : soft_membership(tape, ranges, cfg.tau);
        return to_layout(ranges, weights, hard);
    }

    // distinct parameter elements across the encoder stacks (shared layers count once)
    std::size_t encoder_param_elements() const {
        return stack_param_elements<Real>({&stack_product, &stack_query, &stack_rec});
    }

  private:
    SessionRanges<Real> branch_ranges(Tape<Real>& tape, const Example& ex,
                                      const TensorPtr<Real>& h_valid, std::size_t n) {
        if (cfg.variant != Variant::time_sessions) return predict_ranges(tape, session, h_valid, n);
        if (ex.timestamps.size() < ex.valid_len)
            throw DataError("timestamp sessions need one timestamp per valid position");
        auto r = ranges_from_timestamps<Real>(tape, ex.timestamps, ex.valid_len, n);
        std::size_t tv = h_valid->shape[0];
        if (tv != ex.valid_len) {
            // the query axis runs one row past the products; the final session
            // stretches to cover the current query
            r.t_valid = tv;
            r.right.back() = make_scalar<Real>(static_cast<Real>(tv));
        }
        return r;
    }

    struct BranchState {
        TensorPtr<Real> enhanced;
        std::vector<TensorPtr<Real>> reps;
    };

    BranchState apply_sessions(Tape<Real>& tape, const Example& ex, const TensorPtr<Real>& h_valid,
                               std::size_t n, bool hard) {
        auto ranges = branch_ranges(tape, ex, h_valid, n);
        auto weights = hard ? hard_membership(tape, ranges) : soft_membership(tape, ranges, cfg.tau);
        BranchState st;
        st.reps = session_representations(tape, weights, h_valid);
        st.enhanced = enhance(tape, h_valid, weights, st.reps);
        return st;
    }

    std::vector<std::int32_t> candidates(const Example& ex) const {
        std::vector<std::int32_t> out;
        out.reserve(1 + ex.negatives.size());
        out.push_back(ex.target);
        out.insert(out.end(), ex.negatives.begin(), ex.negatives.end());
        return out;
    }

    ForwardResult<Real> forward_search(Tape<Real>& tape, const Example& ex, bool hard) {
        std::size_t v = ex.valid_len;
        auto ep = product_sequence_input(tape, tables, ex, cfg.max_len);
        auto eq = query_sequence_input(tape, tables, ex, cfg.max_len);
        auto enc = encode_search(tape, stack_product, stack_query, ep, eq,
                                 valid_mask(ep->shape[0], v), valid_mask(eq->shape[0], v + 1),
                                 cfg.dropout);
        auto hp = tape.slice_rows(enc.product, 0, v);
        auto hq = tape.slice_rows(enc.query, 0, v + 1);

        ForwardResult<Real> out;
        out.ssl = make_scalar<Real>(Real(0));
        TensorPtr<Real> fp = hp, fq = hq;
        if (cfg.variant != Variant::no_sessions) {
            std::size_t n = effective_sessions(cfg.sessions, v);
            out.sessions_used = n;
            auto bp = apply_sessions(tape, ex, hp, n, hard);
            auto bq = apply_sessions(tape, ex, hq, n, hard);
            fp = bp.enhanced;
            fq = bq.enhanced;
            auto apart = tape.add(ssl_adjacent(tape, bp.reps), ssl_adjacent(tape, bq.reps));
            out.ssl = tape.sub(apart, ssl_alignment(tape, bp.reps, bq.reps));
        }
        auto f = blend_vectors(tape, predictor, tape.row(fp, v - 1), tape.row(fq, v));
        out.scores = score_candidates(tape, tables.product, f, candidates(ex));
        out.predict = bce_loss(tape, out.scores);
        out.loss = joint_loss(tape, out.predict, out.ssl, cfg.alpha);
        return out;
    }

    ForwardResult<Real> forward_rec(Tape<Real>& tape, const Example& ex, bool hard) {
        std::size_t v = ex.valid_len;
        auto ep = product_sequence_input(tape, tables, ex, cfg.max_len);
        auto h = encode_rec(tape, stack_rec, ep, valid_mask(ep->shape[0], v), cfg.dropout);
        auto hp = tape.slice_rows(h, 0, v);

        ForwardResult<Real> out;
        out.ssl = make_scalar<Real>(Real(0));
        TensorPtr<Real> fp = hp;
        if (cfg.variant != Variant::no_sessions) {
            std::size_t n = effective_sessions(cfg.sessions, v);
            out.sessions_used = n;
            auto bp = apply_sessions(tape, ex, hp, n, hard);
            fp = bp.enhanced;
            out.ssl = ssl_adjacent(tape, bp.reps);
        }
        out.scores = score_candidates(tape, tables.product, tape.row(fp, v - 1), candidates(ex));
        out.predict = bce_loss(tape, out.scores);
        out.loss = joint_loss(tape, out.predict, out.ssl, cfg.alpha);
        return out;
    }
};

}  // namespace searec
