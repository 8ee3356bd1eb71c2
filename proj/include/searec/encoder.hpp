#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "searec/init.hpp"
#include "searec/registry.hpp"
#include "searec/tape.hpp"

namespace searec {

template <typename Real>
struct AttentionParams {
    std::vector<TensorPtr<Real>> wq, wk, wv;  // one (d x d_head) projection per head
    TensorPtr<Real> wo;                       // d x d output mix
};

template <typename Real>
struct EncoderLayer {
    AttentionParams<Real> self_attn;
    AttentionParams<Real> cross_attn;  // unset when built without cross-attention
    bool has_cross = true;
    TensorPtr<Real> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    TensorPtr<Real> ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
};

template <typename Real>
using EncoderStack = std::vector<std::shared_ptr<EncoderLayer<Real>>>;

struct EncoderConfig {
    std::size_t d = 32;
    std::size_t heads = 2;
    double dropout = 0.1;

    std::size_t d_head() const {
        if (heads == 0 || d % heads != 0)
            throw ConfigError("model dim " + std::to_string(d) + " not divisible by " +
                              std::to_string(heads) + " heads");
        return d / heads;
    }
    std::size_t d_ff() const { return 2 * d; }  // inner FFN width is fixed at twice d
};

namespace detail {

template <typename Real>
AttentionParams<Real> build_attention(ParamRegistry<Real>& reg, const std::string& prefix,
                                      const EncoderConfig& cfg, std::uint64_t seed) {
    AttentionParams<Real> ap;
    std::size_t dh = cfg.d_head();
    for (std::size_t i = 0; i < cfg.heads; ++i) {
        auto mk = [&](const char* kind) {
            std::string name = prefix + "." + kind + std::to_string(i);
            auto t = make_tensor<Real>({cfg.d, dh});
            xavier_fill(*t, mix_seed({seed, hash_str(name)}));
            return reg.add(name, t);
        };
        ap.wq.push_back(mk("wq"));
        ap.wk.push_back(mk("wk"));
        ap.wv.push_back(mk("wv"));
    }
    auto wo = make_tensor<Real>({cfg.d, cfg.d});
    xavier_fill(*wo, mix_seed({seed, hash_str(prefix + ".wo")}));
    ap.wo = reg.add(prefix + ".wo", wo);
    return ap;
}

}  // namespace detail

template <typename Real>
EncoderStack<Real> build_encoder_stack(ParamRegistry<Real>& reg, const std::string& prefix,
                                       std::size_t layers, const EncoderConfig& cfg,
                                       bool with_cross, std::uint64_t seed) {
    EncoderStack<Real> stack;
    for (std::size_t l = 0; l < layers; ++l) {
        auto layer = std::make_shared<EncoderLayer<Real>>();
        std::string base = prefix + ".layer" + std::to_string(l);
        layer->self_attn = detail::build_attention(reg, base + ".self", cfg, seed);
        layer->has_cross = with_cross;
        if (with_cross) layer->cross_attn = detail::build_attention(reg, base + ".cross", cfg, seed);

        auto mk = [&](const std::string& name, std::vector<std::size_t> shape, bool xavier,
                      double fill = 0.0) {
            auto t = make_tensor<Real>(std::move(shape));
            if (xavier)
                xavier_fill(*t, mix_seed({seed, hash_str(base + name)}));
            else
                for (auto& v : t->values) v = static_cast<Real>(fill);
            return reg.add(base + name, t);
        };
        layer->ffn_w1 = mk(".ffn.w1", {cfg.d, cfg.d_ff()}, true);
        layer->ffn_b1 = mk(".ffn.b1", {cfg.d_ff()}, false);
        layer->ffn_w2 = mk(".ffn.w2", {cfg.d_ff(), cfg.d}, true);
        layer->ffn_b2 = mk(".ffn.b2", {cfg.d}, false);
        layer->ln1_g = mk(".ln1.g", {cfg.d}, false, 1.0);
        layer->ln1_b = mk(".ln1.b", {cfg.d}, false);
        if (with_cross) {
            layer->ln2_g = mk(".ln2.g", {cfg.d}, false, 1.0);
            layer->ln2_b = mk(".ln2.b", {cfg.d}, false);
        }
        layer->ln3_g = mk(".ln3.g", {cfg.d}, false, 1.0);
        layer->ln3_b = mk(".ln3.b", {cfg.d}, false);
        stack.push_back(layer);
    }
    return stack;
}

// Registers role aliases so a stack shared between roles is also reachable
// in the registry under the role's prefix.
template <typename Real>
void alias_encoder_stack(ParamRegistry<Real>& reg, const std::string& alias_prefix,
                         const std::string& canonical_prefix, std::size_t layers,
                         const EncoderConfig& cfg, bool with_cross) {
    auto al = [&](const std::string& suffix) {
        reg.alias(alias_prefix + suffix, canonical_prefix + suffix);
    };
    auto attn = [&](const std::string& base) {
        for (std::size_t i = 0; i < cfg.heads; ++i) {
            al(base + ".wq" + std::to_string(i));
            al(base + ".wk" + std::to_string(i));
            al(base + ".wv" + std::to_string(i));
        }
        al(base + ".wo");
    };
    for (std::size_t l = 0; l < layers; ++l) {
        std::string base = ".layer" + std::to_string(l);
        attn(base + ".self");
        if (with_cross) {
            attn(base + ".cross");
            al(base + ".ln2.g");
            al(base + ".ln2.b");
        }
        al(base + ".ffn.w1");
        al(base + ".ffn.b1");
        al(base + ".ffn.w2");
        al(base + ".ffn.b2");
        al(base + ".ln1.g");
        al(base + ".ln1.b");
        al(base + ".ln3.g");
        al(base + ".ln3.b");
    }
}

// Scaled dot-product attention over heads; keys flagged 0 in key_mask are
// never attended. Queries and keys/values may come from different sequences.
template <typename Real>
TensorPtr<Real> multi_head_attention(Tape<Real>& tape, const AttentionParams<Real>& ap,
                                     const TensorPtr<Real>& q_in, const TensorPtr<Real>& kv_in,
                                     const std::vector<std::uint8_t>& key_mask) {
    std::size_t dh = ap.wq[0]->shape[1];
    double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<TensorPtr<Real>> heads;
    heads.reserve(ap.wq.size());
    for (std::size_t i = 0; i < ap.wq.size(); ++i) {
        auto q = tape.matmul(q_in, ap.wq[i]);
        auto k = tape.matmul(kv_in, ap.wk[i]);
        auto v = tape.matmul(kv_in, ap.wv[i]);
        auto probs = tape.softmax_rows_masked(tape.scale(tape.matmul_nt(q, k), inv_scale), key_mask);
        heads.push_back(tape.matmul(probs, v));
    }
    return tape.matmul(tape.concat_cols(heads), ap.wo);
}

namespace detail {

// residual wrapper: LayerNorm(x + Dropout(sub))
template <typename Real>
TensorPtr<Real> wrap(Tape<Real>& tape, const TensorPtr<Real>& x, const TensorPtr<Real>& sub,
                     const TensorPtr<Real>& g, const TensorPtr<Real>& b, double dropout) {
    return tape.layer_norm_rows(tape.add(x, tape.dropout(sub, dropout)), g, b);
}

template <typename Real>
TensorPtr<Real> ffn(Tape<Real>& tape, const EncoderLayer<Real>& lay, const TensorPtr<Real>& x) {
    auto h = tape.relu(tape.add_rowvec(tape.matmul(x, lay.ffn_w1), lay.ffn_b1));
    return tape.add_rowvec(tape.matmul(h, lay.ffn_w2), lay.ffn_b2);
}

}  // namespace detail

// Dual-branch encoding: self-attention per branch, cross-attention that swaps
// key/value sources between branches, then a feed-forward block, each wrapped
// in dropout + residual + layer norm. The two stacks are the same objects when
// branch parameters are shared.
template <typename Real>
struct EncodedPair {
    TensorPtr<Real> product, query;
};

template <typename Real>
EncodedPair<Real> encode_search(Tape<Real>& tape, const EncoderStack<Real>& stack_p,
                                const EncoderStack<Real>& stack_q, TensorPtr<Real> hp,
                                TensorPtr<Real> hq, const std::vector<std::uint8_t>& mask_p,
                                const std::vector<std::uint8_t>& mask_q, double dropout) {
    if (stack_p.size() != stack_q.size()) throw ConfigError("branch stacks differ in depth");
    for (std::size_t l = 0; l < stack_p.size(); ++l) {
        const EncoderLayer<Real>& lp = *stack_p[l];
        const EncoderLayer<Real>& lq = *stack_q[l];
        auto sp = detail::wrap(tape, hp, multi_head_attention(tape, lp.self_attn, hp, hp, mask_p),
                               lp.ln1_g, lp.ln1_b, dropout);
        auto sq = detail::wrap(tape, hq, multi_head_attention(tape, lq.self_attn, hq, hq, mask_q),
                               lq.ln1_g, lq.ln1_b, dropout);
        auto cp = sp;
        auto cq = sq;
        if (lp.has_cross != lq.has_cross) throw ConfigError("branch stacks disagree on cross-attention");
        if (lp.has_cross) {
            cp = detail::wrap(tape, sp, multi_head_attention(tape, lp.cross_attn, sp, sq, mask_q),
                              lp.ln2_g, lp.ln2_b, dropout);
            cq = detail::wrap(tape, sq, multi_head_attention(tape, lq.cross_attn, sq, sp, mask_p),
                              lq.ln2_g, lq.ln2_b, dropout);
        }
        hp = detail::wrap(tape, cp, detail::ffn(tape, lp, cp), lp.ln3_g, lp.ln3_b, dropout);
        hq = detail::wrap(tape, cq, detail::ffn(tape, lq, cq), lq.ln3_g, lq.ln3_b, dropout);
    }
    return {hp, hq};
}

// Single-branch encoding: with no query sequence the cross-attention block
// degenerates to self-attention with its own (cross) projections.
template <typename Real>
TensorPtr<Real> encode_rec(Tape<Real>& tape, const EncoderStack<Real>& stack, TensorPtr<Real> hp,
                           const std::vector<std::uint8_t>& mask_p, double dropout) {
    for (const auto& layer : stack) {
        const EncoderLayer<Real>& lp = *layer;
        auto sp = detail::wrap(tape, hp, multi_head_attention(tape, lp.self_attn, hp, hp, mask_p),
                               lp.ln1_g, lp.ln1_b, dropout);
        auto cp = sp;
        if (lp.has_cross)
            cp = detail::wrap(tape, sp, multi_head_attention(tape, lp.cross_attn, sp, sp, mask_p),
                              lp.ln2_g, lp.ln2_b, dropout);
        hp = detail::wrap(tape, cp, detail::ffn(tape, lp, cp), lp.ln3_g, lp.ln3_b, dropout);
    }
    return hp;
}

// distinct-tensor element count across one or more stacks (shared layers count once)
template <typename Real>
std::size_t stack_param_elements(const std::vector<const EncoderStack<Real>*>& stacks) {
    std::unordered_set<const Tensor<Real>*> seen;
    std::size_t total = 0;
    auto visit = [&](const TensorPtr<Real>& t) {
        if (t && seen.insert(t.get()).second) total += t->numel();
    };
    for (const auto* stack : stacks)
        for (const auto& lay : *stack) {
            for (const auto& t : lay->self_attn.wq) visit(t);
            for (const auto& t : lay->self_attn.wk) visit(t);
            for (const auto& t : lay->self_attn.wv) visit(t);
            visit(lay->self_attn.wo);
            if (lay->has_cross) {
                for (const auto& t : lay->cross_attn.wq) visit(t);
                for (const auto& t : lay->cross_attn.wk) visit(t);
                for (const auto& t : lay->cross_attn.wv) visit(t);
                visit(lay->cross_attn.wo);
            }
            visit(lay->ffn_w1);
            visit(lay->ffn_b1);
            visit(lay->ffn_w2);
            visit(lay->ffn_b2);
            visit(lay->ln1_g);
            visit(lay->ln1_b);
            visit(lay->ln2_g);
            visit(lay->ln2_b);
            visit(lay->ln3_g);
            visit(lay->ln3_b);
        }
    return total;
}

}  // namespace searec
