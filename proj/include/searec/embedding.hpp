#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "searec/common.hpp"
#include "searec/example.hpp"
#include "searec/init.hpp"
#include "searec/registry.hpp"
#include "searec/tape.hpp"

namespace searec {

struct VocabSizes {
    std::size_t users = 0;     // real ids 1..users
    std::size_t products = 0;  // real ids 1..products
    std::size_t words = 0;     // real ids 1..words
};

template <typename Real>
struct EmbeddingTables {
    TensorPtr<Real> user, product, word;  // row 0 is the pad row, held at zero
    TensorPtr<Real> pos;                  // sinusoidal, constant, (max_len + 2) rows
};

template <typename Real>
inline std::vector<Real> sinusoid_row(std::size_t t, std::size_t d) {
    std::vector<Real> row(d);
    for (std::size_t j = 0; j < d; ++j) {
        double freq = std::pow(10000.0, -static_cast<double>(j - (j % 2)) / static_cast<double>(d));
        double angle = static_cast<double>(t) * freq;
        row[j] = static_cast<Real>(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
    return row;
}

template <typename Real>
EmbeddingTables<Real> build_embedding_tables(ParamRegistry<Real>& registry, const VocabSizes& vocab,
                                             std::size_t d, std::size_t max_len,
                                             std::uint64_t seed) {
    auto make_table = [&](const char* name, std::size_t count) {
        auto t = make_tensor<Real>({count + 1, d});
        xavier_fill(*t, mix_seed({seed, hash_str(name)}));
        for (std::size_t j = 0; j < d; ++j) t->values[j] = Real(0);  // pad row
        return registry.add(name, t);
    };
    EmbeddingTables<Real> tables;
    tables.user = make_table("embed.user", vocab.users);
    tables.product = make_table("embed.product", vocab.products);
    tables.word = make_table("embed.word", vocab.words);
    // query sequences run one position past the product sequence
    auto pos = make_tensor<Real>({max_len + 2, d});
    for (std::size_t t = 0; t < max_len + 2; ++t) {
        auto row = sinusoid_row<Real>(t, d);
        for (std::size_t j = 0; j < d; ++j) pos->values[t * d + j] = row[j];
    }
    tables.pos = pos;
    return tables;
}

// Mean of the non-pad word embeddings. An empty pool yields a zero vector and
// bumps the tape counter so callers can see how often it happens.
template <typename Real>
TensorPtr<Real> embed_query_words(Tape<Real>& tape, const EmbeddingTables<Real>& tables,
                                  const std::vector<std::int32_t>& words) {
    std::vector<std::int32_t> live;
    live.reserve(words.size());
    for (std::int32_t w : words)
        if (w != 0) live.push_back(w);
    if (live.empty()) {
        tape.stats.empty_query_pools += 1;
        return make_tensor<Real>({tables.word->shape[1]});
    }
    return tape.mean_rows(tape.gather_rows(tables.word, live, 0));
}

template <typename Real>
TensorPtr<Real> user_embedding(Tape<Real>& tape, const EmbeddingTables<Real>& tables,
                               std::int32_t user) {
    if (user <= 0) throw DataError("user id must be positive, got " + std::to_string(user));
    return tape.row(tape.gather_rows(tables.user, {user}, 0), 0);
}

namespace detail {

// adds the user embedding on valid rows and the positional code everywhere
template <typename Real>
TensorPtr<Real> finish_sequence(Tape<Real>& tape, const EmbeddingTables<Real>& tables,
                                TensorPtr<Real> base, const TensorPtr<Real>& user_vec,
                                std::size_t valid_len) {
    std::size_t t_total = base->shape[0], d = base->shape[1];
    auto mask = make_tensor<Real>({t_total, d});
    for (std::size_t t = 0; t < valid_len; ++t)
        for (std::size_t j = 0; j < d; ++j) mask->values[t * d + j] = Real(1);
    auto with_user = tape.add(base, tape.mul(tape.broadcast_rows(user_vec, t_total), mask));
    return tape.add(with_user, tape.slice_rows(tables.pos, 0, t_total));
}

}  // namespace detail

// (T x d) input for the interacted-product branch
template <typename Real>
TensorPtr<Real> product_sequence_input(Tape<Real>& tape, const EmbeddingTables<Real>& tables,
                                       const Example& ex, std::size_t max_len) {
    if (ex.products.size() > max_len)
        throw DataError("sequence length " + std::to_string(ex.products.size()) +
                        " exceeds max_len " + std::to_string(max_len));
    if (ex.valid_len > ex.products.size() || ex.valid_len == 0)
        throw DataError("valid_len " + std::to_string(ex.valid_len) + " out of range");
    for (std::size_t t = ex.valid_len; t < ex.products.size(); ++t)
        if (ex.products[t] != 0) throw DataError("non-pad product after valid region");
    auto base = tape.gather_rows(tables.product, ex.products, 0);
    auto u = user_embedding(tape, tables, ex.user);
    return detail::finish_sequence(tape, tables, base, u, ex.valid_len);
}

// ((T + 1) x d) input for the issued-query branch; row T is the current query
template <typename Real>
TensorPtr<Real> query_sequence_input(Tape<Real>& tape, const EmbeddingTables<Real>& tables,
                                     const Example& ex, std::size_t max_len) {
    if (ex.scenario != Scenario::search) throw DataError("query branch on a non-search example");
    if (ex.queries.size() != ex.valid_len + 1)
        throw DataError("expected " + std::to_string(ex.valid_len + 1) + " query rows, got " +
                        std::to_string(ex.queries.size()));
    std::size_t t_total = ex.products.size() + 1;
    if (t_total > max_len + 1)
        throw DataError("query sequence length " + std::to_string(t_total) + " exceeds max_len+1");
    std::vector<TensorPtr<Real>> rows;
    rows.reserve(t_total);
    for (std::size_t t = 0; t < t_total; ++t) {
        if (t < ex.queries.size())
            rows.push_back(embed_query_words(tape, tables, ex.queries[t]));
        else
            rows.push_back(make_tensor<Real>({tables.word->shape[1]}));
    }
    auto base = tape.stack_rows(rows);
    auto u = user_embedding(tape, tables, ex.user);
    return detail::finish_sequence(tape, tables, base, u, ex.valid_len + 1);
}

inline std::vector<std::uint8_t> valid_mask(std::size_t t_total, std::size_t valid) {
    std::vector<std::uint8_t> m(t_total, 0);
    for (std::size_t t = 0; t < valid && t < t_total; ++t) m[t] = 1;
    return m;
}

}  // namespace searec
