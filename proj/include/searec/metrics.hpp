#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "searec/common.hpp"

#include <json.hpp>

namespace searec {

// 1-based rank of the candidate at pos_index when scores are sorted
// descending; ties resolve by candidate index (lower index ranks first)
std::size_t rank_of(const std::vector<double>& scores, std::size_t pos_index);

// diagnostic variant: ties resolve by a random draw instead of by index
std::size_t rank_of_random(const std::vector<double>& scores, std::size_t pos_index,
                           std::mt19937_64& rng);

double hr_at(std::size_t rank, std::size_t k);
double ndcg_at(std::size_t rank, std::size_t k);

struct MetricsReport {
    std::string scenario;
    std::string variant = "full";
    std::uint64_t seed = 0;
    std::string config_hash;
    std::size_t n_users = 0;
    double hr5 = 0, hr10 = 0, ndcg5 = 0, ndcg10 = 0;

    void validate() const;  // metric sanity bounds, throws NumericError
    nlohmann::json to_json() const;
    static MetricsReport from_json(const nlohmann::json& j);
    std::string table() const;  // aligned plain-text rendering
};

// averages HR@{5,10} and NDCG@{5,10} over per-user ranks
MetricsReport aggregate_ranks(const std::vector<std::size_t>& ranks);

}  // namespace searec
