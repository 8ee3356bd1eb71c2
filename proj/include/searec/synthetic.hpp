#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "searec/data.hpp"

#include <json.hpp>

namespace searec {

// Synthetic interaction logs with planted intents. Products and words are
// partitioned into disjoint per-intent pools. Each user lives through a few
// sessions per scenario; one session sticks to one intent, walks a successor
// chain inside that intent's product pool, and (for search) issues queries
// from the intent's word pool. Session boundaries get large time gaps and a
// ground-truth sidecar so segmentation quality can be scored later.
struct SyntheticConfig {
    std::size_t users = 2000;
    std::size_t products = 500;
    std::size_t words = 240;
    std::size_t intents = 8;
    std::size_t user_intents = 3;       // preferred intents drawn per user
    std::size_t sessions_min = 3, sessions_max = 4;
    std::size_t session_len_min = 5, session_len_max = 8;
    std::size_t query_words_min = 1, query_words_max = 3;
    double noise = 0.1;                 // chance a product is replaced by a uniform draw
    double step_prob = 0.9;             // chance the chain advances to the pool successor
    std::int64_t start_ts = 1600000000;
    std::int64_t gap_within_min = 60, gap_within_max = 600;
    std::int64_t gap_between_min = 86400, gap_between_max = 259200;
    std::uint64_t seed = 1;

    void validate() const;
    nlohmann::json to_json() const;
    static SyntheticConfig from_json(const nlohmann::json& j);  // strict
    static SyntheticConfig from_file(const std::string& path);
};

// ground truth for one (user, scenario) stream
struct BoundaryRecord {
    std::int32_t user = 0;
    Scenario scenario = Scenario::rec;
    std::vector<std::size_t> starts;   // session start positions, starts[0] == 0
    std::vector<std::size_t> intents;  // planted intent per session
};

struct SyntheticOutput {
    Dataset dataset;
    std::vector<BoundaryRecord> boundaries;
};

SyntheticOutput generate_synthetic(const SyntheticConfig& cfg);

// pool layout helpers (products 1-based; intent pools are contiguous)
std::size_t intent_of_product(const SyntheticConfig& cfg, std::int32_t product);
std::size_t intent_of_word(const SyntheticConfig& cfg, std::int32_t word);

void save_boundaries(const std::vector<BoundaryRecord>& bs, const std::string& path);
std::vector<BoundaryRecord> load_boundaries(const std::string& path);

}  // namespace searec
