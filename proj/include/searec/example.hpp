#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "searec/common.hpp"

namespace searec {

enum class Scenario { search, rec };

inline const char* scenario_name(Scenario s) { return s == Scenario::search ? "search" : "rec"; }

inline Scenario scenario_from(const std::string& s) {
    if (s == "search") return Scenario::search;
    if (s == "rec") return Scenario::rec;
    throw DataError("unknown scenario: " + s);
}

// One training or evaluation instance. products[0..valid_len) is the history,
// ids are 1-based with 0 reserved for padding, and positions at or beyond
// valid_len are padding. For the search scenario, queries has valid_len + 1
// rows: the history queries plus the query issued for the target interaction.
struct Example {
    std::int32_t user = 0;
    Scenario scenario = Scenario::rec;
    std::vector<std::int32_t> products;
    std::vector<std::vector<std::int32_t>> queries;
    std::vector<std::int64_t> timestamps;   // optional, one per valid position
    std::size_t valid_len = 0;
    std::int32_t target = 0;
    std::vector<std::int32_t> negatives;
};

}  // namespace searec
