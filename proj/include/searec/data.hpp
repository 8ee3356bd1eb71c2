#pragma once

#include <cstdint>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "searec/example.hpp"

#include <json.hpp>

namespace searec {

// One user's raw interaction streams. Each scenario is a chronologically
// sorted sequence; ids are 1-based after preprocessing.
struct RecEvent {
    std::int32_t product = 0;
    std::int64_t ts = 0;
};

struct SearchEvent {
    std::int32_t product = 0;
    std::int64_t ts = 0;
    std::vector<std::int32_t> words;
};

struct UserRecords {
    std::int32_t user = 0;
    std::vector<RecEvent> rec;
    std::vector<SearchEvent> search;

    std::size_t total() const { return rec.size() + search.size(); }
};

struct DatasetManifest {
    std::size_t users = 0, products = 0, words = 0;
    std::size_t rec_count = 0, search_count = 0;
    std::size_t max_len = 100;
    double pretrain_ratio = 0.8;
    std::uint64_t seed = 0;
    std::string name;

    nlohmann::json to_json() const;
    static DatasetManifest from_json(const nlohmann::json& j);  // strict
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<UserRecords> users;  // sorted by user id
};

// JSONL wire format, one user per line:
//   {"user": 7, "rec": [[product, ts], ...], "search": [[product, ts, [word...]], ...]}
Dataset load_dataset(const std::string& records_path, const std::string& manifest_path);
std::vector<UserRecords> load_records(const std::string& records_path);
void save_dataset(const Dataset& ds, const std::string& records_path,
                  const std::string& manifest_path);
std::string record_line(const UserRecords& u);

// Iterated filtering to a fixpoint (users and products below the interaction
// floor drop each other out), chronological sort, then compact 1-based
// reindexing of surviving users, products, and words.
Dataset preprocess(const Dataset& raw, std::size_t min_interactions);

// consecutive non-overlapping windows, e.g. 250 -> [0,100) [100,200) [200,250)
std::vector<std::pair<std::size_t, std::size_t>> chunk_spans(std::size_t len, std::size_t max_len);

// Per-stream chronological carve: the first floor(ratio * len) interactions
// feed pretraining; within the remainder the newest is the test target, the
// second newest validates, everything before them fine-tunes.
struct SplitIndices {
    std::size_t pretrain_end = 0;  // first task position
    std::size_t valid_idx = 0;     // len - 2
    std::size_t test_idx = 0;      // len - 1
    bool has_task = false;         // false when the stream is too short
};
SplitIndices split_for(std::size_t len, double pretrain_ratio);

enum class ExamplePurpose { pretrain, task_train, valid, test };
const char* purpose_name(ExamplePurpose p);

struct ExampleBuildOptions {
    std::size_t max_len = 100;
    std::size_t negatives = 1;       // per example; evaluation uses 99
    std::uint64_t seed = 42;
    std::size_t max_prefixes = 0;    // cap per chunk for pretrain examples, 0 = all
    double pretrain_ratio = 0.8;
};

// Prefix examples inside length-capped chunks of the pretraining region.
std::vector<Example> build_pretrain_examples(const Dataset& ds, Scenario sc,
                                             const ExampleBuildOptions& opt);
// Task examples: one per (user, target position in the task region), history
// is the full chronological prefix windowed to the last max_len interactions.
std::vector<Example> build_task_examples(const Dataset& ds, Scenario sc, ExamplePurpose purpose,
                                         const ExampleBuildOptions& opt);

// Uniform over the catalog minus the user's products and the target, without
// replacement; deterministic for a given (seed, user, purpose, slot).
std::vector<std::int32_t> sample_negatives(const std::unordered_set<std::int32_t>& user_products,
                                           std::int32_t target, std::size_t n,
                                           std::size_t catalog, std::uint64_t seed,
                                           std::int32_t user, ExamplePurpose purpose,
                                           std::size_t slot);

}  // namespace searec
