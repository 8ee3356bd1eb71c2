#pragma once

#include <cstdint>
#include <string>

#include "searec/model.hpp"

#include <json.hpp>

namespace searec {

struct TrainSettings {
    std::size_t batch = 128;
    std::size_t pretrain_epochs = 100;
    std::size_t finetune_epochs = 100;
    std::size_t warmup = 4000;
    double lr_scale = 1.0;          // multiplier on the warmup-decay schedule
    std::size_t negatives_train = 1;
    std::size_t eval_negatives = 99;
    std::uint64_t seed = 42;
    std::string precision = "f32";  // f32 or f64
    std::size_t threads = 1;
    bool early_stop = false;        // fixed-epoch mode is the default
    std::size_t patience = 10;
    std::string alternation = "batch";  // pretrain scheduling: batch or epoch
    std::size_t max_prefixes = 0;   // cap on pretrain prefixes per chunk, 0 = all
    std::size_t min_interactions = 10;
};

struct RunConfig {
    ModelConfig model;   // vocab filled from the dataset manifest at load time
    TrainSettings train;
};

// Strict parsing: every key in the document must exist in the schema, or the
// full dotted path of the offender is reported. Values overwrite defaults.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);

// every field expanded, keys sorted (object order is canonical)
nlohmann::json resolved_json(const RunConfig& cfg);

std::uint64_t config_hash(const nlohmann::json& j);
std::string config_hash_hex(const nlohmann::json& j);

}  // namespace searec
