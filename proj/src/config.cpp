#include "searec/config.hpp"

#include <cstdio>
#include <fstream>

namespace searec {

namespace {

// every document key must exist at the same path in the schema document
void check_unknown_keys(const nlohmann::json& doc, const nlohmann::json& schema,
                        const std::string& path) {
    if (!doc.is_object()) return;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        std::string sub = path.empty() ? it.key() : path + "." + it.key();
        if (!schema.is_object() || !schema.contains(it.key()))
            throw ConfigError("unknown config key: " + sub);
        check_unknown_keys(it.value(), schema.at(it.key()), sub);
    }
}

template <typename T>
void take(const nlohmann::json& j, const char* key, T& out, const std::string& section) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad value for " + section + "." + key + ": " + e.what());
    }
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& doc) {
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    RunConfig cfg;
    check_unknown_keys(doc, resolved_json(cfg), "");

    if (doc.contains("model")) {
        const auto& m = doc.at("model");
        take(m, "d", cfg.model.d, "model");
        take(m, "heads", cfg.model.heads, "model");
        take(m, "layers", cfg.model.layers, "model");
        take(m, "sessions", cfg.model.sessions, "model");
        take(m, "max_len", cfg.model.max_len, "model");
        take(m, "alpha", cfg.model.alpha, "model");
        take(m, "dropout", cfg.model.dropout, "model");
        take(m, "tau", cfg.model.tau, "model");
        take(m, "unconstrained_blend", cfg.model.unconstrained_blend, "model");
        take(m, "seed", cfg.model.seed, "model");
        if (m.contains("variant")) cfg.model.variant = variant_from(m.at("variant").get<std::string>());
    }
    if (doc.contains("train")) {
        const auto& t = doc.at("train");
        take(t, "batch", cfg.train.batch, "train");
        take(t, "pretrain_epochs", cfg.train.pretrain_epochs, "train");
        take(t, "finetune_epochs", cfg.train.finetune_epochs, "train");
        take(t, "warmup", cfg.train.warmup, "train");
        take(t, "lr_scale", cfg.train.lr_scale, "train");
        take(t, "negatives_train", cfg.train.negatives_train, "train");
        take(t, "eval_negatives", cfg.train.eval_negatives, "train");
        take(t, "seed", cfg.train.seed, "train");
        take(t, "precision", cfg.train.precision, "train");
        take(t, "threads", cfg.train.threads, "train");
        take(t, "early_stop", cfg.train.early_stop, "train");
        take(t, "patience", cfg.train.patience, "train");
        take(t, "alternation", cfg.train.alternation, "train");
        take(t, "max_prefixes", cfg.train.max_prefixes, "train");
        take(t, "min_interactions", cfg.train.min_interactions, "train");
    }
    if (cfg.train.precision != "f32" && cfg.train.precision != "f64")
        throw ConfigError("train.precision must be f32 or f64, got " + cfg.train.precision);
    if (cfg.train.alternation != "batch" && cfg.train.alternation != "epoch")
        throw ConfigError("train.alternation must be batch or epoch, got " + cfg.train.alternation);
    if (cfg.train.batch == 0) throw ConfigError("train.batch must be positive");
    if (cfg.train.warmup == 0) throw ConfigError("train.warmup must be positive");
    if (!(cfg.train.lr_scale > 0)) throw ConfigError("train.lr_scale must be positive");
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config is not valid JSON (" + path + "): " + e.what());
    }
    return parse_run_config(doc);
}

nlohmann::json resolved_json(const RunConfig& cfg) {
    return nlohmann::json{
        {"model",
         {{"d", cfg.model.d},
          {"heads", cfg.model.heads},
          {"layers", cfg.model.layers},
          {"sessions", cfg.model.sessions},
          {"max_len", cfg.model.max_len},
          {"alpha", cfg.model.alpha},
          {"dropout", cfg.model.dropout},
          {"tau", cfg.model.tau},
          {"unconstrained_blend", cfg.model.unconstrained_blend},
          {"seed", cfg.model.seed},
          {"variant", variant_name(cfg.model.variant)}}},
        {"train",
         {{"batch", cfg.train.batch},
          {"pretrain_epochs", cfg.train.pretrain_epochs},
          {"finetune_epochs", cfg.train.finetune_epochs},
          {"warmup", cfg.train.warmup},
          {"lr_scale", cfg.train.lr_scale},
          {"negatives_train", cfg.train.negatives_train},
          {"eval_negatives", cfg.train.eval_negatives},
          {"seed", cfg.train.seed},
          {"precision", cfg.train.precision},
          {"threads", cfg.train.threads},
          {"early_stop", cfg.train.early_stop},
          {"patience", cfg.train.patience},
          {"alternation", cfg.train.alternation},
          {"max_prefixes", cfg.train.max_prefixes},
          {"min_interactions", cfg.train.min_interactions}}}};
}

std::uint64_t config_hash(const nlohmann::json& j) { return hash_str(j.dump()); }

std::string config_hash_hex(const nlohmann::json& j) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(config_hash(j)));
    return buf;
}

}  // namespace searec
