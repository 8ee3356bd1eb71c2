#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>

#include "searec/config.hpp"

#include <json.hpp>

using namespace searec;
using nlohmann::json;

TEST_CASE("an empty document yields the defaults") {
    RunConfig cfg = parse_run_config(json::object());
    CHECK(cfg.model.d == 32);
    CHECK(cfg.model.heads == 2);
    CHECK(cfg.model.layers == 2);
    CHECK(cfg.model.sessions == 2);
    CHECK(cfg.model.alpha == 0.1);
    CHECK(cfg.model.variant == Variant::full);
    CHECK(cfg.train.batch == 128);
    CHECK(cfg.train.eval_negatives == 99);
    CHECK(cfg.train.precision == "f32");
    CHECK(cfg.train.alternation == "batch");
    CHECK_FALSE(cfg.train.early_stop);
}

TEST_CASE("every field survives a parse round trip") {
    json doc = {
        {"model",
         {{"d", 16}, {"heads", 4}, {"layers", 3}, {"sessions", 5}, {"max_len", 40},
          {"alpha", 0.25}, {"dropout", 0.05}, {"tau", 2.0}, {"unconstrained_blend", true},
          {"seed", 7}, {"variant", "split_branches"}}},
        {"train",
         {{"batch", 32}, {"pretrain_epochs", 9}, {"finetune_epochs", 4}, {"warmup", 100},
          {"lr_scale", 0.5}, {"negatives_train", 2}, {"eval_negatives", 50}, {"seed", 11},
          {"precision", "f64"}, {"threads", 2}, {"early_stop", true}, {"patience", 3},
          {"alternation", "epoch"}, {"max_prefixes", 6}, {"min_interactions", 4}}}};
    RunConfig cfg = parse_run_config(doc);
    CHECK(cfg.model.d == 16);
    CHECK(cfg.model.heads == 4);
    CHECK(cfg.model.layers == 3);
    CHECK(cfg.model.sessions == 5);
    CHECK(cfg.model.max_len == 40);
    CHECK(cfg.model.alpha == 0.25);
    CHECK(cfg.model.dropout == 0.05);
    CHECK(cfg.model.tau == 2.0);
    CHECK(cfg.model.unconstrained_blend);
    CHECK(cfg.model.seed == 7);
    CHECK(cfg.model.variant == Variant::split_branches);
    CHECK(cfg.train.batch == 32);
    CHECK(cfg.train.pretrain_epochs == 9);
    CHECK(cfg.train.finetune_epochs == 4);
    CHECK(cfg.train.warmup == 100);
    CHECK(cfg.train.lr_scale == 0.5);
    CHECK(cfg.train.negatives_train == 2);
    CHECK(cfg.train.eval_negatives == 50);
    CHECK(cfg.train.seed == 11);
    CHECK(cfg.train.precision == "f64");
    CHECK(cfg.train.threads == 2);
    CHECK(cfg.train.early_stop);
    CHECK(cfg.train.patience == 3);
    CHECK(cfg.train.alternation == "epoch");
    CHECK(cfg.train.max_prefixes == 6);
    CHECK(cfg.train.min_interactions == 4);

    // resolving and reparsing is a fixed point
    json resolved = resolved_json(cfg);
    RunConfig again = parse_run_config(resolved);
    CHECK(resolved_json(again) == resolved);
}

TEST_CASE("unknown keys are reported with their dotted path") {
    try {
        parse_run_config(json{{"train", {{"foo", 1}}}});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("train.foo") != std::string::npos);
    }
    try {
        parse_run_config(json{{"model", {{"depth", 3}}}});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("model.depth") != std::string::npos);
    }
    try {
        parse_run_config(json{{"bogus", json::object()}});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("bogus") != std::string::npos);
    }
}

TEST_CASE("bad values name the offending field") {
    try {
        parse_run_config(json{{"model", {{"d", "huge"}}}});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("model.d") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_run_config(json{{"train", {{"precision", "f16"}}}}), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json{{"train", {{"alternation", "steps"}}}}), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json{{"model", {{"variant", "nope"}}}}), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json{{"train", {{"batch", 0}}}}), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json{{"train", {{"warmup", 0}}}}), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json{{"train", {{"lr_scale", 0.0}}}}), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json::array({1, 2})), ConfigError);
}

TEST_CASE("config hashing tracks content") {
    RunConfig a, b;
    CHECK(config_hash(resolved_json(a)) == config_hash(resolved_json(b)));
    CHECK(config_hash_hex(resolved_json(a)).size() == 16);
    b.model.d = 64;
    CHECK(config_hash(resolved_json(a)) != config_hash(resolved_json(b)));
    b = a;
    b.train.seed = 43;
    CHECK(config_hash(resolved_json(a)) != config_hash(resolved_json(b)));
}

TEST_CASE("loading from disk") {
    std::string path = "test_config_tmp.json";
    {
        std::ofstream out(path);
        out << R"({"model": {"d": 8, "heads": 1}, "train": {"batch": 4}})";
    }
    RunConfig cfg = load_run_config(path);
    CHECK(cfg.model.d == 8);
    CHECK(cfg.model.heads == 1);
    CHECK(cfg.train.batch == 4);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_run_config(path), ConfigError);
    {
        std::ofstream out(path);
        out << "{not json";
    }
    CHECK_THROWS_AS(load_run_config(path), ConfigError);
    std::remove(path.c_str());
}
