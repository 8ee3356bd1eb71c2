#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "searec/data.hpp"

using namespace searec;

namespace {

UserRecords rec_user(std::int32_t id, const std::vector<std::int32_t>& products) {
    UserRecords u;
    u.user = id;
    std::int64_t ts = 1000;
    for (auto p : products) u.rec.push_back({p, ts += 10});
    return u;
}

// one user with both streams, products 1..n over a large catalog
Dataset linear_dataset(std::size_t n, std::size_t catalog, std::size_t words) {
    Dataset ds;
    ds.manifest.users = 1;
    ds.manifest.products = catalog;
    ds.manifest.words = words;
    ds.manifest.max_len = 100;
    ds.manifest.pretrain_ratio = 0.8;
    UserRecords u;
    u.user = 1;
    for (std::size_t i = 0; i < n; ++i) {
        auto p = static_cast<std::int32_t>(i % catalog + 1);
        auto ts = static_cast<std::int64_t>(100 + 10 * i);
        u.rec.push_back({p, ts});
        SearchEvent ev;
        ev.product = p;
        ev.ts = ts;
        ev.words.push_back(static_cast<std::int32_t>(i % words + 1));
        u.search.push_back(ev);
    }
    ds.users.push_back(u);
    return ds;
}

}  // namespace

TEST_CASE("chunking walks the stream in fixed windows") {
    auto spans = chunk_spans(250, 100);
    REQUIRE(spans.size() == 3);
    CHECK(spans[0] == std::pair<std::size_t, std::size_t>{0, 100});
    CHECK(spans[1] == std::pair<std::size_t, std::size_t>{100, 200});
    CHECK(spans[2] == std::pair<std::size_t, std::size_t>{200, 250});
    CHECK(chunk_spans(0, 100).empty());
    CHECK(chunk_spans(200, 100).size() == 2);
    CHECK(chunk_spans(1, 100).size() == 1);
    CHECK_THROWS_AS(chunk_spans(10, 0), ConfigError);
}

TEST_CASE("chronological split carves pretrain, tuning, validation and test") {
    SplitIndices s = split_for(50, 0.8);
    CHECK(s.has_task);
    CHECK(s.pretrain_end == 40);
    CHECK(s.valid_idx == 48);
    CHECK(s.test_idx == 49);

    // the task region always keeps at least the two held-out targets
    s = split_for(5, 0.9);
    CHECK(s.pretrain_end == 3);
    CHECK(s.valid_idx == 3);
    CHECK(s.test_idx == 4);

    s = split_for(10, 0.8);
    CHECK(s.pretrain_end == 8);
    CHECK(s.valid_idx == 8);  // task training region is empty here
    CHECK(s.test_idx == 9);

    s = split_for(2, 0.8);
    CHECK(s.has_task);
    CHECK(s.pretrain_end == 0);

    CHECK_FALSE(split_for(1, 0.8).has_task);
    CHECK_FALSE(split_for(0, 0.8).has_task);
    CHECK_THROWS_AS(split_for(10, 1.0), ConfigError);
    CHECK_THROWS_AS(split_for(10, -0.1), ConfigError);
}

TEST_CASE("preprocessing prunes users and products to a fixpoint") {
    Dataset raw;
    raw.manifest.name = "toy";
    // product 12 appears once; dropping it sinks user 3 below the floor,
    // which keeps products 10 and 11 at exactly the floor
    raw.users.push_back(rec_user(3, {10, 12}));
    raw.users.push_back(rec_user(1, {10, 11}));
    raw.users.push_back(rec_user(2, {10, 11}));
    Dataset out = preprocess(raw, 2);
    REQUIRE(out.users.size() == 2);
    CHECK(out.manifest.users == 2);
    CHECK(out.manifest.products == 2);
    CHECK(out.manifest.rec_count == 4);
    CHECK(out.manifest.name == "toy");
    // users sorted and reindexed 1..n, products compacted in sorted order
    CHECK(out.users[0].user == 1);
    CHECK(out.users[1].user == 2);
    for (const auto& u : out.users) {
        REQUIRE(u.rec.size() == 2);
        CHECK(u.rec[0].product == 1);
        CHECK(u.rec[1].product == 2);
    }

    // a second pass changes nothing
    Dataset again = preprocess(out, 2);
    CHECK(again.manifest.to_json() == out.manifest.to_json());
    REQUIRE(again.users.size() == out.users.size());
    for (std::size_t i = 0; i < out.users.size(); ++i)
        CHECK(record_line(again.users[i]) == record_line(out.users[i]));
}

TEST_CASE("preprocessing sorts streams and remaps words") {
    Dataset raw;
    UserRecords u;
    u.user = 9;
    u.rec.push_back({5, 300});
    u.rec.push_back({5, 100});
    u.rec.push_back({5, 200});
    SearchEvent a;
    a.product = 5;
    a.ts = 50;
    a.words = {70, 30};
    SearchEvent b;
    b.product = 5;
    b.ts = 20;
    b.words = {30};
    u.search.push_back(a);
    u.search.push_back(b);
    raw.users.push_back(u);
    Dataset out = preprocess(raw, 1);
    REQUIRE(out.users.size() == 1);
    const UserRecords& w = out.users[0];
    CHECK(w.user == 1);
    CHECK(w.rec[0].ts == 100);
    CHECK(w.rec[1].ts == 200);
    CHECK(w.rec[2].ts == 300);
    CHECK(w.search[0].ts == 20);
    CHECK(w.search[1].ts == 50);
    // words 30, 70 -> 1, 2
    CHECK(w.search[0].words == std::vector<std::int32_t>{1});
    CHECK(w.search[1].words == std::vector<std::int32_t>{2, 1});
    CHECK(out.manifest.words == 2);

    CHECK_THROWS_AS(preprocess(raw, 100), DataError);
}

TEST_CASE("pretraining examples enumerate prefixes inside chunks") {
    Dataset ds = linear_dataset(10, 200, 8);
    ExampleBuildOptions opt;
    opt.negatives = 2;
    opt.seed = 5;
    // pretrain region is [0, 8): targets at 1..7
    auto rec = build_pretrain_examples(ds, Scenario::rec, opt);
    REQUIRE(rec.size() == 7);
    for (std::size_t i = 0; i < rec.size(); ++i) {
        const Example& ex = rec[i];
        CHECK(ex.scenario == Scenario::rec);
        CHECK(ex.valid_len == i + 1);
        CHECK(ex.products.size() == i + 1);
        CHECK(ex.timestamps.size() == i + 1);
        CHECK(ex.target == static_cast<std::int32_t>(i + 2));  // next product in the line
        CHECK(ex.queries.empty());
        CHECK(ex.negatives.size() == 2);
        for (std::size_t t = 0; t < ex.products.size(); ++t)
            CHECK(ex.products[t] == static_cast<std::int32_t>(t + 1));
    }
    auto sea = build_pretrain_examples(ds, Scenario::search, opt);
    REQUIRE(sea.size() == 7);
    for (const Example& ex : sea) {
        CHECK(ex.queries.size() == ex.valid_len + 1);  // history plus the target's query
        for (const auto& q : ex.queries) CHECK_FALSE(q.empty());
    }
}

TEST_CASE("long pretraining regions restart histories at chunk borders") {
    Dataset ds = linear_dataset(320, 400, 8);
    ds.manifest.max_len = 100;
    ExampleBuildOptions opt;
    opt.max_len = 100;
    // pretrain region 256 -> chunks of 100, 100, 56 with 99 + 99 + 55 prefixes
    auto ex = build_pretrain_examples(ds, Scenario::rec, opt);
    CHECK(ex.size() == 253);
    for (const Example& e : ex) {
        CHECK(e.valid_len <= 99);
        CHECK(e.products.size() == e.valid_len);
        // within a chunk the history starts at the chunk base, so the target
        // is always the product right after the last history entry
        CHECK(e.target == e.products.back() + 1);
    }

    opt.max_prefixes = 3;
    auto capped = build_pretrain_examples(ds, Scenario::rec, opt);
    CHECK(capped.size() == 9);
    for (const Example& e : capped) CHECK(e.valid_len >= 53);  // only the longest prefixes remain
}

TEST_CASE("task examples window the full history and stay chronological") {
    Dataset ds = linear_dataset(50, 200, 8);
    ExampleBuildOptions opt;
    opt.negatives = 1;
    auto train = build_task_examples(ds, Scenario::rec, ExamplePurpose::task_train, opt);
    auto valid = build_task_examples(ds, Scenario::rec, ExamplePurpose::valid, opt);
    auto test = build_task_examples(ds, Scenario::rec, ExamplePurpose::test, opt);
    REQUIRE(train.size() == 8);  // targets 40..47
    REQUIRE(valid.size() == 1);
    REQUIRE(test.size() == 1);
    for (std::size_t i = 0; i < train.size(); ++i) {
        CHECK(train[i].valid_len == 40 + i);
        CHECK(train[i].target == static_cast<std::int32_t>(41 + i));
    }
    CHECK(valid[0].valid_len == 48);
    CHECK(valid[0].target == 49);
    CHECK(test[0].valid_len == 49);
    CHECK(test[0].target == 50);

    // every training target precedes the validation target, which precedes
    // the test target
    for (const Example& e : train) {
        CHECK(e.timestamps.back() < valid[0].timestamps.back());
        CHECK(static_cast<std::size_t>(e.target) < static_cast<std::size_t>(valid[0].target));
    }
    CHECK(valid[0].target < test[0].target);

    // a short window keeps only the newest history
    opt.max_len = 10;
    auto windowed = build_task_examples(ds, Scenario::rec, ExamplePurpose::test, opt);
    REQUIRE(windowed.size() == 1);
    CHECK(windowed[0].valid_len == 10);
    CHECK(windowed[0].products.front() == 40);  // positions 39..48 hold products 40..49
    CHECK(windowed[0].target == 50);

    auto sea = build_task_examples(ds, Scenario::search, ExamplePurpose::test, opt);
    REQUIRE(sea.size() == 1);
    CHECK(sea[0].queries.size() == sea[0].valid_len + 1);

    CHECK_THROWS_AS(build_task_examples(ds, Scenario::rec, ExamplePurpose::pretrain, opt),
                    ConfigError);
}

TEST_CASE("negative sampling is deterministic, exclusive and replacement-free") {
    std::unordered_set<std::int32_t> owned{3, 7, 11};
    auto a = sample_negatives(owned, 5, 99, 500, 42, 17, ExamplePurpose::test, 4);
    auto b = sample_negatives(owned, 5, 99, 500, 42, 17, ExamplePurpose::test, 4);
    CHECK(a == b);
    REQUIRE(a.size() == 99);
    std::set<std::int32_t> uniq(a.begin(), a.end());
    CHECK(uniq.size() == 99);
    for (auto n : a) {
        CHECK(n >= 1);
        CHECK(n <= 500);
        CHECK(n != 5);
        CHECK(owned.count(n) == 0);
    }
    // any coordinate change reseeds the draw
    CHECK(a != sample_negatives(owned, 5, 99, 500, 43, 17, ExamplePurpose::test, 4));
    CHECK(a != sample_negatives(owned, 5, 99, 500, 42, 18, ExamplePurpose::test, 4));
    CHECK(a != sample_negatives(owned, 5, 99, 500, 42, 17, ExamplePurpose::valid, 4));
    CHECK(a != sample_negatives(owned, 5, 99, 500, 42, 17, ExamplePurpose::test, 5));
    // 4 blocked ids + 99 requested needs at least 104 products
    CHECK_THROWS_AS(sample_negatives(owned, 5, 99, 103, 42, 17, ExamplePurpose::test, 4),
                    DataError);
    CHECK_NOTHROW(sample_negatives(owned, 5, 99, 104, 42, 17, ExamplePurpose::test, 4));
}

TEST_CASE("example identity is stable across rebuilds") {
    Dataset ds = linear_dataset(30, 100, 8);
    ExampleBuildOptions opt;
    opt.negatives = 3;
    auto once = build_task_examples(ds, Scenario::search, ExamplePurpose::test, opt);
    auto twice = build_task_examples(ds, Scenario::search, ExamplePurpose::test, opt);
    REQUIRE(once.size() == twice.size());
    for (std::size_t i = 0; i < once.size(); ++i) {
        CHECK(once[i].products == twice[i].products);
        CHECK(once[i].negatives == twice[i].negatives);
        CHECK(once[i].queries == twice[i].queries);
    }
}

TEST_CASE("record serialization round trips through disk") {
    Dataset ds = linear_dataset(6, 20, 4);
    ds.manifest.name = "roundtrip";
    ds.manifest.seed = 3;
    std::string rp = "test_data_records_tmp.jsonl", mp = "test_data_manifest_tmp.json";
    save_dataset(ds, rp, mp);
    Dataset back = load_dataset(rp, mp);
    CHECK(back.manifest.to_json() == ds.manifest.to_json());
    REQUIRE(back.users.size() == ds.users.size());
    for (std::size_t i = 0; i < ds.users.size(); ++i)
        CHECK(record_line(back.users[i]) == record_line(ds.users[i]));
    std::remove(rp.c_str());
    std::remove(mp.c_str());
}

TEST_CASE("malformed record lines are rejected with their line number") {
    std::string path = "test_data_bad_tmp.jsonl";
    auto expect_error = [&](const std::string& line, const std::string& needle) {
        std::ofstream out(path);
        out << R"({"user": 1, "rec": [[2, 10]]})" << "\n" << line << "\n";
        out.close();
        try {
            load_records(path);
            FAIL("expected DataError for: ", line);
        } catch (const DataError& e) {
            std::string msg = e.what();
            CHECK(msg.find("line 2") != std::string::npos);
            CHECK(msg.find(needle) != std::string::npos);
        }
    };
    expect_error(R"({"user": 2, "recs": []})", "unknown key");
    expect_error(R"({"user": 0})", "positive");
    expect_error(R"({"user": 2, "rec": [[0, 5]]})", "bad product");
    expect_error(R"({"user": 2, "search": [[3, 5, []]]})", "without query words");
    expect_error(R"({"user": 2, "search": [[3, 5, [0]]]})", "bad word");
    expect_error("{broken", "line 2");
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_records("does_not_exist.jsonl"), DataError);
}

TEST_CASE("manifest parsing is strict") {
    nlohmann::json good{{"users", 3}, {"products", 5}, {"words", 2}};
    DatasetManifest m = DatasetManifest::from_json(good);
    CHECK(m.users == 3);
    CHECK(m.max_len == 100);
    CHECK(m.pretrain_ratio == 0.8);
    good["typo"] = 1;
    CHECK_THROWS_AS(DatasetManifest::from_json(good), ConfigError);
}
