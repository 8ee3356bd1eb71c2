#include "searec/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "searec/common.hpp"

namespace searec {

nlohmann::json DatasetManifest::to_json() const {
    return nlohmann::json{{"users", users},
                          {"products", products},
                          {"words", words},
                          {"rec_count", rec_count},
                          {"search_count", search_count},
                          {"max_len", max_len},
                          {"pretrain_ratio", pretrain_ratio},
                          {"seed", seed},
                          {"name", name}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
    DatasetManifest m;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k != "users" && k != "products" && k != "words" && k != "rec_count" &&
            k != "search_count" && k != "max_len" && k != "pretrain_ratio" && k != "seed" &&
            k != "name")
            throw ConfigError("unknown manifest key: " + k);
    }
    m.users = j.at("users").get<std::size_t>();
    m.products = j.at("products").get<std::size_t>();
    m.words = j.at("words").get<std::size_t>();
    m.rec_count = j.value("rec_count", std::size_t(0));
    m.search_count = j.value("search_count", std::size_t(0));
    m.max_len = j.value("max_len", std::size_t(100));
    m.pretrain_ratio = j.value("pretrain_ratio", 0.8);
    m.seed = j.value("seed", std::uint64_t(0));
    m.name = j.value("name", std::string());
    return m;
}

namespace {

UserRecords parse_record_line(const std::string& line, std::size_t lineno) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("records line " + std::to_string(lineno) + ": " + e.what());
    }
    UserRecords u;
    for (auto it = j.begin(); it != j.end(); ++it)
        if (it.key() != "user" && it.key() != "rec" && it.key() != "search")
            throw DataError("records line " + std::to_string(lineno) + ": unknown key " + it.key());
    u.user = j.at("user").get<std::int32_t>();
    if (u.user <= 0)
        throw DataError("records line " + std::to_string(lineno) + ": user id must be positive");
    if (j.contains("rec"))
        for (const auto& e : j.at("rec")) {
            RecEvent ev;
            ev.product = e.at(0).get<std::int32_t>();
            ev.ts = e.at(1).get<std::int64_t>();
            if (ev.product <= 0)
                throw DataError("records line " + std::to_string(lineno) + ": bad product id");
            u.rec.push_back(ev);
        }
    if (j.contains("search"))
        for (const auto& e : j.at("search")) {
            SearchEvent ev;
            ev.product = e.at(0).get<std::int32_t>();
            ev.ts = e.at(1).get<std::int64_t>();
            for (const auto& w : e.at(2)) {
                auto wid = w.get<std::int32_t>();
                if (wid <= 0)
                    throw DataError("records line " + std::to_string(lineno) + ": bad word id");
                ev.words.push_back(wid);
            }
            if (ev.words.empty())
                throw DataError("records line " + std::to_string(lineno) +
                                ": search event without query words");
            if (ev.product <= 0)
                throw DataError("records line " + std::to_string(lineno) + ": bad product id");
            u.search.push_back(ev);
        }
    return u;
}

}  // namespace

std::vector<UserRecords> load_records(const std::string& records_path) {
    std::ifstream in(records_path);
    if (!in) throw DataError("cannot open records file: " + records_path);
    std::vector<UserRecords> users;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        users.push_back(parse_record_line(line, lineno));
    }
    return users;
}

Dataset load_dataset(const std::string& records_path, const std::string& manifest_path) {
    Dataset ds;
    std::ifstream in(manifest_path);
    if (!in) throw DataError("cannot open manifest file: " + manifest_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest is not valid JSON (" + manifest_path + "): " + e.what());
    }
    ds.manifest = DatasetManifest::from_json(j);
    ds.users = load_records(records_path);
    return ds;
}

std::string record_line(const UserRecords& u) {
    nlohmann::json rec = nlohmann::json::array();
    for (const auto& e : u.rec) rec.push_back({e.product, e.ts});
    nlohmann::json search = nlohmann::json::array();
    for (const auto& e : u.search) search.push_back({e.product, e.ts, e.words});
    return nlohmann::json{{"user", u.user}, {"rec", rec}, {"search", search}}.dump();
}

void save_dataset(const Dataset& ds, const std::string& records_path,
                  const std::string& manifest_path) {
    std::ofstream rec(records_path);
    if (!rec) throw DataError("cannot write records file: " + records_path);
    for (const auto& u : ds.users) rec << record_line(u) << "\n";
    std::ofstream man(manifest_path);
    if (!man) throw DataError("cannot write manifest file: " + manifest_path);
    man << ds.manifest.to_json().dump(2) << "\n";
}

Dataset preprocess(const Dataset& raw, std::size_t min_interactions) {
    std::vector<UserRecords> users = raw.users;
    std::sort(users.begin(), users.end(),
              [](const UserRecords& a, const UserRecords& b) { return a.user < b.user; });
    for (auto& u : users) {
        std::stable_sort(u.rec.begin(), u.rec.end(),
                         [](const RecEvent& a, const RecEvent& b) { return a.ts < b.ts; });
        std::stable_sort(u.search.begin(), u.search.end(),
                         [](const SearchEvent& a, const SearchEvent& b) { return a.ts < b.ts; });
    }

    // users and products prune each other until nothing changes
    bool changed = true;
    while (changed) {
        changed = false;
        std::map<std::int32_t, std::size_t> product_count;
        for (const auto& u : users) {
            for (const auto& e : u.rec) product_count[e.product] += 1;
            for (const auto& e : u.search) product_count[e.product] += 1;
        }
        std::unordered_set<std::int32_t> dead;
        for (const auto& kv : product_count)
            if (kv.second < min_interactions) dead.insert(kv.first);
        if (!dead.empty()) {
            for (auto& u : users) {
                auto drop_rec = [&](const RecEvent& e) { return dead.count(e.product) > 0; };
                auto drop_sea = [&](const SearchEvent& e) { return dead.count(e.product) > 0; };
                std::size_t before = u.total();
                u.rec.erase(std::remove_if(u.rec.begin(), u.rec.end(), drop_rec), u.rec.end());
                u.search.erase(std::remove_if(u.search.begin(), u.search.end(), drop_sea),
                               u.search.end());
                if (u.total() != before) changed = true;
            }
        }
        std::size_t before_users = users.size();
        users.erase(std::remove_if(users.begin(), users.end(),
                                   [&](const UserRecords& u) {
                                       return u.total() < min_interactions;
                                   }),
                    users.end());
        if (users.size() != before_users) changed = true;
    }
    if (users.empty())
        throw DataError("preprocessing removed every user (started with " +
                        std::to_string(raw.users.size()) + ", interaction floor " +
                        std::to_string(min_interactions) + ")");

    // compact 1-based reindexing in sorted id order
    std::map<std::int32_t, std::int32_t> user_map, product_map, word_map;
    for (const auto& u : users) user_map.emplace(u.user, 0);
    for (const auto& u : users) {
        for (const auto& e : u.rec) product_map.emplace(e.product, 0);
        for (const auto& e : u.search) {
            product_map.emplace(e.product, 0);
            for (std::int32_t w : e.words) word_map.emplace(w, 0);
        }
    }
    std::int32_t next = 1;
    for (auto& kv : user_map) kv.second = next++;
    next = 1;
    for (auto& kv : product_map) kv.second = next++;
    next = 1;
    for (auto& kv : word_map) kv.second = next++;

    Dataset out;
    out.manifest = raw.manifest;
    out.manifest.users = user_map.size();
    out.manifest.products = product_map.size();
    out.manifest.words = word_map.size();
    out.manifest.rec_count = 0;
    out.manifest.search_count = 0;
    for (auto& u : users) {
        u.user = user_map.at(u.user);
        for (auto& e : u.rec) e.product = product_map.at(e.product);
        for (auto& e : u.search) {
            e.product = product_map.at(e.product);
            for (auto& w : e.words) w = word_map.at(w);
        }
        out.manifest.rec_count += u.rec.size();
        out.manifest.search_count += u.search.size();
    }
    out.users = std::move(users);
    return out;
}

std::vector<std::pair<std::size_t, std::size_t>> chunk_spans(std::size_t len, std::size_t max_len) {
    if (max_len == 0) throw ConfigError("max_len must be positive");
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (std::size_t start = 0; start < len; start += max_len)
        spans.emplace_back(start, std::min(len, start + max_len));
    return spans;
}

SplitIndices split_for(std::size_t len, double pretrain_ratio) {
    if (!(pretrain_ratio >= 0.0 && pretrain_ratio < 1.0))
        throw ConfigError("pretrain ratio must be in [0, 1)");
    SplitIndices s;
    if (len < 2) {
        s.pretrain_end = len;
        return s;
    }
    s.pretrain_end = static_cast<std::size_t>(pretrain_ratio * static_cast<double>(len));
    // the task region must hold at least the validation and test targets
    if (s.pretrain_end > len - 2) s.pretrain_end = len - 2;
    s.valid_idx = len - 2;
    s.test_idx = len - 1;
    s.has_task = true;
    return s;
}

const char* purpose_name(ExamplePurpose p) {
    switch (p) {
        case ExamplePurpose::pretrain: return "pretrain";
        case ExamplePurpose::task_train: return "task_train";
        case ExamplePurpose::valid: return "valid";
        case ExamplePurpose::test: return "test";
    }
    throw ConfigError("unknown example purpose");
}

namespace {

// scenario-agnostic view over one user's stream
struct StreamView {
    std::vector<std::int32_t> products;
    std::vector<std::int64_t> ts;
    std::vector<const std::vector<std::int32_t>*> words;  // null for rec

    std::size_t size() const { return products.size(); }
};

StreamView stream_of(const UserRecords& u, Scenario sc) {
    StreamView v;
    if (sc == Scenario::rec) {
        for (const auto& e : u.rec) {
            v.products.push_back(e.product);
            v.ts.push_back(e.ts);
            v.words.push_back(nullptr);
        }
    } else {
        for (const auto& e : u.search) {
            v.products.push_back(e.product);
            v.ts.push_back(e.ts);
            v.words.push_back(&e.words);
        }
    }
    return v;
}

std::unordered_set<std::int32_t> products_of(const UserRecords& u) {
    std::unordered_set<std::int32_t> s;
    for (const auto& e : u.rec) s.insert(e.product);
    for (const auto& e : u.search) s.insert(e.product);
    return s;
}

// history [h0, target_pos) with the target at target_pos
Example make_example(const StreamView& sv, const UserRecords& u, Scenario sc, std::size_t h0,
                     std::size_t target_pos) {
    Example ex;
    ex.user = u.user;
    ex.scenario = sc;
    ex.valid_len = target_pos - h0;
    ex.products.assign(sv.products.begin() + h0, sv.products.begin() + target_pos);
    ex.timestamps.assign(sv.ts.begin() + h0, sv.ts.begin() + target_pos);
    ex.target = sv.products[target_pos];
    if (sc == Scenario::search) {
        for (std::size_t t = h0; t <= target_pos; ++t) ex.queries.push_back(*sv.words[t]);
    }
    return ex;
}

}  // namespace

std::vector<std::int32_t> sample_negatives(const std::unordered_set<std::int32_t>& user_products,
                                           std::int32_t target, std::size_t n,
                                           std::size_t catalog, std::uint64_t seed,
                                           std::int32_t user, ExamplePurpose purpose,
                                           std::size_t slot) {
    std::size_t blocked = user_products.size() + (user_products.count(target) ? 0 : 1);
    if (catalog <= blocked + n)
        throw DataError("catalog of " + std::to_string(catalog) + " products cannot supply " +
                        std::to_string(n) + " negatives around " + std::to_string(blocked) +
                        " blocked ids");
    std::mt19937_64 rng(mix_seed({seed, static_cast<std::uint64_t>(user),
                                  hash_str(purpose_name(purpose)),
                                  static_cast<std::uint64_t>(slot)}));
    std::vector<std::int32_t> out;
    std::unordered_set<std::int32_t> taken;
    while (out.size() < n) {
        auto cand = static_cast<std::int32_t>(
            uniform_int(rng, 1, static_cast<std::int64_t>(catalog)));
        if (cand == target || user_products.count(cand) || taken.count(cand)) continue;
        taken.insert(cand);
        out.push_back(cand);
    }
    return out;
}

std::vector<Example> build_pretrain_examples(const Dataset& ds, Scenario sc,
                                             const ExampleBuildOptions& opt) {
    std::vector<Example> out;
    for (const auto& u : ds.users) {
        StreamView sv = stream_of(u, sc);
        if (sv.size() < 2) continue;
        SplitIndices sp = split_for(sv.size(), opt.pretrain_ratio);
        if (sp.pretrain_end < 2) continue;
        auto user_prods = products_of(u);
        for (auto [c0, c1] : chunk_spans(sp.pretrain_end, opt.max_len)) {
            if (c1 - c0 < 2) continue;
            std::size_t first = 1;
            if (opt.max_prefixes > 0 && c1 - c0 - 1 > opt.max_prefixes)
                first = (c1 - c0 - 1) - opt.max_prefixes + 1;
            for (std::size_t i = first; c0 + i < c1; ++i) {
                Example ex = make_example(sv, u, sc, c0, c0 + i);
                std::size_t slot = 2 * (c0 + i) + (sc == Scenario::search ? 1 : 0);
                ex.negatives =
                    sample_negatives(user_prods, ex.target, opt.negatives, ds.manifest.products,
                                     opt.seed, u.user, ExamplePurpose::pretrain, slot);
                out.push_back(std::move(ex));
            }
        }
    }
    return out;
}

std::vector<Example> build_task_examples(const Dataset& ds, Scenario sc, ExamplePurpose purpose,
                                         const ExampleBuildOptions& opt) {
    if (purpose == ExamplePurpose::pretrain)
        throw ConfigError("pretrain examples come from build_pretrain_examples");
    std::vector<Example> out;
    for (const auto& u : ds.users) {
        StreamView sv = stream_of(u, sc);
        SplitIndices sp = split_for(sv.size(), opt.pretrain_ratio);
        if (!sp.has_task) continue;
        std::vector<std::size_t> targets;
        if (purpose == ExamplePurpose::task_train) {
            for (std::size_t t = sp.pretrain_end; t < sp.valid_idx; ++t) targets.push_back(t);
        } else {
            targets.push_back(purpose == ExamplePurpose::valid ? sp.valid_idx : sp.test_idx);
        }
        auto user_prods = products_of(u);
        for (std::size_t t : targets) {
            if (t < 1) continue;  // no history at all
            std::size_t h0 = t > opt.max_len ? t - opt.max_len : 0;
            Example ex = make_example(sv, u, sc, h0, t);
            ex.negatives = sample_negatives(user_prods, ex.target, opt.negatives,
                                            ds.manifest.products, opt.seed, u.user, purpose, t);
            out.push_back(std::move(ex));
        }
    }
    return out;
}

}  // namespace searec
