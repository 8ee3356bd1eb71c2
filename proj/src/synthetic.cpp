#include "searec/synthetic.hpp"

#include <fstream>
#include <random>

#include "searec/common.hpp"

namespace searec {

void SyntheticConfig::validate() const {
    if (users == 0 || products == 0 || words == 0) throw ConfigError("empty synthetic universe");
    if (intents == 0 || intents > products || intents > words)
        throw ConfigError("intent count must be in [1, min(products, words)]");
    if (user_intents == 0 || user_intents > intents)
        throw ConfigError("user_intents must be in [1, intents]");
    if (sessions_min == 0 || sessions_min > sessions_max)
        throw ConfigError("bad session count range");
    if (session_len_min == 0 || session_len_min > session_len_max)
        throw ConfigError("bad session length range");
    if (query_words_min == 0 || query_words_min > query_words_max)
        throw ConfigError("bad query word range");
    if (query_words_max > words / intents)
        throw ConfigError("query_words_max exceeds the per-intent word pool");
    if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("noise must be in [0, 1]");
    if (!(step_prob >= 0.0 && step_prob <= 1.0)) throw ConfigError("step_prob must be in [0, 1]");
    if (gap_within_min > gap_within_max || gap_between_min > gap_between_max)
        throw ConfigError("bad gap range");
    if (gap_between_min <= gap_within_max)
        throw ConfigError("between-session gaps must exceed within-session gaps");
}

namespace {

// contiguous near-equal partition of 1..total into k pools
std::pair<std::size_t, std::size_t> pool_span(std::size_t total, std::size_t k, std::size_t i) {
    std::size_t base = total / k, extra = total % k;
    std::size_t start = i * base + std::min(i, extra);
    std::size_t size = base + (i < extra ? 1 : 0);
    return {start, size};  // 0-based start; ids are start+1 .. start+size
}

std::size_t pool_index(std::size_t total, std::size_t k, std::int32_t id) {
    if (id <= 0 || static_cast<std::size_t>(id) > total) throw DataError("id outside the universe");
    std::size_t z = static_cast<std::size_t>(id) - 1;
    std::size_t base = total / k, extra = total % k;
    std::size_t wide = (base + 1) * extra;  // the first `extra` pools are one wider
    if (z < wide) return z / (base + 1);
    return extra + (z - wide) / base;
}

}  // namespace

std::size_t intent_of_product(const SyntheticConfig& cfg, std::int32_t product) {
    return pool_index(cfg.products, cfg.intents, product);
}

std::size_t intent_of_word(const SyntheticConfig& cfg, std::int32_t word) {
    return pool_index(cfg.words, cfg.intents, word);
}

nlohmann::json SyntheticConfig::to_json() const {
    return nlohmann::json{{"users", users},
                          {"products", products},
                          {"words", words},
                          {"intents", intents},
                          {"user_intents", user_intents},
                          {"sessions_min", sessions_min},
                          {"sessions_max", sessions_max},
                          {"session_len_min", session_len_min},
                          {"session_len_max", session_len_max},
                          {"query_words_min", query_words_min},
                          {"query_words_max", query_words_max},
                          {"noise", noise},
                          {"step_prob", step_prob},
                          {"start_ts", start_ts},
                          {"gap_within_min", gap_within_min},
                          {"gap_within_max", gap_within_max},
                          {"gap_between_min", gap_between_min},
                          {"gap_between_max", gap_between_max},
                          {"seed", seed}};
}

SyntheticConfig SyntheticConfig::from_json(const nlohmann::json& j) {
    SyntheticConfig cfg;
    nlohmann::json schema = cfg.to_json();
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!schema.contains(it.key()))
            throw ConfigError("unknown config key: " + it.key());
    auto grab = [&](const char* key, auto& out) {
        if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
    };
    grab("users", cfg.users);
    grab("products", cfg.products);
    grab("words", cfg.words);
    grab("intents", cfg.intents);
    grab("user_intents", cfg.user_intents);
    grab("sessions_min", cfg.sessions_min);
    grab("sessions_max", cfg.sessions_max);
    grab("session_len_min", cfg.session_len_min);
    grab("session_len_max", cfg.session_len_max);
    grab("query_words_min", cfg.query_words_min);
    grab("query_words_max", cfg.query_words_max);
    grab("noise", cfg.noise);
    grab("step_prob", cfg.step_prob);
    grab("start_ts", cfg.start_ts);
    grab("gap_within_min", cfg.gap_within_min);
    grab("gap_within_max", cfg.gap_within_max);
    grab("gap_between_min", cfg.gap_between_min);
    grab("gap_between_max", cfg.gap_between_max);
    grab("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

SyntheticConfig SyntheticConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config is not valid JSON (" + path + "): " + e.what());
    }
    return from_json(j);
}

SyntheticOutput generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    SyntheticOutput out;
    out.dataset.manifest.users = cfg.users;
    out.dataset.manifest.products = cfg.products;
    out.dataset.manifest.words = cfg.words;
    out.dataset.manifest.seed = cfg.seed;
    out.dataset.manifest.name = "synthetic";

    for (std::size_t ui = 1; ui <= cfg.users; ++ui) {
        // one generator per user keeps users independent of emission order
        std::mt19937_64 rng(mix_seed({cfg.seed, static_cast<std::uint64_t>(ui)}));
        UserRecords u;
        u.user = static_cast<std::int32_t>(ui);

        // distinct preferred intents via partial shuffle
        std::vector<std::size_t> prefs(cfg.intents);
        for (std::size_t i = 0; i < cfg.intents; ++i) prefs[i] = i;
        for (std::size_t i = 0; i < cfg.user_intents; ++i) {
            std::size_t j = i + uniform_below(rng, cfg.intents - i);
            std::swap(prefs[i], prefs[j]);
        }
        prefs.resize(cfg.user_intents);

        for (Scenario sc : {Scenario::rec, Scenario::search}) {
            BoundaryRecord br;
            br.user = u.user;
            br.scenario = sc;
            std::int64_t ts = cfg.start_ts + uniform_int(rng, 0, 86399);
            std::size_t n_sessions = uniform_int(rng, static_cast<std::int64_t>(cfg.sessions_min),
                                                 static_cast<std::int64_t>(cfg.sessions_max));
            std::size_t pos_in_stream = 0;
            std::size_t prev_intent = cfg.intents;  // sentinel: no previous
            for (std::size_t s = 0; s < n_sessions; ++s) {
                std::size_t intent = prefs[uniform_below(rng, prefs.size())];
                while (prefs.size() > 1 && intent == prev_intent)
                    intent = prefs[uniform_below(rng, prefs.size())];
                prev_intent = intent;
                br.starts.push_back(pos_in_stream);
                br.intents.push_back(intent);

                auto [p_start, p_size] = pool_span(cfg.products, cfg.intents, intent);
                auto [w_start, w_size] = pool_span(cfg.words, cfg.intents, intent);
                std::size_t chain = uniform_below(rng, p_size);
                std::size_t slen =
                    uniform_int(rng, static_cast<std::int64_t>(cfg.session_len_min),
                                static_cast<std::int64_t>(cfg.session_len_max));
                for (std::size_t k = 0; k < slen; ++k) {
                    if (k > 0)
                        ts += uniform_int(rng, cfg.gap_within_min, cfg.gap_within_max);
                    else if (s > 0)
                        ts += uniform_int(rng, cfg.gap_between_min, cfg.gap_between_max);
                    if (k > 0) {
                        if (uniform_unit(rng) < cfg.step_prob)
                            chain = (chain + 1) % p_size;
                        else
                            chain = uniform_below(rng, p_size);
                    }
                    auto product = static_cast<std::int32_t>(p_start + chain + 1);
                    // noise replaces the emitted product, not the chain state
                    if (cfg.noise > 0.0 && uniform_unit(rng) < cfg.noise)
                        product = static_cast<std::int32_t>(
                            uniform_int(rng, 1, static_cast<std::int64_t>(cfg.products)));
                    if (sc == Scenario::rec) {
                        u.rec.push_back({product, ts});
                    } else {
                        SearchEvent ev;
                        ev.product = product;
                        ev.ts = ts;
                        std::size_t nw =
                            uniform_int(rng, static_cast<std::int64_t>(cfg.query_words_min),
                                        static_cast<std::int64_t>(cfg.query_words_max));
                        std::unordered_set<std::size_t> used;
                        while (ev.words.size() < nw) {
                            std::size_t w = uniform_below(rng, w_size);
                            if (!used.insert(w).second) continue;
                            ev.words.push_back(static_cast<std::int32_t>(w_start + w + 1));
                        }
                        u.search.push_back(ev);
                    }
                    ++pos_in_stream;
                }
            }
            out.boundaries.push_back(std::move(br));
        }
        out.dataset.manifest.rec_count += u.rec.size();
        out.dataset.manifest.search_count += u.search.size();
        out.dataset.users.push_back(std::move(u));
    }
    return out;
}

void save_boundaries(const std::vector<BoundaryRecord>& bs, const std::string& path) {
    std::ofstream outf(path);
    if (!outf) throw DataError("cannot write boundary file: " + path);
    for (const auto& b : bs)
        outf << nlohmann::json{{"user", b.user},
                               {"scenario", scenario_name(b.scenario)},
                               {"starts", b.starts},
                               {"intents", b.intents}}
                    .dump()
             << "\n";
}

std::vector<BoundaryRecord> load_boundaries(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open boundary file: " + path);
    std::vector<BoundaryRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("boundary line " + std::to_string(lineno) + ": " + e.what());
        }
        BoundaryRecord b;
        b.user = j.at("user").get<std::int32_t>();
        b.scenario = scenario_from(j.at("scenario").get<std::string>());
        b.starts = j.at("starts").get<std::vector<std::size_t>>();
        b.intents = j.at("intents").get<std::vector<std::size_t>>();
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace searec
