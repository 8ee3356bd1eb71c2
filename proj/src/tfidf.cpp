#include "searec/tfidf.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>

#include "searec/common.hpp"

#include <json.hpp>

namespace searec {

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

void TfidfCorpus::add(const std::vector<std::string>& tokens) {
    docs += 1;
    std::unordered_map<std::string, bool> seen;
    for (const auto& t : tokens)
        if (seen.emplace(t, true).second) df[t] += 1;
}

double TfidfCorpus::idf(const std::string& term) const {
    auto it = df.find(term);
    double n = it == df.end() ? 0.0 : static_cast<double>(it->second);
    return std::log((1.0 + static_cast<double>(docs)) / (1.0 + n)) + 1.0;
}

std::vector<std::string> top_keywords(const TfidfCorpus& corpus,
                                      const std::vector<std::string>& doc_tokens, std::size_t k) {
    std::map<std::string, std::size_t> tf;  // ordered so ties fall out lexicographically
    for (const auto& t : doc_tokens) tf[t] += 1;
    std::vector<std::pair<double, std::string>> scored;
    scored.reserve(tf.size());
    for (const auto& kv : tf)
        scored.emplace_back(static_cast<double>(kv.second) * corpus.idf(kv.first), kv.first);
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < scored.size() && i < k; ++i) out.push_back(scored[i].second);
    return out;
}

std::int32_t WordVocab::intern(const std::string& w) {
    auto it = id_of.find(w);
    if (it != id_of.end()) return it->second;
    words.push_back(w);
    auto id = static_cast<std::int32_t>(words.size());
    id_of.emplace(w, id);
    return id;
}

std::vector<ReviewRecord> load_reviews(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open review file: " + path);
    std::vector<ReviewRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("review line " + std::to_string(lineno) + ": " + e.what());
        }
        ReviewRecord r;
        try {
            r.user = j.at("user").get<std::int32_t>();
            r.product = j.at("product").get<std::int32_t>();
            r.ts = j.at("ts").get<std::int64_t>();
            r.scenario = j.value("scenario", std::string());
            r.review = j.value("review", std::string());
            if (j.contains("attrs"))
                for (const auto& a : j.at("attrs")) r.attrs.push_back(a.get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw DataError("review line " + std::to_string(lineno) + ": " + e.what());
        }
        if (r.user <= 0 || r.product <= 0)
            throw DataError("review line " + std::to_string(lineno) +
                            ": user and product ids must be positive");
        out.push_back(std::move(r));
    }
    return out;
}

IngestResult ingest_reviews(const std::vector<ReviewRecord>& records, std::size_t k_keywords) {
    TfidfCorpus corpus;
    std::vector<std::vector<std::string>> review_tokens;
    review_tokens.reserve(records.size());
    for (const auto& r : records) {
        review_tokens.push_back(tokenize(r.review));
        if (!review_tokens.back().empty()) corpus.add(review_tokens.back());
    }

    // group chronologically per user, stable against input order
    std::map<std::int32_t, std::vector<std::size_t>> by_user;
    for (std::size_t i = 0; i < records.size(); ++i) by_user[records[i].user].push_back(i);
    for (auto& kv : by_user)
        std::stable_sort(kv.second.begin(), kv.second.end(), [&](std::size_t a, std::size_t b) {
            return records[a].ts < records[b].ts;
        });

    IngestResult out;
    for (auto& kv : by_user) {
        UserRecords u;
        u.user = kv.first;
        std::size_t idx = 0;
        for (std::size_t i : kv.second) {
            const ReviewRecord& r = records[i];
            bool is_search;
            if (r.scenario == "search") {
                is_search = true;
            } else if (r.scenario == "rec") {
                is_search = false;
            } else if (r.scenario.empty()) {
                is_search = (idx % 2 == 1);  // alternate halves by index per user
            } else {
                throw DataError("unknown scenario in review record: " + r.scenario);
            }
            if (is_search) {
                SearchEvent ev;
                ev.product = r.product;
                ev.ts = r.ts;
                std::vector<std::string> terms;
                for (const auto& a : r.attrs)
                    for (const auto& t : tokenize(a)) terms.push_back(t);
                for (const auto& t : top_keywords(corpus, review_tokens[i], k_keywords))
                    terms.push_back(t);
                std::unordered_map<std::string, bool> seen;
                for (const auto& t : terms)
                    if (seen.emplace(t, true).second) ev.words.push_back(out.vocab.intern(t));
                if (ev.words.empty())
                    throw DataError("search record with no attribute or review terms (user " +
                                    std::to_string(r.user) + ")");
                u.search.push_back(std::move(ev));
            } else {
                u.rec.push_back({r.product, r.ts});
            }
            ++idx;
        }
        out.dataset.manifest.rec_count += u.rec.size();
        out.dataset.manifest.search_count += u.search.size();
        out.dataset.users.push_back(std::move(u));
    }

    std::int32_t max_user = 0, max_product = 0;
    for (const auto& u : out.dataset.users) {
        max_user = std::max(max_user, u.user);
        for (const auto& e : u.rec) max_product = std::max(max_product, e.product);
        for (const auto& e : u.search) max_product = std::max(max_product, e.product);
    }
    out.dataset.manifest.users = static_cast<std::size_t>(max_user);
    out.dataset.manifest.products = static_cast<std::size_t>(max_product);
    out.dataset.manifest.words = out.vocab.size();
    out.dataset.manifest.name = "ingested";
    return out;
}

}  // namespace searec
