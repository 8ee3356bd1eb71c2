#include "searec/metrics.hpp"

#include <cmath>
#include <cstdio>

namespace searec {

std::size_t rank_of(const std::vector<double>& scores, std::size_t pos_index) {
    if (pos_index >= scores.size()) throw DataError("rank_of: positive index out of range");
    double s = scores[pos_index];
    std::size_t rank = 1;
    for (std::size_t j = 0; j < scores.size(); ++j) {
        if (scores[j] > s) ++rank;
        else if (scores[j] == s && j < pos_index) ++rank;
    }
    return rank;
}

std::size_t rank_of_random(const std::vector<double>& scores, std::size_t pos_index,
                           std::mt19937_64& rng) {
    if (pos_index >= scores.size()) throw DataError("rank_of: positive index out of range");
    double s = scores[pos_index];
    std::size_t rank = 1, ties = 0;
    for (std::size_t j = 0; j < scores.size(); ++j) {
        if (scores[j] > s) ++rank;
        else if (scores[j] == s && j != pos_index) ++ties;
    }
    // uniform slot among the tied group
    rank += uniform_below(rng, ties + 1);
    return rank;
}

double hr_at(std::size_t rank, std::size_t k) { return rank <= k ? 1.0 : 0.0; }

double ndcg_at(std::size_t rank, std::size_t k) {
    if (rank > k) return 0.0;
    return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

void MetricsReport::validate() const {
    auto in01 = [](double x) { return x >= 0.0 && x <= 1.0; };
    if (!in01(hr5) || !in01(hr10) || !in01(ndcg5) || !in01(ndcg10))
        throw NumericError("metrics outside [0, 1]");
    if (ndcg5 > hr5 + 1e-12 || ndcg10 > hr10 + 1e-12)
        throw NumericError("NDCG above HR at the same cutoff");
    if (hr5 > hr10 + 1e-12 || ndcg5 > ndcg10 + 1e-12)
        throw NumericError("metrics not monotone in K");
}

nlohmann::json MetricsReport::to_json() const {
    return nlohmann::json{{"scenario", scenario}, {"variant", variant},
                          {"seed", seed},         {"config_hash", config_hash},
                          {"n_users", n_users},   {"hr5", hr5},
                          {"hr10", hr10},         {"ndcg5", ndcg5},
                          {"ndcg10", ndcg10}};
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.scenario = j.at("scenario").get<std::string>();
    r.variant = j.at("variant").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.n_users = j.at("n_users").get<std::size_t>();
    r.hr5 = j.at("hr5").get<double>();
    r.hr10 = j.at("hr10").get<double>();
    r.ndcg5 = j.at("ndcg5").get<double>();
    r.ndcg10 = j.at("ndcg10").get<double>();
    return r;
}

std::string MetricsReport::table() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-8s %-16s %6llu %7zu  %8.4f %8.4f %8.4f %8.4f",
                  scenario.c_str(), variant.c_str(), static_cast<unsigned long long>(seed), n_users,
                  hr5, hr10, ndcg5, ndcg10);
    std::string head = "scenario variant            seed n_users      hr@5    hr@10   ndcg@5  ndcg@10\n";
    return head + buf;
}

MetricsReport aggregate_ranks(const std::vector<std::size_t>& ranks) {
    MetricsReport r;
    r.n_users = ranks.size();
    if (ranks.empty()) return r;
    for (std::size_t rank : ranks) {
        r.hr5 += hr_at(rank, 5);
        r.hr10 += hr_at(rank, 10);
        r.ndcg5 += ndcg_at(rank, 5);
        r.ndcg10 += ndcg_at(rank, 10);
    }
    double inv = 1.0 / static_cast<double>(ranks.size());
    r.hr5 *= inv;
    r.hr10 *= inv;
    r.ndcg5 *= inv;
    r.ndcg10 *= inv;
    r.validate();
    return r;
}

}  // namespace searec
