#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "searec/data.hpp"

namespace searec {

// lowercase, punctuation stripped (non-alphanumeric becomes a separator)
std::vector<std::string> tokenize(const std::string& text);

// document-frequency statistics with smoothed inverse document frequency
struct TfidfCorpus {
    std::size_t docs = 0;
    std::unordered_map<std::string, std::size_t> df;

    void add(const std::vector<std::string>& tokens);  // counts each token once per doc
    double idf(const std::string& term) const;         // ln((1 + docs) / (1 + df)) + 1
};

// top-k tokens of one document by tf * idf; ties break lexicographically
std::vector<std::string> top_keywords(const TfidfCorpus& corpus,
                                      const std::vector<std::string>& doc_tokens, std::size_t k);

// string-to-id interning, ids from 1 in first-seen order
struct WordVocab {
    std::unordered_map<std::string, std::int32_t> id_of;
    std::vector<std::string> words;

    std::int32_t intern(const std::string& w);
    std::size_t size() const { return words.size(); }
};

// Raw review-log ingestion: query words = product attribute terms plus the
// top-k TF-IDF keywords of the review text. Records without a scenario are
// split into the two scenarios alternately per user (by chronological index).
struct ReviewRecord {
    std::int32_t user = 0;
    std::int32_t product = 0;
    std::int64_t ts = 0;
    std::string scenario;  // "search", "rec", or empty for alternate assignment
    std::string review;
    std::vector<std::string> attrs;
};

std::vector<ReviewRecord> load_reviews(const std::string& path);  // JSONL, one record per line

struct IngestResult {
    Dataset dataset;
    WordVocab vocab;
};

IngestResult ingest_reviews(const std::vector<ReviewRecord>& records, std::size_t k_keywords);

}  // namespace searec
