#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "hada/featstore.hpp"
#include "hada/model.hpp"

namespace hada {

struct DirectionReport {
    double r1 = 0.0;
    double r5 = 0.0;
    double r10 = 0.0;
    double rsum = 0.0;  // r1 + r5 + r10
};

struct RetrievalReport {
    DirectionReport i2t;
    DirectionReport t2i;
    double total_rsum = 0.0;
};

// Per-query descending-score gallery orderings, ties broken by ascending
// gallery index.
using Rankings = std::vector<std::vector<std::size_t>>;
// Per-query set of relevant gallery indices; never empty.
using Relevance = std::vector<std::set<std::size_t>>;

Rankings rank(const Tensor& score_matrix);
double recall_at_k(const Rankings& rankings, const Relevance& relevance, std::size_t k);
double rsum(double r1, double r5, double r10);
DirectionReport direction_report(const Rankings& rankings, const Relevance& relevance);

enum class ScoreMode { kFused, kWeighted, kB2, kSingleModel };

struct EvalResult {
    RetrievalReport report;
    Rankings i2t_rankings;  // rows: images, gallery: texts
    Rankings t2i_rankings;  // rows: texts, gallery: images
    Relevance i2t_relevance;
    Relevance t2i_relevance;
    std::vector<std::string> image_ids;
    std::vector<std::string> text_ids;
};

// Embeds every item of the split once, builds both direction matrices and
// reports all metrics. For kSingleModel, params may be default-constructed
// and single_model names the upstream model whose stored globals are scored.
EvalResult evaluate(const FeatureStore& store, const HadaParams& params, Split split,
                    ScoreMode mode, const std::string& single_model = "");

// Rank-averaging baseline: per query, score = -(rank_a + rank_b)/2, re-ranked
// with ascending-index tie break.
Rankings average_rankings(const Rankings& a, const Rankings& b);
EvalResult baseline_b1(const EvalResult& a, const EvalResult& b);

}  // namespace hada
