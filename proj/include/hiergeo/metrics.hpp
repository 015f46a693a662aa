#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hiergeo/embedding.hpp"
#include "hiergeo/geo.hpp"
#include "hiergeo/matrix.hpp"

namespace hiergeo {

// Ranked gallery for one query: descending similarity (or ascending
// distance), ties broken by ascending image_id.
struct RankedList {
    std::int64_t query_image_id = 0;
    std::vector<std::int64_t> gallery_order;
};

// Per-level gains, non-increasing, zero at the pure-negative level.
struct MetricConfig {
    std::vector<double> gains;
    std::vector<int> recall_ks{1, 5, 10};

    static MetricConfig defaults(int scale_count);  // gain(l) = (L - l) / L
    void validate(int scale_count) const;
};

struct MetricReport {
    int scale_count = 0;
    std::vector<int> recall_ks;
    std::vector<double> map_per_scale;                // size L
    std::vector<std::vector<double>> recall_per_scale;  // [k index][scale]
    double map_overall = 0.0;
    double r1_overall = 0.0;
    double hap = 0.0;
    double asi = 0.0;
    double ndcg = 0.0;
    std::int64_t excluded_queries = 0;  // queries skipped by at least one metric

    std::string to_json() const;
    std::string to_csv() const;
};

// Levels of the query's gallery in some order (query_levels[g] = relevance
// level of gallery item g). All per-query metrics below consume levels in
// ranked order.
struct RelevanceTable {
    std::size_t n_queries = 0;
    std::size_t n_gallery = 0;
    int scale_count = 0;
    std::vector<std::uint8_t> level;  // row-major queries x gallery

    int at(std::size_t q, std::size_t g) const {
        return level[q * n_gallery + g];
    }
};

RelevanceTable build_relevance_table(const EmbeddingSet& queries,
                                     const EmbeddingSet& gallery,
                                     const CampusRegistry& registry,
                                     const ScaleConfig& config);

// 1 iff any item of level <= scale appears in the top k (k clamped).
int recall_at_k(const std::vector<int>& ranked_levels, int scale, int k);

// Relevant = level <= scale; InputError when no relevant item exists.
double average_precision(const std::vector<int>& ranked_levels, int scale);

// Hierarchical AP over graded gains; 1.0 exactly on gain-sorted lists.
double h_ap(const std::vector<int>& ranked_levels,
            const std::vector<double>& gains);

// Mean top-i set intersection against the level-ideal ordering, i = 1..m
// over the m positive-gain items; within-level order is treated as tied.
double asi(const std::vector<int>& ranked_levels,
           const std::vector<double>& gains);

// Gains 2^(L - level) - 1 with log2 position discount, normalized by the
// ideal ordering.
double ndcg(const std::vector<int>& ranked_levels, int scale_count);

RankedList rank_by_score(const EmbeddingSet& gallery, const double* scores,
                         std::int64_t query_image_id, bool descending);

// scores: queries x gallery, similarity (descending) or distance (ascending).
MetricReport evaluate(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                      const Matrix& scores, bool scores_are_similarity,
                      const RelevanceTable& relevance,
                      const MetricConfig& config);

}  // namespace hiergeo
