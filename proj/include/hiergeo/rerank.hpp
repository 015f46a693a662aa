#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "hiergeo/geo.hpp"
#include "hiergeo/matrix.hpp"

namespace hiergeo {

// The augmented distance matrix is square over {query} + gallery with the
// query at index 0: symmetric, zero diagonal, non-negative.

struct RerankConfig {
    int k = 20;
    double lambda_fuse = 0.3;  // weight of the original distance
    int k_expand = 0;          // 0 derives k / 2 (floored, min 1)
    double mu = 0.1;
    int k_floor = 20;

    void validate() const;
    int effective_k_expand(int neighborhood) const;
};

struct KSchedule {
    std::vector<int> ks;
    void validate() const;  // non-empty, each >= 1, non-decreasing
};

// Standard k-reciprocal re-ranking of the query against the gallery:
// reciprocal neighbor sets, 2/3-overlap expansion, exp(-d) membership
// weights, local query expansion, then generalized Jaccard distance fused
// with the original distance. Returns gallery-sized distances.
std::vector<double> k_reciprocal_rerank(const Matrix& augmented,
                                        const RerankConfig& config);

// Neighborhood sizes from training statistics:
// k_l = max(k_floor, round(mu / C * sum_c images within threshold l)).
KSchedule compute_k_schedule(
    const std::vector<ScalePartition>& train_partitions,
    const std::unordered_map<std::int64_t, std::int64_t>& images_per_building,
    const RerankConfig& config, int scale_count);

// Segmented accumulative re-ranking: per stage, re-rank with k_l, add stage
// distances for entries still unmasked, then mask the current top-k_l of the
// whole gallery. Masked entries keep their accumulated value unchanged.
std::vector<double> ms_rerank(const Matrix& augmented, const KSchedule& schedule,
                              const RerankConfig& config);

// Mean |rank change| at each original position, averaged over queries.
// Rankings are lists of gallery ids, one list per query.
std::vector<double> rank_shift_profile(
    const std::vector<std::vector<std::int64_t>>& before,
    const std::vector<std::vector<std::int64_t>>& after);

}  // namespace hiergeo
