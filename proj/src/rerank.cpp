#include "hiergeo/rerank.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "hiergeo/errors.hpp"

namespace hiergeo {

namespace {

using SparseVec = std::vector<std::pair<int, double>>;  // sorted by index

void check_augmented(const Matrix& m) {
    if (m.rows != m.cols || m.rows < 2)
        throw InputError("augmented matrix must be square with >= 2 points");
    for (std::size_t i = 0; i < m.rows; ++i) {
        if (m.at(i, i) != 0.0)
            throw InputError("augmented matrix must have zero diagonal");
        for (std::size_t j = i + 1; j < m.cols; ++j) {
            if (!(m.at(i, j) >= 0.0))
                throw InputError("augmented matrix must be non-negative");
            if (std::abs(m.at(i, j) - m.at(j, i)) > 1e-9)
                throw InputError("augmented matrix must be symmetric");
        }
    }
}

// Row-wise orderings by (distance, index); each point ranks itself first.
struct NeighborIndex {
    int n = 0;
    std::vector<int> order;  // n x n argsorted rows
    std::vector<int> rank;   // rank[x * n + y] = position of y in row x

    explicit NeighborIndex(const Matrix& d) : n(static_cast<int>(d.rows)) {
        order.resize(static_cast<std::size_t>(n) * n);
        rank.resize(static_cast<std::size_t>(n) * n);
        std::vector<int> idx(n);
        for (int x = 0; x < n; ++x) {
            std::iota(idx.begin(), idx.end(), 0);
            const double* row = d.row(x);
            std::sort(idx.begin(), idx.end(), [&](int a, int b) {
                if (row[a] != row[b]) return row[a] < row[b];
                return a < b;
            });
            for (int p = 0; p < n; ++p) {
                order[static_cast<std::size_t>(x) * n + p] = idx[p];
                rank[static_cast<std::size_t>(x) * n + idx[p]] = p;
            }
        }
    }

    const int* neighbors(int x) const {
        return order.data() + static_cast<std::size_t>(x) * n;
    }
    int rank_of(int x, int y) const {
        return rank[static_cast<std::size_t>(x) * n + y];
    }
};

// R(x, k): mutual top-k membership, sorted by index.
std::vector<int> reciprocal_set(const NeighborIndex& nn, int x, int k) {
    std::vector<int> out;
    out.reserve(k);
    const int* neigh = nn.neighbors(x);
    for (int p = 0; p < k; ++p) {
        const int y = neigh[p];
        if (nn.rank_of(y, x) < k) out.push_back(y);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::size_t intersection_size(const std::vector<int>& a,
                              const std::vector<int>& b) {
    std::size_t count = 0, i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] < b[j]) {
            ++i;
        } else if (b[j] < a[i]) {
            ++j;
        } else {
            ++count;
            ++i;
            ++j;
        }
    }
    return count;
}

std::vector<double> rerank_with_k(const Matrix& d, const NeighborIndex& nn,
                                  int k, const RerankConfig& config) {
    const int n = nn.n;
    if (k >= n) throw ConfigError("rerank: k must be smaller than matrix size");
    const int ke = config.effective_k_expand(k);

    std::vector<std::vector<int>> reciprocal(n);
    for (int x = 0; x < n; ++x) reciprocal[x] = reciprocal_set(nn, x, k);
    std::vector<std::vector<int>> reciprocal_half(n);
    for (int x = 0; x < n; ++x) reciprocal_half[x] = reciprocal_set(nn, x, ke);

    // Expanded sets: pull in a candidate's half-set when two thirds of it
    // already agrees with R(x, k).
    std::vector<std::vector<int>> expanded(n);
    for (int x = 0; x < n; ++x) {
        std::vector<int> merged = reciprocal[x];
        for (int y : reciprocal[x]) {
            const auto& half = reciprocal_half[y];
            if (half.empty()) continue;
            if (3 * intersection_size(reciprocal[x], half) >= 2 * half.size())
                merged.insert(merged.end(), half.begin(), half.end());
        }
        std::sort(merged.begin(), merged.end());
        merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
        expanded[x] = std::move(merged);
    }

    std::vector<SparseVec> membership(n);
    for (int x = 0; x < n; ++x) {
        membership[x].reserve(expanded[x].size());
        for (int y : expanded[x])
            membership[x].emplace_back(y, std::exp(-d.at(x, y)));
    }

    // Local query expansion: average membership over the ke nearest points
    // (the point itself included since it ranks first in its own row).
    std::vector<SparseVec> blended(n);
    {
        std::vector<double> dense(n, 0.0);
        std::vector<int> touched;
        for (int x = 0; x < n; ++x) {
            touched.clear();
            const int* neigh = nn.neighbors(x);
            for (int p = 0; p < ke; ++p) {
                for (const auto& [idx, w] : membership[neigh[p]]) {
                    if (dense[idx] == 0.0) touched.push_back(idx);
                    dense[idx] += w;
                }
            }
            std::sort(touched.begin(), touched.end());
            SparseVec row;
            row.reserve(touched.size());
            for (int idx : touched) {
                row.emplace_back(idx, dense[idx] / ke);
                dense[idx] = 0.0;
            }
            blended[x] = std::move(row);
        }
    }

    std::vector<double> sums(n, 0.0);
    for (int x = 0; x < n; ++x)
        for (const auto& [idx, w] : blended[x]) sums[x] += w;

    // Generalized Jaccard distance between the query row and each gallery
    // row, fused with the original distance.
    std::vector<double> out(n - 1);
    const SparseVec& query_row = blended[0];
    for (int j = 1; j < n; ++j) {
        const SparseVec& gal = blended[j];
        double min_sum = 0.0;
        std::size_t a = 0, b = 0;
        while (a < query_row.size() && b < gal.size()) {
            if (query_row[a].first < gal[b].first) {
                ++a;
            } else if (gal[b].first < query_row[a].first) {
                ++b;
            } else {
                min_sum += std::min(query_row[a].second, gal[b].second);
                ++a;
                ++b;
            }
        }
        const double max_sum = sums[0] + sums[j] - min_sum;
        const double jaccard = max_sum > 0.0 ? 1.0 - min_sum / max_sum : 1.0;
        out[j - 1] = config.lambda_fuse * d.at(0, j) +
                     (1.0 - config.lambda_fuse) * jaccard;
    }
    return out;
}

}  // namespace

void RerankConfig::validate() const {
    if (k < 1) throw ConfigError("rerank: k must be >= 1");
    if (lambda_fuse < 0.0 || lambda_fuse > 1.0)
        throw ConfigError("rerank: lambda_fuse must be in [0, 1]");
    if (!(mu > 0.0)) throw ConfigError("rerank: mu must be positive");
    if (k_floor < 1) throw ConfigError("rerank: k_floor must be >= 1");
    if (k_expand < 0) throw ConfigError("rerank: k_expand must be >= 0");
}

int RerankConfig::effective_k_expand(int neighborhood) const {
    if (k_expand > 0) return k_expand;
    return std::max(1, neighborhood / 2);
}

void KSchedule::validate() const {
    if (ks.empty()) throw ConfigError("rerank schedule must be non-empty");
    for (std::size_t l = 0; l < ks.size(); ++l) {
        if (ks[l] < 1) throw ConfigError("rerank schedule entries must be >= 1");
        if (l > 0 && ks[l] < ks[l - 1])
            throw ConfigError("rerank schedule must be non-decreasing");
    }
}

std::vector<double> k_reciprocal_rerank(const Matrix& augmented,
                                        const RerankConfig& config) {
    config.validate();
    check_augmented(augmented);
    if (config.k >= static_cast<int>(augmented.rows))
        throw ConfigError("rerank: k must be smaller than matrix size");
    NeighborIndex nn(augmented);
    return rerank_with_k(augmented, nn, config.k, config);
}

KSchedule compute_k_schedule(
    const std::vector<ScalePartition>& train_partitions,
    const std::unordered_map<std::int64_t, std::int64_t>& images_per_building,
    const RerankConfig& config, int scale_count) {
    config.validate();
    if (train_partitions.empty())
        throw ConfigError("compute_k_schedule: empty training set");
    if (scale_count < 1)
        throw ConfigError("compute_k_schedule: scale count must be >= 1");

    const double class_count = static_cast<double>(train_partitions.size());
    KSchedule schedule;
    schedule.ks.reserve(scale_count);
    for (int l = 0; l < scale_count; ++l) {
        double total_images = 0.0;
        for (const auto& part : train_partitions) {
            for (const auto& [building, level] : part.levels) {
                if (level > l) continue;
                auto it = images_per_building.find(building);
                if (it == images_per_building.end())
                    throw InputError("no image count for building " +
                                     std::to_string(building));
                total_images += static_cast<double>(it->second);
            }
        }
        const double raw = config.mu / class_count * total_images;
        const int rounded = static_cast<int>(std::floor(raw + 0.5));
        schedule.ks.push_back(std::max(config.k_floor, rounded));
    }
    schedule.validate();
    return schedule;
}

std::vector<double> ms_rerank(const Matrix& augmented, const KSchedule& schedule,
                              const RerankConfig& config) {
    config.validate();
    schedule.validate();
    check_augmented(augmented);
    const int n = static_cast<int>(augmented.rows);
    const int gallery = n - 1;
    for (int k : schedule.ks)
        if (k >= n)
            throw ConfigError("rerank schedule entry must be smaller than "
                              "matrix size");

    NeighborIndex nn(augmented);
    std::vector<double> accumulated(gallery, 0.0);
    std::vector<char> active(gallery, 1);
    std::vector<int> idx(gallery);

    for (int k : schedule.ks) {
        const std::vector<double> stage =
            rerank_with_k(augmented, nn, k, config);
        for (int j = 0; j < gallery; ++j)
            if (active[j]) accumulated[j] += stage[j];

        // Top-k over the whole gallery by current accumulated distance;
        // previously masked entries can and do re-occupy these slots.
        std::iota(idx.begin(), idx.end(), 0);
        const int take = std::min(k, gallery);
        std::partial_sort(idx.begin(), idx.begin() + take, idx.end(),
                          [&](int a, int b) {
                              if (accumulated[a] != accumulated[b])
                                  return accumulated[a] < accumulated[b];
                              return a < b;
                          });
        for (int p = 0; p < take; ++p) active[idx[p]] = 0;
    }
    return accumulated;
}

std::vector<double> rank_shift_profile(
    const std::vector<std::vector<std::int64_t>>& before,
    const std::vector<std::vector<std::int64_t>>& after) {
    if (before.size() != after.size() || before.empty())
        throw InputError("rank_shift_profile: query count mismatch");
    const std::size_t n = before.front().size();
    std::vector<double> profile(n, 0.0);
    std::unordered_map<std::int64_t, std::size_t> position;
    for (std::size_t q = 0; q < before.size(); ++q) {
        if (before[q].size() != n || after[q].size() != n)
            throw InputError("rank_shift_profile: gallery size mismatch");
        position.clear();
        for (std::size_t p = 0; p < n; ++p) position[after[q][p]] = p;
        for (std::size_t p = 0; p < n; ++p) {
            auto it = position.find(before[q][p]);
            if (it == position.end())
                throw InputError("rank_shift_profile: galleries differ");
            profile[p] += std::abs(static_cast<double>(it->second) -
                                   static_cast<double>(p));
        }
    }
    for (double& v : profile) v /= static_cast<double>(before.size());
    return profile;
}

}  // namespace hiergeo
