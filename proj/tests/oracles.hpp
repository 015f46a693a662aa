#pragma once

// Independent reference implementations used only by tests. Everything here
// is written as straight-line brute force and must stay decoupled from the
// library code paths it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "hiergeo/matrix.hpp"

namespace oracle {

using hiergeo::Matrix;
using Vec = std::vector<double>;

// --- geometry ---------------------------------------------------------

// Great-circle distance through 3-D chord vectors; independent of the
// haversine route.
inline double great_circle_chord(double lat1_deg, double lon1_deg,
                                 double lat2_deg, double lon2_deg,
                                 double radius) {
    const double deg = 3.141592653589793238462643383279502884 / 180.0;
    const double la1 = lat1_deg * deg, lo1 = lon1_deg * deg;
    const double la2 = lat2_deg * deg, lo2 = lon2_deg * deg;
    const double x1 = std::cos(la1) * std::cos(lo1);
    const double y1 = std::cos(la1) * std::sin(lo1);
    const double z1 = std::sin(la1);
    const double x2 = std::cos(la2) * std::cos(lo2);
    const double y2 = std::cos(la2) * std::sin(lo2);
    const double z2 = std::sin(la2);
    const double cx = y1 * z2 - z1 * y2;
    const double cy = z1 * x2 - x1 * z2;
    const double cz = x1 * y2 - y1 * x2;
    const double cross = std::sqrt(cx * cx + cy * cy + cz * cz);
    const double dot = x1 * x2 + y1 * y2 + z1 * z2;
    return radius * std::atan2(cross, dot);
}

// --- losses -----------------------------------------------------------

// Literal double-sum evaluation of the multi-scale contrastive loss.
inline double dycl_double_loop(const Vec& anchor, const std::vector<Vec>& refs,
                               const std::vector<std::vector<int>>& positives,
                               const std::vector<int>& negatives, double tau,
                               const std::vector<double>& margins) {
    auto dot = [](const Vec& a, const Vec& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
        return s;
    };
    bool any_positive = false;
    for (const auto& p : positives)
        if (!p.empty()) any_positive = true;
    if (negatives.empty() || !any_positive) return 0.0;
    double loss = 0.0;
    for (std::size_t l = 0; l < positives.size(); ++l) {
        if (positives[l].empty()) continue;
        double inner = 0.0;
        for (int j : positives[l]) {
            for (int k : negatives) {
                const double r_pos = dot(anchor, refs[j]);
                const double r_neg = dot(anchor, refs[k]);
                inner += std::exp(tau * (r_neg - r_pos + margins[l]));
            }
        }
        loss += std::log(1.0 + inner);
    }
    return loss;
}

inline double softmax_loss(const std::vector<double>& logits,
                           std::size_t target) {
    double denom = 0.0;
    for (double z : logits) denom += std::exp(z);
    return -std::log(std::exp(logits[target]) / denom);
}

// --- ranking metrics ---------------------------------------------------

inline int recall_scan(const std::vector<int>& levels, int scale, int k) {
    const int limit = std::min<int>(k, static_cast<int>(levels.size()));
    for (int i = 0; i < limit; ++i)
        if (levels[i] <= scale) return 1;
    return 0;
}

inline double average_precision_scan(const std::vector<int>& levels,
                                     int scale) {
    int total = 0;
    for (int lev : levels)
        if (lev <= scale) ++total;
    double ap = 0.0;
    int seen = 0;
    for (std::size_t p = 1; p <= levels.size(); ++p) {
        if (levels[p - 1] <= scale) {
            ++seen;
            ap += static_cast<double>(seen) / static_cast<double>(p);
        }
    }
    return ap / total;
}

inline double h_ap_double_loop(const std::vector<int>& levels,
                               const std::vector<double>& gains) {
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < levels.size(); ++k) {
        const double rel = gains[levels[k]];
        if (rel <= 0.0) continue;
        double hrank = rel;
        for (std::size_t j = 0; j < k; ++j)
            hrank += std::min(gains[levels[j]], rel);
        num += hrank / static_cast<double>(k + 1);
        den += rel;
    }
    return num / den;
}

// Recomputes the tie-aware ideal prefix from scratch at every cut point.
inline double asi_recount(const std::vector<int>& levels,
                          const std::vector<double>& gains) {
    std::vector<int> ideal = levels;
    std::sort(ideal.begin(), ideal.end());
    int m = 0;
    for (int lev : levels)
        if (gains[lev] > 0.0) ++m;
    double acc = 0.0;
    for (int i = 1; i <= m; ++i) {
        std::map<int, int> ideal_count, predicted_count;
        for (int p = 0; p < i; ++p) {
            ++ideal_count[ideal[p]];
            ++predicted_count[levels[p]];
        }
        double inter = 0.0;
        for (const auto& [lev, cnt] : ideal_count) {
            auto it = predicted_count.find(lev);
            if (it != predicted_count.end())
                inter += std::min(cnt, it->second);
        }
        acc += inter / static_cast<double>(i);
    }
    return acc / m;
}

inline double ndcg_scan(const std::vector<int>& levels, int scale_count) {
    auto dcg = [&](const std::vector<int>& order) {
        double acc = 0.0;
        for (std::size_t i = 0; i < order.size(); ++i) {
            const double gain = std::pow(2.0, scale_count - order[i]) - 1.0;
            acc += gain * std::log(2.0) / std::log(static_cast<double>(i + 2));
        }
        return acc;
    };
    std::vector<int> ideal = levels;
    std::sort(ideal.begin(), ideal.end());
    return dcg(levels) / dcg(ideal);
}

// --- k-reciprocal re-ranking ------------------------------------------

// Straight-line reference for the full standard re-ranking pipeline on an
// augmented matrix (query at row 0). Dense vectors, no sparsity tricks.
inline std::vector<double> kreciprocal_reference(const Matrix& d, int k,
                                                 int k_expand, double lambda) {
    const int n = static_cast<int>(d.rows);

    auto top = [&](int x, int count) {
        std::vector<int> idx(n);
        for (int i = 0; i < n; ++i) idx[i] = i;
        std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
            if (d.at(x, a) != d.at(x, b)) return d.at(x, a) < d.at(x, b);
            return a < b;
        });
        idx.resize(count);
        return idx;
    };
    auto contains = [](const std::vector<int>& v, int x) {
        return std::find(v.begin(), v.end(), x) != v.end();
    };

    std::vector<std::vector<int>> reciprocal(n), reciprocal_half(n);
    for (int x = 0; x < n; ++x) {
        for (int y : top(x, k))
            if (contains(top(y, k), x)) reciprocal[x].push_back(y);
        for (int y : top(x, k_expand))
            if (contains(top(y, k_expand), x)) reciprocal_half[x].push_back(y);
    }

    std::vector<std::vector<int>> expanded(n);
    for (int x = 0; x < n; ++x) {
        std::vector<int> merged = reciprocal[x];
        for (int y : reciprocal[x]) {
            int overlap = 0;
            for (int z : reciprocal_half[y])
                if (contains(reciprocal[x], z)) ++overlap;
            if (!reciprocal_half[y].empty() &&
                overlap * 3 >= 2 * static_cast<int>(reciprocal_half[y].size()))
                for (int z : reciprocal_half[y]) merged.push_back(z);
        }
        std::sort(merged.begin(), merged.end());
        merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
        expanded[x] = merged;
    }

    std::vector<std::vector<double>> membership(n, std::vector<double>(n, 0.0));
    for (int x = 0; x < n; ++x)
        for (int y : expanded[x]) membership[x][y] = std::exp(-d.at(x, y));

    std::vector<std::vector<double>> blended(n, std::vector<double>(n, 0.0));
    for (int x = 0; x < n; ++x) {
        const auto neighbors = top(x, k_expand);
        for (int y : neighbors)
            for (int i = 0; i < n; ++i) blended[x][i] += membership[y][i];
        for (int i = 0; i < n; ++i)
            blended[x][i] /= static_cast<double>(k_expand);
    }

    std::vector<double> out(n - 1);
    for (int j = 1; j < n; ++j) {
        double min_sum = 0.0, max_sum = 0.0;
        for (int i = 0; i < n; ++i) {
            min_sum += std::min(blended[0][i], blended[j][i]);
            max_sum += std::max(blended[0][i], blended[j][i]);
        }
        const double jaccard = max_sum > 0.0 ? 1.0 - min_sum / max_sum : 1.0;
        out[j - 1] = lambda * d.at(0, j) + (1.0 - lambda) * jaccard;
    }
    return out;
}

// Literal execution of the segmented accumulative procedure on top of the
// reference pipeline above.
inline std::vector<double> ms_rerank_reference(const Matrix& d,
                                               const std::vector<int>& ks,
                                               double lambda) {
    const int gallery = static_cast<int>(d.rows) - 1;
    std::vector<double> total(gallery, 0.0);
    std::vector<bool> active(gallery, true);
    for (int k : ks) {
        const int k_expand = std::max(1, k / 2);
        const auto stage = kreciprocal_reference(d, k, k_expand, lambda);
        for (int j = 0; j < gallery; ++j)
            if (active[j]) total[j] += stage[j];
        std::vector<int> idx(gallery);
        for (int j = 0; j < gallery; ++j) idx[j] = j;
        std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
            if (total[a] != total[b]) return total[a] < total[b];
            return a < b;
        });
        for (int p = 0; p < std::min(k, gallery); ++p) active[idx[p]] = false;
    }
    return total;
}

}  // namespace oracle
