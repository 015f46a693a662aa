#include "hiergeo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "hiergeo/errors.hpp"
#include "hiergeo/parallel.hpp"

namespace hiergeo {

namespace {

std::string scale_name(int scale, int scale_count) {
    if (scale_count == 3) {
        static const char* names[] = {"small", "middle", "large"};
        return names[scale];
    }
    return "scale" + std::to_string(scale);
}

bool has_positive_gain(const std::vector<int>& levels,
                       const std::vector<double>& gains) {
    for (int lev : levels)
        if (gains[lev] > 0.0) return true;
    return false;
}

}  // namespace

MetricConfig MetricConfig::defaults(int scale_count) {
    MetricConfig cfg;
    cfg.gains.resize(scale_count + 1);
    for (int l = 0; l <= scale_count; ++l)
        cfg.gains[l] = static_cast<double>(scale_count - l) / scale_count;
    return cfg;
}

void MetricConfig::validate(int scale_count) const {
    if (gains.size() != static_cast<std::size_t>(scale_count) + 1)
        throw ConfigError("gains must have one entry per level (L + 1)");
    for (std::size_t l = 1; l < gains.size(); ++l)
        if (gains[l] > gains[l - 1])
            throw ConfigError("gains must be non-increasing in level");
    if (gains.back() != 0.0)
        throw ConfigError("pure-negative level must have zero gain");
    if (recall_ks.empty()) throw ConfigError("recall K list must be non-empty");
    for (int k : recall_ks)
        if (k < 1) throw ConfigError("recall K must be >= 1");
}

RelevanceTable build_relevance_table(const EmbeddingSet& queries,
                                     const EmbeddingSet& gallery,
                                     const CampusRegistry& registry,
                                     const ScaleConfig& config) {
    config.validate();
    RelevanceTable table;
    table.n_queries = queries.records.size();
    table.n_gallery = gallery.records.size();
    table.scale_count = config.levels();
    table.level.resize(table.n_queries * table.n_gallery);

    // Distances depend only on buildings; cache levels per building pair.
    std::unordered_map<std::int64_t, ScalePartition> partitions;
    for (const auto& q : queries.records)
        if (!partitions.count(q.building_id))
            partitions.emplace(q.building_id,
                               build_scale_partition(q.building_id, registry,
                                                     config));

    parallel_for(table.n_queries, [&](std::size_t qi) {
        const auto& part = partitions.at(queries.records[qi].building_id);
        for (std::size_t gi = 0; gi < table.n_gallery; ++gi) {
            table.level[qi * table.n_gallery + gi] = static_cast<std::uint8_t>(
                part.level_of(gallery.records[gi].building_id));
        }
    });
    return table;
}

int recall_at_k(const std::vector<int>& ranked_levels, int scale, int k) {
    if (k < 1) throw InputError("recall_at_k: K must be >= 1");
    const int limit =
        std::min<int>(k, static_cast<int>(ranked_levels.size()));
    for (int i = 0; i < limit; ++i)
        if (ranked_levels[i] <= scale) return 1;
    return 0;
}

double average_precision(const std::vector<int>& ranked_levels, int scale) {
    int total_relevant = 0;
    for (int lev : ranked_levels)
        if (lev <= scale) ++total_relevant;
    if (total_relevant == 0)
        throw InputError("average_precision: no relevant item at this scale");

    double sum = 0.0;
    int hits = 0;
    for (std::size_t i = 0; i < ranked_levels.size(); ++i) {
        if (ranked_levels[i] <= scale) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(i + 1);
        }
    }
    return sum / total_relevant;
}

double h_ap(const std::vector<int>& ranked_levels,
            const std::vector<double>& gains) {
    if (!has_positive_gain(ranked_levels, gains))
        throw InputError("h_ap: no positive-gain item");

    const std::size_t n = ranked_levels.size();
    double numerator = 0.0;
    double denominator = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double rel_k = gains[ranked_levels[k]];
        if (rel_k <= 0.0) continue;
        double hrank = rel_k;
        for (std::size_t j = 0; j < k; ++j)
            hrank += std::min(gains[ranked_levels[j]], rel_k);
        numerator += hrank / static_cast<double>(k + 1);
        denominator += rel_k;
    }
    return numerator / denominator;
}

double asi(const std::vector<int>& ranked_levels,
           const std::vector<double>& gains) {
    const int level_count = static_cast<int>(gains.size());
    std::vector<int> total_per_level(level_count, 0);
    int positive_items = 0;
    for (int lev : ranked_levels) {
        ++total_per_level[lev];
        if (gains[lev] > 0.0) ++positive_items;
    }
    if (positive_items == 0) throw InputError("asi: no positive-gain item");

    std::vector<int> predicted_per_level(level_count, 0);
    double sum = 0.0;
    for (int i = 1; i <= positive_items; ++i) {
        ++predicted_per_level[ranked_levels[i - 1]];
        // Ideal top-i: whole levels in ascending order, the boundary level
        // partially; tied items inside a level are interchangeable.
        int remaining = i;
        double intersection = 0.0;
        for (int lev = 0; lev < level_count && remaining > 0; ++lev) {
            const int ideal_count = std::min(remaining, total_per_level[lev]);
            intersection += std::min(predicted_per_level[lev], ideal_count);
            remaining -= ideal_count;
        }
        sum += intersection / static_cast<double>(i);
    }
    return sum / positive_items;
}

double ndcg(const std::vector<int>& ranked_levels, int scale_count) {
    bool any_gain = false;
    for (int lev : ranked_levels)
        if (lev < scale_count) any_gain = true;
    if (!any_gain) throw InputError("ndcg: all gains are zero");

    auto gain_of = [scale_count](int lev) {
        return std::pow(2.0, scale_count - lev) - 1.0;
    };
    double dcg = 0.0;
    for (std::size_t i = 0; i < ranked_levels.size(); ++i)
        dcg += gain_of(ranked_levels[i]) / std::log2(static_cast<double>(i + 2));

    std::vector<int> ideal = ranked_levels;
    std::sort(ideal.begin(), ideal.end());
    double idcg = 0.0;
    for (std::size_t i = 0; i < ideal.size(); ++i)
        idcg += gain_of(ideal[i]) / std::log2(static_cast<double>(i + 2));
    return dcg / idcg;
}

RankedList rank_by_score(const EmbeddingSet& gallery, const double* scores,
                         std::int64_t query_image_id, bool descending) {
    const std::size_t n = gallery.records.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b])
            return descending ? scores[a] > scores[b] : scores[a] < scores[b];
        return gallery.records[a].image_id < gallery.records[b].image_id;
    });
    RankedList out;
    out.query_image_id = query_image_id;
    out.gallery_order.reserve(n);
    for (std::size_t i : order)
        out.gallery_order.push_back(gallery.records[i].image_id);
    return out;
}

MetricReport evaluate(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                      const Matrix& scores, bool scores_are_similarity,
                      const RelevanceTable& relevance,
                      const MetricConfig& config) {
    const std::size_t nq = queries.records.size();
    const std::size_t ng = gallery.records.size();
    if (nq == 0) throw InputError("evaluate: empty query set");
    if (scores.rows != nq || scores.cols != ng)
        throw InputError("evaluate: score matrix shape mismatch");
    if (relevance.n_queries != nq || relevance.n_gallery != ng)
        throw InputError("evaluate: relevance table shape mismatch");
    const int scale_count = relevance.scale_count;
    config.validate(scale_count);

    const std::size_t n_ks = config.recall_ks.size();
    const double nan = std::numeric_limits<double>::quiet_NaN();

    // Per-query values; NaN marks an excluded query for that metric.
    std::vector<std::vector<double>> ap(scale_count,
                                        std::vector<double>(nq, nan));
    std::vector<std::vector<std::vector<double>>> rec(
        n_ks, std::vector<std::vector<double>>(
                  scale_count, std::vector<double>(nq, nan)));
    std::vector<double> hap_q(nq, nan), asi_q(nq, nan), ndcg_q(nq, nan);
    std::vector<std::uint8_t> excluded(nq, 0);

    parallel_for(nq, [&](std::size_t qi) {
        std::vector<std::size_t> order(ng);
        std::iota(order.begin(), order.end(), 0);
        const double* row = scores.row(qi);
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) {
                      if (row[a] != row[b])
                          return scores_are_similarity ? row[a] > row[b]
                                                       : row[a] < row[b];
                      return gallery.records[a].image_id <
                             gallery.records[b].image_id;
                  });
        std::vector<int> levels(ng);
        for (std::size_t i = 0; i < ng; ++i)
            levels[i] = relevance.at(qi, order[i]);

        bool skipped_any = false;
        for (int l = 0; l < scale_count; ++l) {
            bool relevant = false;
            for (int lev : levels)
                if (lev <= l) relevant = true;
            if (!relevant) {
                skipped_any = true;
                continue;
            }
            ap[l][qi] = average_precision(levels, l);
            for (std::size_t ki = 0; ki < n_ks; ++ki)
                rec[ki][l][qi] = recall_at_k(levels, l, config.recall_ks[ki]);
        }
        if (has_positive_gain(levels, config.gains)) {
            hap_q[qi] = h_ap(levels, config.gains);
            asi_q[qi] = asi(levels, config.gains);
            ndcg_q[qi] = ndcg(levels, scale_count);
        } else {
            skipped_any = true;
        }
        excluded[qi] = skipped_any ? 1 : 0;
    });

    auto mean_defined = [&](const std::vector<double>& v) {
        double sum = 0.0;
        std::size_t n = 0;
        for (double x : v) {
            if (std::isnan(x)) continue;
            sum += x;
            ++n;
        }
        return n == 0 ? 0.0 : sum / static_cast<double>(n);
    };

    MetricReport report;
    report.scale_count = scale_count;
    report.recall_ks = config.recall_ks;
    report.map_per_scale.resize(scale_count);
    report.recall_per_scale.assign(n_ks, std::vector<double>(scale_count));
    for (int l = 0; l < scale_count; ++l) {
        report.map_per_scale[l] = mean_defined(ap[l]);
        for (std::size_t ki = 0; ki < n_ks; ++ki)
            report.recall_per_scale[ki][l] = mean_defined(rec[ki][l]);
    }
    report.map_overall =
        std::accumulate(report.map_per_scale.begin(),
                        report.map_per_scale.end(), 0.0) /
        scale_count;
    auto k1 = std::find(config.recall_ks.begin(), config.recall_ks.end(), 1);
    if (k1 != config.recall_ks.end()) {
        const std::size_t ki = k1 - config.recall_ks.begin();
        report.r1_overall =
            std::accumulate(report.recall_per_scale[ki].begin(),
                            report.recall_per_scale[ki].end(), 0.0) /
            scale_count;
    }
    report.hap = mean_defined(hap_q);
    report.asi = mean_defined(asi_q);
    report.ndcg = mean_defined(ndcg_q);
    report.excluded_queries =
        std::accumulate(excluded.begin(), excluded.end(), std::int64_t{0});
    return report;
}

std::string MetricReport::to_json() const {
    nlohmann::ordered_json j;
    for (int l = 0; l < scale_count; ++l)
        j["map_" + scale_name(l, scale_count)] = map_per_scale[l];
    j["map_overall"] = map_overall;
    for (std::size_t ki = 0; ki < recall_ks.size(); ++ki)
        for (int l = 0; l < scale_count; ++l)
            j["r" + std::to_string(recall_ks[ki]) + "_" +
              scale_name(l, scale_count)] = recall_per_scale[ki][l];
    j["r1_overall"] = r1_overall;
    j["hap"] = hap;
    j["asi"] = asi;
    j["ndcg"] = ndcg;
    j["excluded_queries"] = excluded_queries;
    return j.dump(2);
}

std::string MetricReport::to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "metric,scale,value\n";
    for (int l = 0; l < scale_count; ++l)
        out << "map," << scale_name(l, scale_count) << ','
            << map_per_scale[l] << '\n';
    out << "map,overall," << map_overall << '\n';
    for (std::size_t ki = 0; ki < recall_ks.size(); ++ki)
        for (int l = 0; l < scale_count; ++l)
            out << 'r' << recall_ks[ki] << ',' << scale_name(l, scale_count)
                << ',' << recall_per_scale[ki][l] << '\n';
    out << "r1,overall," << r1_overall << '\n';
    out << "hap,all," << hap << '\n';
    out << "asi,all," << asi << '\n';
    out << "ndcg,all," << ndcg << '\n';
    out << "excluded_queries,all," << excluded_queries << '\n';
    return out.str();
}

}  // namespace hiergeo
