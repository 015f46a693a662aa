#include "hiergeo/losses.hpp"

#include <algorithm>
#include <cmath>

#include "hiergeo/errors.hpp"

namespace hiergeo {

namespace {

constexpr double kUnitNormTolerance = 1e-3;

void check_unit(const Vec& v, const char* what) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    if (std::abs(std::sqrt(sq) - 1.0) > kUnitNormTolerance)
        throw InputError(std::string(what) + ": vector is not unit norm");
}

double dot(const Vec& a, const Vec& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

void axpy(double alpha, const Vec& x, Vec& y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace

void MarginSchedule::validate() const {
    if (margins.empty()) throw ConfigError("margin schedule must be non-empty");
    for (std::size_t l = 0; l < margins.size(); ++l) {
        if (!(margins[l] > 0.0)) throw ConfigError("margins must be positive");
        if (l > 0 && !(margins[l] < margins[l - 1]))
            throw ConfigError("margins must be strictly decreasing");
    }
}

void LossConfig::validate() const {
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (lambda1 < 0.0 || lambda2 < 0.0 || lambda3 < 0.0)
        throw ConfigError("loss weights must be non-negative");
    margin_schedule.validate();
}

std::size_t ProxyTable::index_of(std::int64_t building_id) const {
    for (std::size_t i = 0; i < building_ids.size(); ++i)
        if (building_ids[i] == building_id) return i;
    throw InputError("no proxy for building " + std::to_string(building_id));
}

void ProxyTable::renormalize() {
    for (auto& w : proxies) w = l2_normalize(w);
}

ScaleTripletSets mine_scale_sets(
    const BatchPlan& batch,
    const std::unordered_map<std::int64_t, ScalePartition>& partitions,
    const ScaleConfig& config) {
    config.validate();
    const int scale_count = config.levels();
    const int batch_size = static_cast<int>(batch.size());

    for (std::size_t i = 0; i < batch.size(); ++i)
        for (std::size_t j = i + 1; j < batch.size(); ++j)
            if (batch[i].building_id == batch[j].building_id)
                throw InputError("batch buildings must be distinct");

    ScaleTripletSets out;
    out.scale_count = scale_count;
    out.anchors.reserve(batch.size() * 2);

    bool any_negative = false;
    for (int slot = 0; slot < batch_size; ++slot) {
        auto it = partitions.find(batch[slot].building_id);
        if (it == partitions.end())
            throw InputError("no partition for batch building " +
                             std::to_string(batch[slot].building_id));
        const ScalePartition& part = it->second;

        for (View view : {View::drone, View::satellite}) {
            AnchorSets sets;
            sets.anchor_slot = slot;
            sets.anchor_view = view;
            sets.ref_levels.resize(batch_size);
            sets.positives.assign(scale_count, {});
            for (int ref = 0; ref < batch_size; ++ref) {
                const int level = ref == slot
                                      ? 0
                                      : part.level_of(batch[ref].building_id);
                sets.ref_levels[ref] = level;
                if (level >= scale_count) {
                    sets.negatives.push_back(ref);
                    any_negative = true;
                } else {
                    for (int l = level; l < scale_count; ++l)
                        sets.positives[l].push_back(ref);
                }
            }
            out.anchors.push_back(std::move(sets));
        }
    }
    out.degenerate = !any_negative;
    return out;
}

double dycl_loss_and_grad(const Vec& anchor, const std::vector<Vec>& refs,
                          const std::vector<std::vector<int>>& positives,
                          const std::vector<int>& negatives,
                          const LossConfig& config, DyclGradients* grads) {
    config.validate();
    const auto& margins = config.margin_schedule.margins;
    if (positives.size() != margins.size())
        throw ConfigError("positive sets and margins disagree on scale count");

    check_unit(anchor, "dycl anchor");
    for (const auto& r : refs) check_unit(r, "dycl reference");

    if (grads) {
        grads->anchor.assign(anchor.size(), 0.0);
        grads->refs.assign(refs.size(), Vec(anchor.size(), 0.0));
    }

    bool any_positive = false;
    for (const auto& p : positives)
        if (!p.empty()) any_positive = true;
    if (negatives.empty() || !any_positive) return 0.0;  // degenerate, not an error

    const double tau = config.tau;
    std::vector<double> sims(refs.size());
    for (std::size_t i = 0; i < refs.size(); ++i) sims[i] = dot(anchor, refs[i]);

    // The double sum factorizes: sum_j sum_k exp(tau (r_k - r_j + m)) =
    // e^{tau m} (sum_j e^{-tau r_j}) (sum_k e^{tau r_k}).
    double neg_sum = 0.0;
    std::vector<double> neg_exp(negatives.size());
    for (std::size_t k = 0; k < negatives.size(); ++k) {
        neg_exp[k] = std::exp(tau * sims[negatives[k]]);
        neg_sum += neg_exp[k];
    }

    std::vector<double> sim_grad(refs.size(), 0.0);
    double loss = 0.0;
    for (std::size_t l = 0; l < positives.size(); ++l) {
        if (positives[l].empty()) continue;
        const double margin_factor = std::exp(tau * margins[l]);
        double pos_sum = 0.0;
        std::vector<double> pos_exp(positives[l].size());
        for (std::size_t j = 0; j < positives[l].size(); ++j) {
            pos_exp[j] = std::exp(-tau * sims[positives[l][j]]);
            pos_sum += pos_exp[j];
        }
        const double inner = margin_factor * pos_sum * neg_sum;
        loss += std::log1p(inner);
        if (!grads) continue;
        const double scale = margin_factor / (1.0 + inner);
        for (std::size_t j = 0; j < positives[l].size(); ++j)
            sim_grad[positives[l][j]] -= tau * scale * pos_exp[j] * neg_sum;
        for (std::size_t k = 0; k < negatives.size(); ++k)
            sim_grad[negatives[k]] += tau * scale * neg_exp[k] * pos_sum;
    }

    if (grads) {
        for (std::size_t i = 0; i < refs.size(); ++i) {
            if (sim_grad[i] == 0.0) continue;
            axpy(sim_grad[i], refs[i], grads->anchor);
            axpy(sim_grad[i], anchor, grads->refs[i]);
        }
    }
    return loss;
}

double clustering_loss_and_grad(const Vec& feature, const ProxyTable& proxies,
                                std::int64_t label,
                                ClusteringGradients* grads) {
    check_unit(feature, "clustering feature");
    const std::size_t target = proxies.index_of(label);
    const std::size_t n = proxies.proxies.size();

    std::vector<double> logits(n);
    double max_logit = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
        logits[j] = dot(proxies.proxies[j], feature);
        max_logit = std::max(max_logit, logits[j]);
    }
    double denom = 0.0;
    std::vector<double> shifted(n);
    for (std::size_t j = 0; j < n; ++j) {
        shifted[j] = std::exp(logits[j] - max_logit);
        denom += shifted[j];
    }
    const double loss = -(logits[target] - max_logit - std::log(denom));

    if (grads) {
        grads->feature.assign(feature.size(), 0.0);
        grads->proxies.assign(n, Vec(feature.size(), 0.0));
        for (std::size_t j = 0; j < n; ++j) {
            const double residual =
                shifted[j] / denom - (j == target ? 1.0 : 0.0);
            axpy(residual, proxies.proxies[j], grads->feature);
            axpy(residual, feature, grads->proxies[j]);
        }
    }
    return loss;
}

double triplet_loss_and_grad(const Vec& anchor, const Vec& positive,
                             const Vec& negative, double margin,
                             TripletGradients* grads) {
    check_unit(anchor, "triplet anchor");
    check_unit(positive, "triplet positive");
    check_unit(negative, "triplet negative");

    const double sim_pos = dot(anchor, positive);
    const double sim_neg = dot(anchor, negative);
    const double violation = margin - sim_pos + sim_neg;

    if (grads) {
        grads->anchor.assign(anchor.size(), 0.0);
        grads->positive.assign(anchor.size(), 0.0);
        grads->negative.assign(anchor.size(), 0.0);
        if (violation > 0.0) {
            for (std::size_t i = 0; i < anchor.size(); ++i) {
                grads->anchor[i] = negative[i] - positive[i];
                grads->positive[i] = -anchor[i];
                grads->negative[i] = anchor[i];
            }
        }
    }
    return std::max(0.0, violation);
}

std::pair<double, std::map<std::int64_t, Vec>> total_loss(
    const std::vector<LossComponent>& components, const LossConfig& config) {
    config.validate();
    double total = 0.0;
    std::map<std::int64_t, Vec> merged;
    for (const auto& comp : components) {
        double weight;
        if (comp.name == "dycl") {
            weight = config.lambda1;
        } else if (comp.name == "clustering") {
            weight = config.lambda2;
        } else if (config.third_term_enabled) {
            weight = config.lambda3;
        } else {
            throw ConfigError("unknown loss component: " + comp.name);
        }
        total += weight * comp.loss;
        for (const auto& [param, grad] : comp.grads) {
            auto [it, inserted] = merged.try_emplace(param, grad.size(), 0.0);
            if (it->second.size() != grad.size())
                throw InputError("gradient size mismatch for parameter " +
                                 std::to_string(param));
            axpy(weight, grad, it->second);
        }
    }
    return {total, std::move(merged)};
}

}  // namespace hiergeo
