#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "hiergeo/embedding.hpp"
#include "hiergeo/geo.hpp"

namespace hiergeo {

using Vec = std::vector<double>;

// Per-scale margins, strictly decreasing, all positive.
struct MarginSchedule {
    std::vector<double> margins{0.3, 0.2, 0.1};
    void validate() const;
};

struct LossConfig {
    double tau = 32.0;
    MarginSchedule margin_schedule;
    double lambda1 = 0.2;  // multi-scale contrastive term
    double lambda2 = 0.1;  // clustering term
    double lambda3 = 0.9;  // optional external third term
    bool third_term_enabled = false;
    void validate() const;
};

// One unit-norm proxy per training class.
struct ProxyTable {
    std::vector<std::int64_t> building_ids;
    std::vector<Vec> proxies;

    std::size_t index_of(std::int64_t building_id) const;  // InputError if absent
    void renormalize();
};

struct BatchPairing {
    std::int64_t building_id = 0;
    std::int64_t drone_image_id = 0;
    std::int64_t satellite_image_id = 0;
};
// Distinct buildings, one cross-view image pair each.
using BatchPlan = std::vector<BatchPairing>;

// Mined reference sets for one anchor. Slots index the batch: for an anchor
// of view v, slot i refers to building i's opposite-view image.
struct AnchorSets {
    int anchor_slot = 0;
    View anchor_view = View::drone;
    std::vector<int> ref_levels;                // level per batch slot
    std::vector<std::vector<int>> positives;    // per scale l: slots with level <= l
    std::vector<int> negatives;                 // slots at the pure-negative level
};

struct ScaleTripletSets {
    int scale_count = 0;
    bool degenerate = false;  // no pure negatives anywhere in the batch
    std::vector<AnchorSets> anchors;
};

// Cross-view reference mining within one batch; both views anchor.
ScaleTripletSets mine_scale_sets(
    const BatchPlan& batch,
    const std::unordered_map<std::int64_t, ScalePartition>& partitions,
    const ScaleConfig& config);

struct DyclGradients {
    Vec anchor;
    std::vector<Vec> refs;  // aligned with the refs argument
};

// loss = sum_l log(1 + sum_{j in P_l} sum_{k in N} exp(tau (r_k - r_j + m_l)))
// over cosine similarities r = anchor . ref. Gradients are w.r.t. the unit
// vectors; map back through l2_normalize_backward for raw parameters.
double dycl_loss_and_grad(const Vec& anchor, const std::vector<Vec>& refs,
                          const std::vector<std::vector<int>>& positives,
                          const std::vector<int>& negatives,
                          const LossConfig& config, DyclGradients* grads);

struct ClusteringGradients {
    Vec feature;
    std::vector<Vec> proxies;  // aligned with the table
};

// loss = -log softmax(proxy . feature) at the labeled class.
double clustering_loss_and_grad(const Vec& feature, const ProxyTable& proxies,
                                std::int64_t label, ClusteringGradients* grads);

struct TripletGradients {
    Vec anchor, positive, negative;
};

// Hinge on cosine similarities, zero subgradient at the hinge point.
double triplet_loss_and_grad(const Vec& anchor, const Vec& positive,
                             const Vec& negative, double margin,
                             TripletGradients* grads);

// Component gradients keyed by caller-assigned parameter ids.
struct LossComponent {
    std::string name;  // "dycl", "clustering", or the enabled third term
    double loss = 0.0;
    std::map<std::int64_t, Vec> grads;
};

std::pair<double, std::map<std::int64_t, Vec>> total_loss(
    const std::vector<LossComponent>& components, const LossConfig& config);

}  // namespace hiergeo
