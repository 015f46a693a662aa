#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hiergeo/losses.hpp"
#include "hiergeo/synth.hpp"

namespace hiergeo {

struct TrainerConfig {
    int embed_dim = 64;
    int batch_buildings = 16;  // P distinct buildings per step
    int steps_per_epoch = 30;
    int epochs = 20;
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::uint64_t seed = 1;

    void validate() const;
};

// Shared linear siamese encoder plus the training-class proxies.
struct EncoderState {
    int raw_dim = 0;
    int embed_dim = 0;
    std::vector<double> weight;  // embed_dim x raw_dim, row-major
    Vec bias;
    ProxyTable proxies;
};

enum class TrainObjective {
    dycl,            // multi-scale contrastive + clustering
    triplet_single,  // hinge at the last threshold of the given scale config
    triplet_multi,   // hinge at every scale boundary
};

struct ObjectiveSpec {
    TrainObjective kind = TrainObjective::dycl;
    double triplet_margin = 0.3;
};

struct EpochLog {
    int epoch = 0;
    double mean_total = 0.0;
    double mean_dycl = 0.0;   // contrastive term (triplet term for ablations)
    double mean_clust = 0.0;
};

struct TrainResult {
    EncoderState state;
    std::vector<EpochLog> log;
};

// Linear map + per-record normalization.
EmbeddingSet encode(const EncoderState& state, const EmbeddingSet& raw);

TrainResult train(const TrainerConfig& trainer_config, const SynthOutput& data,
                  const LossConfig& loss_config, const ScaleConfig& scale_config,
                  const ObjectiveSpec& objective = {});

void save_encoder(const EncoderState& state, const std::string& path);
EncoderState load_encoder(const std::string& path);

// Central differences, step defaults to 1e-6 in f64.
Vec finite_difference_gradient(const std::function<double(const Vec&)>& f,
                               const Vec& x, double step = 1e-6);

// ||a - n|| / (||a|| + ||n||), zero when the difference is negligible.
double gradient_relative_error(const Vec& analytic, const Vec& numeric);

enum class LossKind { dycl, clustering, triplet };

// Max relative error of analytic vs numeric gradients over random trials.
double finite_difference_check(LossKind kind, int trials, std::uint64_t seed);

// Per-scale fraction of (anchor, positive, pure negative) cross-view triples
// whose similarity gap meets the scale margin; exhaustive over the given sets.
std::vector<double> margin_satisfaction_report(const EmbeddingSet& drone,
                                               const EmbeddingSet& satellite,
                                               const CampusRegistry& registry,
                                               const ScaleConfig& scale_config,
                                               const MarginSchedule& margins);

}  // namespace hiergeo
