#include "hiergeo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "hiergeo/errors.hpp"
#include "hiergeo/parallel.hpp"
#include "hiergeo/rng.hpp"

namespace hiergeo {

namespace {

Vec to_f64(const std::vector<float>& v) {
    Vec out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i];
    return out;
}

Vec random_unit(int dim, Rng& rng) {
    Vec v(dim);
    for (auto& x : v) x = rng.normal();
    return l2_normalize(v);
}

struct BatchWorkspace {
    // 2P embeddings laid out as slot * 2 + view.
    std::vector<Vec> raw;      // input features
    std::vector<Vec> pre;      // W x + b
    std::vector<Vec> unit;     // normalized embeddings
    std::vector<std::int64_t> labels;
};

int embedding_index(int slot, View view) {
    return slot * 2 + (view == View::drone ? 0 : 1);
}

// Per-anchor results computed in parallel, reduced in anchor order.
struct AnchorResult {
    double contrastive = 0.0;
    double clustering = 0.0;
    // contrastive contributions keyed by embedding index
    std::vector<std::pair<int, Vec>> embed_grads;
    Vec clustering_feature_grad;   // w.r.t. the anchor embedding
    std::vector<Vec> proxy_grads;  // aligned with the table; empty if unused
};

}  // namespace

void TrainerConfig::validate() const {
    if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
    if (batch_buildings < 2)
        throw ConfigError("batch_buildings must be >= 2 (no negatives otherwise)");
    if (steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0)
        throw ConfigError("momentum must be in [0, 1)");
}

EmbeddingSet encode(const EncoderState& state, const EmbeddingSet& raw) {
    if (static_cast<int>(raw.dimension) != state.raw_dim)
        throw InputError("encode: raw dimension mismatch");
    EmbeddingSet out;
    out.dimension = static_cast<std::uint32_t>(state.embed_dim);
    out.records.resize(raw.records.size());
    parallel_for(raw.records.size(), [&](std::size_t i) {
        const auto& src = raw.records[i];
        Vec z(state.embed_dim, 0.0);
        for (int r = 0; r < state.embed_dim; ++r) {
            const double* wrow =
                state.weight.data() + static_cast<std::size_t>(r) * state.raw_dim;
            double acc = state.bias[r];
            for (int c = 0; c < state.raw_dim; ++c)
                acc += wrow[c] * static_cast<double>(src.vector[c]);
            z[r] = acc;
        }
        const Vec unit = l2_normalize(z);
        EmbeddingRecord rec;
        rec.image_id = src.image_id;
        rec.building_id = src.building_id;
        rec.view = src.view;
        rec.vector.resize(state.embed_dim);
        for (int d = 0; d < state.embed_dim; ++d)
            rec.vector[d] = static_cast<float>(unit[d]);
        out.records[i] = std::move(rec);
    });
    out.normalized = true;
    return out;
}

TrainResult train(const TrainerConfig& trainer_config, const SynthOutput& data,
                  const LossConfig& loss_config, const ScaleConfig& scale_config,
                  const ObjectiveSpec& objective) {
    trainer_config.validate();
    loss_config.validate();
    scale_config.validate();

    const CampusRegistry train_registry = data.registry.subset(Split::train);
    if (train_registry.buildings.empty())
        throw InputError("train: empty training split");
    const int n_train = static_cast<int>(train_registry.buildings.size());
    const int batch_size = std::min(trainer_config.batch_buildings, n_train);
    if (batch_size < 2) throw InputError("train: need at least 2 train buildings");

    const int raw_dim = static_cast<int>(data.drone_raw.dimension);
    const int embed_dim = trainer_config.embed_dim;
    const int scale_count = scale_config.levels();

    // Index raw features and image lists by building.
    std::unordered_map<std::int64_t, Vec> raw_features;
    std::unordered_map<std::int64_t, std::vector<std::int64_t>> drone_images;
    std::unordered_map<std::int64_t, std::vector<std::int64_t>> sat_images;
    std::unordered_map<std::int64_t, bool> is_train;
    for (const auto& b : train_registry.buildings) is_train[b.building_id] = true;
    for (const auto* set : {&data.drone_raw, &data.satellite_raw}) {
        for (const auto& r : set->records) {
            if (!is_train.count(r.building_id)) continue;
            raw_features[r.image_id] = to_f64(r.vector);
            (r.view == View::drone ? drone_images : sat_images)[r.building_id]
                .push_back(r.image_id);
        }
    }
    for (const auto& b : train_registry.buildings) {
        if (!drone_images.count(b.building_id) ||
            !sat_images.count(b.building_id))
            throw InputError("train: building " +
                             std::to_string(b.building_id) +
                             " lacks images in one view");
    }

    std::unordered_map<std::int64_t, ScalePartition> partitions;
    for (const auto& b : train_registry.buildings)
        partitions.emplace(
            b.building_id,
            build_scale_partition(b.building_id, train_registry, scale_config));

    // Encoder init: uniform in +-1/sqrt(raw_dim); proxies random unit.
    Rng root(trainer_config.seed);
    Rng init_rng = root.fork(1);
    Rng proxy_rng = root.fork(2);
    Rng sample_rng = root.fork(3);

    EncoderState state;
    state.raw_dim = raw_dim;
    state.embed_dim = embed_dim;
    const double init_bound = 1.0 / std::sqrt(static_cast<double>(raw_dim));
    state.weight.resize(static_cast<std::size_t>(embed_dim) * raw_dim);
    for (auto& w : state.weight) w = init_rng.uniform(-init_bound, init_bound);
    state.bias.assign(embed_dim, 0.0);
    for (auto& b : state.bias) b = init_rng.uniform(-init_bound, init_bound);
    for (const auto& b : train_registry.buildings) {
        state.proxies.building_ids.push_back(b.building_id);
        state.proxies.proxies.push_back(random_unit(embed_dim, proxy_rng));
    }

    const bool use_dycl = objective.kind == TrainObjective::dycl;
    const std::size_t n_proxies = state.proxies.proxies.size();

    std::vector<double> vel_weight(state.weight.size(), 0.0);
    Vec vel_bias(embed_dim, 0.0);
    std::vector<Vec> vel_proxy(n_proxies, Vec(embed_dim, 0.0));

    std::vector<int> building_pool(n_train);
    for (int i = 0; i < n_train; ++i) building_pool[i] = i;

    TrainResult result;
    std::int64_t global_step = 0;

    for (int epoch = 0; epoch < trainer_config.epochs; ++epoch) {
        double epoch_total = 0.0, epoch_contrastive = 0.0, epoch_clust = 0.0;

        for (int step = 0; step < trainer_config.steps_per_epoch; ++step) {
            ++global_step;
            // Partial Fisher-Yates for P distinct buildings.
            for (int i = 0; i < batch_size; ++i) {
                const int j = i + static_cast<int>(sample_rng.uniform_int(
                                      static_cast<std::uint64_t>(n_train - i)));
                std::swap(building_pool[i], building_pool[j]);
            }
            BatchPlan batch(batch_size);
            for (int i = 0; i < batch_size; ++i) {
                const auto& b = train_registry.buildings[building_pool[i]];
                const auto& drones = drone_images.at(b.building_id);
                const auto& sats = sat_images.at(b.building_id);
                batch[i].building_id = b.building_id;
                batch[i].drone_image_id =
                    drones[sample_rng.uniform_int(drones.size())];
                batch[i].satellite_image_id =
                    sats[sample_rng.uniform_int(sats.size())];
            }

            const int n_embed = batch_size * 2;
            BatchWorkspace ws;
            ws.raw.resize(n_embed);
            ws.pre.resize(n_embed);
            ws.unit.resize(n_embed);
            ws.labels.resize(n_embed);
            for (int slot = 0; slot < batch_size; ++slot) {
                for (View view : {View::drone, View::satellite}) {
                    const int idx = embedding_index(slot, view);
                    const std::int64_t image = view == View::drone
                                                   ? batch[slot].drone_image_id
                                                   : batch[slot].satellite_image_id;
                    ws.raw[idx] = raw_features.at(image);
                    ws.labels[idx] = batch[slot].building_id;
                }
            }
            parallel_for(n_embed, [&](std::size_t idx) {
                Vec z(embed_dim, 0.0);
                for (int r = 0; r < embed_dim; ++r) {
                    const double* wrow = state.weight.data() +
                                         static_cast<std::size_t>(r) * raw_dim;
                    double acc = state.bias[r];
                    for (int c = 0; c < raw_dim; ++c)
                        acc += wrow[c] * ws.raw[idx][c];
                    z[r] = acc;
                }
                ws.unit[idx] = l2_normalize(z);
                ws.pre[idx] = std::move(z);
            });

            const ScaleTripletSets sets =
                mine_scale_sets(batch, partitions, scale_config);
            const int n_anchors = static_cast<int>(sets.anchors.size());

            std::vector<AnchorResult> results(n_anchors);
            parallel_for(n_anchors, [&](std::size_t ai) {
                const AnchorSets& anchor = sets.anchors[ai];
                const View ref_view = anchor.anchor_view == View::drone
                                          ? View::satellite
                                          : View::drone;
                const int anchor_idx =
                    embedding_index(anchor.anchor_slot, anchor.anchor_view);
                AnchorResult& res = results[ai];

                std::vector<Vec> refs(batch_size);
                for (int slot = 0; slot < batch_size; ++slot)
                    refs[slot] = ws.unit[embedding_index(slot, ref_view)];

                auto add_embed_grad = [&](int idx, const Vec& g, double scale) {
                    Vec scaled(g.size());
                    for (std::size_t d = 0; d < g.size(); ++d)
                        scaled[d] = g[d] * scale;
                    res.embed_grads.emplace_back(idx, std::move(scaled));
                };

                if (use_dycl) {
                    DyclGradients dg;
                    res.contrastive = dycl_loss_and_grad(
                        ws.unit[anchor_idx], refs, anchor.positives,
                        anchor.negatives, loss_config, &dg);
                    add_embed_grad(anchor_idx, dg.anchor, 1.0);
                    for (int slot = 0; slot < batch_size; ++slot) {
                        bool zero = true;
                        for (double v : dg.refs[slot])
                            if (v != 0.0) zero = false;
                        if (!zero)
                            add_embed_grad(embedding_index(slot, ref_view),
                                           dg.refs[slot], 1.0);
                    }

                    ClusteringGradients cg;
                    res.clustering = clustering_loss_and_grad(
                        ws.unit[anchor_idx], state.proxies,
                        ws.labels[anchor_idx], &cg);
                    res.clustering_feature_grad = std::move(cg.feature);
                    res.proxy_grads = std::move(cg.proxies);
                } else {
                    // Conventional triplet hinges; single-scale uses only the
                    // final boundary of the (restricted) scale config.
                    const int first_scale =
                        objective.kind == TrainObjective::triplet_single
                            ? scale_count - 1
                            : 0;
                    for (int l = first_scale; l < scale_count; ++l) {
                        std::vector<int> pos, neg;
                        for (int slot = 0; slot < batch_size; ++slot) {
                            if (anchor.ref_levels[slot] <= l)
                                pos.push_back(slot);
                            else
                                neg.push_back(slot);
                        }
                        if (pos.empty() || neg.empty()) continue;
                        const double pair_scale =
                            1.0 / (static_cast<double>(pos.size()) * neg.size());
                        for (int p : pos) {
                            for (int nidx : neg) {
                                TripletGradients tg;
                                const double loss = triplet_loss_and_grad(
                                    ws.unit[anchor_idx], refs[p], refs[nidx],
                                    objective.triplet_margin, &tg);
                                res.contrastive += loss * pair_scale;
                                if (loss > 0.0) {
                                    add_embed_grad(anchor_idx, tg.anchor,
                                                   pair_scale);
                                    add_embed_grad(
                                        embedding_index(p, ref_view),
                                        tg.positive, pair_scale);
                                    add_embed_grad(
                                        embedding_index(nidx, ref_view),
                                        tg.negative, pair_scale);
                                }
                            }
                        }
                    }
                }
            });

            // Fixed-order reduction keeps f64 sums thread-count invariant.
            const double anchor_scale = 1.0 / n_anchors;
            double batch_contrastive = 0.0, batch_clust = 0.0;
            std::vector<Vec> unit_grads(n_embed, Vec(embed_dim, 0.0));
            std::vector<Vec> proxy_grads(n_proxies, Vec(embed_dim, 0.0));
            double batch_total;
            if (use_dycl) {
                LossComponent contrastive_comp, clustering_comp;
                contrastive_comp.name = "dycl";
                clustering_comp.name = "clustering";
                for (const auto& res : results) {
                    contrastive_comp.loss += res.contrastive * anchor_scale;
                    clustering_comp.loss += res.clustering * anchor_scale;
                }
                for (int ai = 0; ai < n_anchors; ++ai) {
                    const auto& res = results[ai];
                    const int anchor_idx = embedding_index(
                        sets.anchors[ai].anchor_slot,
                        sets.anchors[ai].anchor_view);
                    for (const auto& [idx, g] : res.embed_grads) {
                        auto [it, ins] = contrastive_comp.grads.try_emplace(
                            idx, Vec(embed_dim, 0.0));
                        for (int d = 0; d < embed_dim; ++d)
                            it->second[d] += g[d] * anchor_scale;
                    }
                    {
                        auto [it, ins] = clustering_comp.grads.try_emplace(
                            anchor_idx, Vec(embed_dim, 0.0));
                        for (int d = 0; d < embed_dim; ++d)
                            it->second[d] +=
                                res.clustering_feature_grad[d] * anchor_scale;
                    }
                    for (std::size_t j = 0; j < res.proxy_grads.size(); ++j) {
                        auto [it, ins] = clustering_comp.grads.try_emplace(
                            n_embed + static_cast<std::int64_t>(j),
                            Vec(embed_dim, 0.0));
                        for (int d = 0; d < embed_dim; ++d)
                            it->second[d] += res.proxy_grads[j][d] * anchor_scale;
                    }
                }
                batch_contrastive = contrastive_comp.loss;
                batch_clust = clustering_comp.loss;
                auto [total, merged] = total_loss(
                    {contrastive_comp, clustering_comp}, loss_config);
                batch_total = total;
                for (auto& [param, g] : merged) {
                    if (param < n_embed)
                        unit_grads[param] = std::move(g);
                    else
                        proxy_grads[param - n_embed] = std::move(g);
                }
            } else {
                for (const auto& res : results)
                    batch_contrastive += res.contrastive * anchor_scale;
                for (const auto& res : results)
                    for (const auto& [idx, g] : res.embed_grads)
                        for (int d = 0; d < embed_dim; ++d)
                            unit_grads[idx][d] += g[d] * anchor_scale;
                batch_total = batch_contrastive;
            }

            if (!std::isfinite(batch_total))
                throw std::runtime_error("training diverged at step " +
                                         std::to_string(global_step));

            // Backprop through normalization and the shared linear map.
            std::vector<double> grad_weight(state.weight.size(), 0.0);
            Vec grad_bias(embed_dim, 0.0);
            for (int idx = 0; idx < n_embed; ++idx) {
                const Vec grad_pre =
                    l2_normalize_backward(ws.pre[idx], unit_grads[idx]);
                for (int r = 0; r < embed_dim; ++r) {
                    if (grad_pre[r] == 0.0) continue;
                    double* wrow = grad_weight.data() +
                                   static_cast<std::size_t>(r) * raw_dim;
                    for (int c = 0; c < raw_dim; ++c)
                        wrow[c] += grad_pre[r] * ws.raw[idx][c];
                    grad_bias[r] += grad_pre[r];
                }
            }

            const double lr = trainer_config.learning_rate;
            const double mom = trainer_config.momentum;
            for (std::size_t i = 0; i < state.weight.size(); ++i) {
                vel_weight[i] = mom * vel_weight[i] - lr * grad_weight[i];
                state.weight[i] += vel_weight[i];
            }
            for (int r = 0; r < embed_dim; ++r) {
                vel_bias[r] = mom * vel_bias[r] - lr * grad_bias[r];
                state.bias[r] += vel_bias[r];
            }
            if (use_dycl) {
                for (std::size_t j = 0; j < n_proxies; ++j) {
                    bool zero = true;
                    for (double v : proxy_grads[j])
                        if (v != 0.0) zero = false;
                    bool moving = !zero;
                    for (double v : vel_proxy[j])
                        if (v != 0.0) moving = true;
                    if (!moving) continue;
                    for (int d = 0; d < embed_dim; ++d) {
                        vel_proxy[j][d] =
                            mom * vel_proxy[j][d] - lr * proxy_grads[j][d];
                        state.proxies.proxies[j][d] += vel_proxy[j][d];
                    }
                    state.proxies.proxies[j] =
                        l2_normalize(state.proxies.proxies[j]);
                }
            }

            epoch_total += batch_total;
            epoch_contrastive += batch_contrastive;
            epoch_clust += batch_clust;
        }

        EpochLog log;
        log.epoch = epoch + 1;
        log.mean_total = epoch_total / trainer_config.steps_per_epoch;
        log.mean_dycl = epoch_contrastive / trainer_config.steps_per_epoch;
        log.mean_clust = epoch_clust / trainer_config.steps_per_epoch;
        result.log.push_back(log);
    }

    result.state = std::move(state);
    return result;
}

void save_encoder(const EncoderState& state, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write encoder: " + path);
    const char magic[8] = {'H', 'G', 'E', 'O', '1', 'E', 'N', 'C'};
    out.write(magic, sizeof(magic));
    auto write_u64 = [&](std::uint64_t v) {
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    };
    write_u64(static_cast<std::uint64_t>(state.raw_dim));
    write_u64(static_cast<std::uint64_t>(state.embed_dim));
    write_u64(state.proxies.proxies.size());
    out.write(reinterpret_cast<const char*>(state.weight.data()),
              static_cast<std::streamsize>(state.weight.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(state.bias.data()),
              static_cast<std::streamsize>(state.bias.size() * sizeof(double)));
    for (std::size_t j = 0; j < state.proxies.proxies.size(); ++j) {
        write_u64(static_cast<std::uint64_t>(state.proxies.building_ids[j]));
        out.write(reinterpret_cast<const char*>(state.proxies.proxies[j].data()),
                  static_cast<std::streamsize>(state.proxies.proxies[j].size() *
                                               sizeof(double)));
    }
    if (!out) throw IoError("write failed: " + path);
}

EncoderState load_encoder(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open encoder: " + path);
    char magic[8] = {};
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, "HGEO1ENC", 8) != 0)
        throw InputError(path + ": bad encoder magic");
    auto read_u64 = [&](const char* what) {
        std::uint64_t v = 0;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        if (!in) throw InputError(std::string("truncated encoder file at ") + what);
        return v;
    };
    EncoderState state;
    state.raw_dim = static_cast<int>(read_u64("raw_dim"));
    state.embed_dim = static_cast<int>(read_u64("embed_dim"));
    const std::uint64_t n_proxies = read_u64("proxy count");
    state.weight.resize(static_cast<std::size_t>(state.raw_dim) *
                        state.embed_dim);
    in.read(reinterpret_cast<char*>(state.weight.data()),
            static_cast<std::streamsize>(state.weight.size() * sizeof(double)));
    state.bias.resize(state.embed_dim);
    in.read(reinterpret_cast<char*>(state.bias.data()),
            static_cast<std::streamsize>(state.bias.size() * sizeof(double)));
    if (!in) throw InputError(path + ": truncated encoder payload");
    for (std::uint64_t j = 0; j < n_proxies; ++j) {
        state.proxies.building_ids.push_back(
            static_cast<std::int64_t>(read_u64("proxy id")));
        Vec w(state.embed_dim);
        in.read(reinterpret_cast<char*>(w.data()),
                static_cast<std::streamsize>(w.size() * sizeof(double)));
        if (!in) throw InputError(path + ": truncated proxy payload");
        state.proxies.proxies.push_back(std::move(w));
    }
    return state;
}

Vec finite_difference_gradient(const std::function<double(const Vec&)>& f,
                               const Vec& x, double step) {
    Vec grad(x.size());
    Vec probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + step;
        const double hi = f(probe);
        probe[i] = saved - step;
        const double lo = f(probe);
        probe[i] = saved;
        grad[i] = (hi - lo) / (2.0 * step);
    }
    return grad;
}

double gradient_relative_error(const Vec& analytic, const Vec& numeric) {
    if (analytic.size() != numeric.size())
        throw InputError("gradient_relative_error: size mismatch");
    double diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double d = analytic[i] - numeric[i];
        diff_sq += d * d;
        a_sq += analytic[i] * analytic[i];
        n_sq += numeric[i] * numeric[i];
    }
    const double diff = std::sqrt(diff_sq);
    if (diff < 1e-10) return 0.0;
    return diff / (std::sqrt(a_sq) + std::sqrt(n_sq));
}

namespace {

double dycl_trial(Rng& rng) {
    const int dim = 4 + static_cast<int>(rng.uniform_int(9));
    const int scales = 1 + static_cast<int>(rng.uniform_int(3));
    const int n_pos = 1 + static_cast<int>(rng.uniform_int(3));
    const int n_neg = 1 + static_cast<int>(rng.uniform_int(3));

    LossConfig config;
    config.tau = std::exp(rng.uniform(std::log(4.0), std::log(64.0)));
    config.margin_schedule.margins.clear();
    double margin = rng.uniform(0.2, 0.4);
    for (int l = 0; l < scales; ++l) {
        config.margin_schedule.margins.push_back(margin);
        margin *= rng.uniform(0.4, 0.8);
    }

    const int n_refs = n_pos + n_neg;
    std::vector<Vec> refs;
    for (int i = 0; i < n_refs; ++i) refs.push_back(random_unit(dim, rng));
    Vec anchor = random_unit(dim, rng);

    // Nested positive sets over the first n_pos refs.
    std::vector<std::vector<int>> positives(scales);
    for (int j = 0; j < n_pos; ++j) {
        const int entry_scale = static_cast<int>(rng.uniform_int(scales));
        for (int l = entry_scale; l < scales; ++l) positives[l].push_back(j);
    }
    std::vector<int> negatives;
    for (int k = 0; k < n_neg; ++k) negatives.push_back(n_pos + k);

    DyclGradients grads;
    dycl_loss_and_grad(anchor, refs, positives, negatives, config, &grads);

    Vec flat;
    flat.insert(flat.end(), anchor.begin(), anchor.end());
    for (const auto& r : refs) flat.insert(flat.end(), r.begin(), r.end());
    Vec analytic;
    analytic.insert(analytic.end(), grads.anchor.begin(), grads.anchor.end());
    for (const auto& g : grads.refs)
        analytic.insert(analytic.end(), g.begin(), g.end());

    auto eval = [&](const Vec& params) {
        Vec a(params.begin(), params.begin() + dim);
        std::vector<Vec> r(n_refs);
        for (int i = 0; i < n_refs; ++i)
            r[i] = Vec(params.begin() + dim * (i + 1),
                       params.begin() + dim * (i + 2));
        return dycl_loss_and_grad(a, r, positives, negatives, config, nullptr);
    };
    return gradient_relative_error(analytic,
                                   finite_difference_gradient(eval, flat));
}

double clustering_trial(Rng& rng) {
    const int dim = 4 + static_cast<int>(rng.uniform_int(9));
    const int classes = 2 + static_cast<int>(rng.uniform_int(7));
    ProxyTable table;
    for (int c = 0; c < classes; ++c) {
        table.building_ids.push_back(c + 1);
        table.proxies.push_back(random_unit(dim, rng));
    }
    const std::int64_t label =
        1 + static_cast<std::int64_t>(rng.uniform_int(classes));
    Vec feature = random_unit(dim, rng);

    ClusteringGradients grads;
    clustering_loss_and_grad(feature, table, label, &grads);

    Vec flat;
    flat.insert(flat.end(), feature.begin(), feature.end());
    for (const auto& w : table.proxies) flat.insert(flat.end(), w.begin(), w.end());
    Vec analytic;
    analytic.insert(analytic.end(), grads.feature.begin(), grads.feature.end());
    for (const auto& g : grads.proxies)
        analytic.insert(analytic.end(), g.begin(), g.end());

    auto eval = [&](const Vec& params) {
        Vec f(params.begin(), params.begin() + dim);
        ProxyTable t = table;
        for (int c = 0; c < classes; ++c)
            t.proxies[c] = Vec(params.begin() + dim * (c + 1),
                               params.begin() + dim * (c + 2));
        return clustering_loss_and_grad(f, t, label, nullptr);
    };
    return gradient_relative_error(analytic,
                                   finite_difference_gradient(eval, flat));
}

double triplet_trial(Rng& rng) {
    const int dim = 4 + static_cast<int>(rng.uniform_int(9));
    Vec anchor = random_unit(dim, rng);
    Vec positive = random_unit(dim, rng);
    Vec negative = random_unit(dim, rng);
    const double margin = rng.uniform(0.05, 0.5);

    TripletGradients grads;
    triplet_loss_and_grad(anchor, positive, negative, margin, &grads);

    Vec flat;
    for (const Vec* v : {&anchor, &positive, &negative})
        flat.insert(flat.end(), v->begin(), v->end());
    Vec analytic;
    for (const Vec* v : {&grads.anchor, &grads.positive, &grads.negative})
        analytic.insert(analytic.end(), v->begin(), v->end());

    auto eval = [&](const Vec& params) {
        Vec a(params.begin(), params.begin() + dim);
        Vec p(params.begin() + dim, params.begin() + 2 * dim);
        Vec n(params.begin() + 2 * dim, params.begin() + 3 * dim);
        return triplet_loss_and_grad(a, p, n, margin, nullptr);
    };
    // The hinge is non-differentiable exactly at the boundary; skip the
    // measure-zero case where the finite difference straddles it.
    const double sim_gap = [&] {
        double sp = 0.0, sn = 0.0;
        for (int i = 0; i < dim; ++i) {
            sp += anchor[i] * positive[i];
            sn += anchor[i] * negative[i];
        }
        return margin - sp + sn;
    }();
    if (std::abs(sim_gap) < 1e-4) return 0.0;
    return gradient_relative_error(analytic,
                                   finite_difference_gradient(eval, flat));
}

}  // namespace

double finite_difference_check(LossKind kind, int trials, std::uint64_t seed) {
    Rng rng(Rng::mix(seed ^ 0x5eedf00dULL));
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        double err = 0.0;
        switch (kind) {
            case LossKind::dycl: err = dycl_trial(rng); break;
            case LossKind::clustering: err = clustering_trial(rng); break;
            case LossKind::triplet: err = triplet_trial(rng); break;
        }
        worst = std::max(worst, err);
    }
    return worst;
}

std::vector<double> margin_satisfaction_report(const EmbeddingSet& drone,
                                               const EmbeddingSet& satellite,
                                               const CampusRegistry& registry,
                                               const ScaleConfig& scale_config,
                                               const MarginSchedule& margins) {
    scale_config.validate();
    margins.validate();
    const int scale_count = scale_config.levels();
    if (static_cast<int>(margins.margins.size()) != scale_count)
        throw ConfigError("margin schedule length must equal scale count");

    std::unordered_map<std::int64_t, ScalePartition> partitions;
    for (const auto& b : registry.buildings)
        partitions.emplace(
            b.building_id,
            build_scale_partition(b.building_id, registry, scale_config));

    struct ScaleCounts {
        double satisfied = 0.0;
        double total = 0.0;
    };
    std::vector<ScaleCounts> counts(scale_count);

    auto process_anchors = [&](const EmbeddingSet& all_anchors,
                               const EmbeddingSet& all_refs) {
        std::vector<std::int64_t> known;
        for (const auto& b : registry.buildings) known.push_back(b.building_id);
        const EmbeddingSet anchors = all_anchors.filter_buildings(known);
        const EmbeddingSet refs = all_refs.filter_buildings(known);
        const std::size_t dim = anchors.dimension;
        std::vector<std::vector<ScaleCounts>> per_anchor(
            anchors.records.size(), std::vector<ScaleCounts>(scale_count));
        parallel_for(anchors.records.size(), [&](std::size_t ai) {
            const auto& anchor = anchors.records[ai];
            const auto& part = partitions.at(anchor.building_id);
            // similarity per reference, grouped by level
            std::vector<std::vector<double>> by_level(scale_count + 1);
            for (const auto& ref : refs.records) {
                const int level = part.level_of(ref.building_id);
                double sim = 0.0;
                for (std::size_t d = 0; d < dim; ++d)
                    sim += static_cast<double>(anchor.vector[d]) *
                           static_cast<double>(ref.vector[d]);
                by_level[level].push_back(sim);
            }
            auto& negs = by_level[scale_count];
            std::sort(negs.begin(), negs.end());
            std::vector<double> positives;
            for (int l = 0; l < scale_count; ++l) {
                positives.insert(positives.end(), by_level[l].begin(),
                                 by_level[l].end());
                if (negs.empty() || positives.empty()) continue;
                const double margin = margins.margins[l];
                for (double sim_pos : positives) {
                    // negatives with sim <= sim_pos - margin satisfy the gap
                    const auto it = std::upper_bound(negs.begin(), negs.end(),
                                                     sim_pos - margin);
                    per_anchor[ai][l].satisfied +=
                        static_cast<double>(it - negs.begin());
                    per_anchor[ai][l].total += static_cast<double>(negs.size());
                }
            }
        });
        for (const auto& anchor_counts : per_anchor)
            for (int l = 0; l < scale_count; ++l) {
                counts[l].satisfied += anchor_counts[l].satisfied;
                counts[l].total += anchor_counts[l].total;
            }
    };

    process_anchors(drone, satellite);
    process_anchors(satellite, drone);

    std::vector<double> rates(scale_count, 1.0);
    for (int l = 0; l < scale_count; ++l)
        if (counts[l].total > 0.0)
            rates[l] = counts[l].satisfied / counts[l].total;
    return rates;
}

}  // namespace hiergeo
