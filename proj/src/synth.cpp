#include "hiergeo/synth.hpp"

#include <cmath>
#include <vector>

#include "hiergeo/errors.hpp"
#include "hiergeo/rng.hpp"

namespace hiergeo {

namespace {

constexpr double kMinSpacingMeters = 10.0;
constexpr int kPlacementAttempts = 10000;
constexpr int kFourierFeatures = 24;

// Smooth stationary random field on the plane via random Fourier features;
// component covariance approximates exp(-r^2 / (2 len^2)).
struct ContextField {
    int dim;
    double inv_length;
    std::vector<double> freq_x, freq_y, phase, amp;  // dim x features

    ContextField(int dimension, double length_scale, Rng rng)
        : dim(dimension), inv_length(1.0 / length_scale) {
        const std::size_t total =
            static_cast<std::size_t>(dim) * kFourierFeatures;
        freq_x.resize(total);
        freq_y.resize(total);
        phase.resize(total);
        amp.resize(total);
        for (std::size_t i = 0; i < total; ++i) {
            freq_x[i] = rng.normal() * inv_length;
            freq_y[i] = rng.normal() * inv_length;
            phase[i] = rng.uniform(0.0, 2.0 * 3.141592653589793238462643);
            amp[i] = rng.normal();
        }
    }

    std::vector<double> sample(double x, double y) const {
        std::vector<double> out(dim);
        const double scale = std::sqrt(2.0 / kFourierFeatures);
        for (int d = 0; d < dim; ++d) {
            const std::size_t base =
                static_cast<std::size_t>(d) * kFourierFeatures;
            double acc = 0.0;
            for (int m = 0; m < kFourierFeatures; ++m) {
                const std::size_t i = base + m;
                acc += amp[i] *
                       std::cos(freq_x[i] * x + freq_y[i] * y + phase[i]);
            }
            out[d] = scale * acc;
        }
        return out;
    }
};

std::vector<Coord> place_buildings(int count, double side, Rng& rng) {
    std::vector<Coord> placed;
    placed.reserve(count);
    for (int b = 0; b < count; ++b) {
        bool ok = false;
        for (int attempt = 0; attempt < kPlacementAttempts && !ok; ++attempt) {
            Coord c{rng.uniform(0.0, side), rng.uniform(0.0, side)};
            ok = true;
            for (const auto& other : placed) {
                if (std::hypot(c.a - other.a, c.b - other.b) <
                    kMinSpacingMeters) {
                    ok = false;
                    break;
                }
            }
            if (ok) placed.push_back(c);
        }
        if (!ok)
            throw ConfigError(
                "generate_campus: area too small to place buildings with "
                "10 m spacing");
    }
    return placed;
}

}  // namespace

void SynthConfig::validate() const {
    if (n_buildings_train < 1 || n_buildings_test < 1)
        throw ConfigError("building counts must be >= 1");
    if (!(area_side > 0.0)) throw ConfigError("area_side must be positive");
    if (drone_images_per_building < 1 || satellite_images_per_building < 1)
        throw ConfigError("images per building must be >= 1");
    if (raw_dim < 1) throw ConfigError("raw_dim must be >= 1");
    if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
    if (!(context_length_scale > 0.0))
        throw ConfigError("context_length_scale must be positive");
    if (identity_strength < 0.0 || context_strength < 0.0)
        throw ConfigError("strengths must be >= 0");
}

SynthOutput generate_campus(const SynthConfig& config) {
    config.validate();
    const int total = config.n_buildings_train + config.n_buildings_test;
    Rng root(config.seed);
    Rng place_rng = root.fork(1);
    Rng identity_rng = root.fork(2);
    Rng field_rng = root.fork(3);
    Rng transform_rng = root.fork(4);
    Rng noise_rng = root.fork(5);

    SynthOutput out;
    out.registry.system = CoordSystem::planar;
    const auto coords = place_buildings(total, config.area_side, place_rng);
    for (int b = 0; b < total; ++b) {
        BuildingRecord rec;
        rec.building_id = b + 1;
        rec.coord = coords[b];
        rec.split = b < config.n_buildings_train ? Split::train : Split::test;
        out.registry.buildings.push_back(rec);
    }

    const int dim = config.raw_dim;
    ContextField field(dim, config.context_length_scale, field_rng);
    std::vector<std::vector<double>> latents(total);
    for (int b = 0; b < total; ++b) {
        std::vector<double> latent = field.sample(coords[b].a, coords[b].b);
        for (double& v : latent) v *= config.context_strength;
        for (int d = 0; d < dim; ++d)
            latent[d] += config.identity_strength * identity_rng.normal();
        latents[b] = std::move(latent);
    }

    // One fixed linear transform per view, entries N(0, 1/dim).
    const double transform_sigma = 1.0 / std::sqrt(static_cast<double>(dim));
    std::vector<std::vector<double>> view_transform(2);
    for (auto& t : view_transform) {
        t.resize(static_cast<std::size_t>(dim) * dim);
        for (auto& v : t) v = transform_rng.normal() * transform_sigma;
    }

    auto apply_transform = [&](int view, const std::vector<double>& latent) {
        std::vector<double> mapped(dim, 0.0);
        const auto& t = view_transform[view];
        for (int r = 0; r < dim; ++r) {
            double acc = 0.0;
            const std::size_t base = static_cast<std::size_t>(r) * dim;
            for (int c = 0; c < dim; ++c) acc += t[base + c] * latent[c];
            mapped[r] = acc;
        }
        return mapped;
    };

    out.drone_raw.dimension = static_cast<std::uint32_t>(dim);
    out.satellite_raw.dimension = static_cast<std::uint32_t>(dim);
    std::int64_t next_image_id = 1;
    for (int b = 0; b < total; ++b) {
        for (int view = 0; view < 2; ++view) {
            const int count = view == 0 ? config.drone_images_per_building
                                        : config.satellite_images_per_building;
            const auto mapped = apply_transform(view, latents[b]);
            EmbeddingSet& target =
                view == 0 ? out.drone_raw : out.satellite_raw;
            for (int img = 0; img < count; ++img) {
                EmbeddingRecord rec;
                rec.image_id = next_image_id++;
                rec.building_id = b + 1;
                rec.view = view == 0 ? View::drone : View::satellite;
                rec.vector.resize(dim);
                for (int d = 0; d < dim; ++d)
                    rec.vector[d] = static_cast<float>(
                        mapped[d] + config.noise_sigma * noise_rng.normal());
                target.records.push_back(std::move(rec));
            }
        }
    }
    out.drone_raw.validate();
    out.satellite_raw.validate();
    return out;
}

}  // namespace hiergeo
