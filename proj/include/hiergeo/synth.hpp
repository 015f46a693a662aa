#pragma once

#include <cstdint>

#include "hiergeo/embedding.hpp"
#include "hiergeo/geo.hpp"

namespace hiergeo {

struct SynthConfig {
    int n_buildings_train = 60;
    int n_buildings_test = 40;
    double area_side = 2000.0;  // meters, square campus
    int drone_images_per_building = 8;
    int satellite_images_per_building = 1;
    int raw_dim = 128;
    double identity_strength = 1.0;
    double context_strength = 0.6;
    double context_length_scale = 300.0;  // meters
    double noise_sigma = 0.25;
    std::uint64_t seed = 1;

    void validate() const;
};

struct SynthOutput {
    CampusRegistry registry;        // planar coordinates, train + test split
    EmbeddingSet drone_raw;         // unnormalized raw features
    EmbeddingSet satellite_raw;
};

// Buildings placed uniformly at random with 10 m minimum spacing. Each
// building carries an identity vector plus a smooth spatial context field
// sampled at its location, so latent similarity decays with distance; the
// two views see fixed random linear transforms of that latent plus noise.
SynthOutput generate_campus(const SynthConfig& config);

}  // namespace hiergeo
