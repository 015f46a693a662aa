#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hiergeo/losses.hpp"
#include "hiergeo/metrics.hpp"
#include "hiergeo/rerank.hpp"
#include "hiergeo/synth.hpp"
#include "hiergeo/trainer.hpp"

namespace hiergeo {

// Minimal TOML-style config: [section] headers, key = value lines with
// numbers, booleans, quoted strings and flat numeric arrays, # comments.
struct ConfigValue {
    enum class Kind { number, boolean, text, array } kind = Kind::number;
    double number = 0.0;
    bool boolean = false;
    std::string text;
    std::vector<double> array;
};

std::map<std::string, ConfigValue> parse_config_text(const std::string& text);

struct PipelineConfig {
    std::uint64_t seed = 1;
    ScaleConfig geo;
    SynthConfig synth;
    TrainerConfig trainer;
    LossConfig loss;
    RerankConfig rerank;
    std::vector<int> rerank_schedule;  // empty: derive from train statistics
    std::vector<double> eval_gains;    // empty: (L - l) / L defaults
    std::vector<int> eval_ks{1, 5, 10};
    std::string out_dir = "runs/default";

    static PipelineConfig from_file(const std::string& path);

    // Seeds for the generator and trainer derive from the master seed.
    void propagate_seed();
    MetricConfig metric_config() const;
    void validate() const;

    // Deterministic key=value listing of every resolved field; the config
    // hash in manifests is computed over this text.
    std::string canonical() const;
};

std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64_file(const std::string& path);
std::string hash_hex(std::uint64_t h);

}  // namespace hiergeo
