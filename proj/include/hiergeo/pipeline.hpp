#pragma once

#include <string>
#include <vector>

#include "hiergeo/config.hpp"

namespace hiergeo {

enum class RerankMode { none, standard, msrerank };

RerankMode parse_rerank_mode(const std::string& name);

// Command entry points shared by the CLI. Each writes its artifacts plus a
// manifest (manifest_<command>.json) listing every produced file with a
// content hash; the manifest is written last so failures leave none behind.
void cmd_gen(const PipelineConfig& config);
void cmd_train(const PipelineConfig& config);
void cmd_eval(const PipelineConfig& config, RerankMode mode);
void cmd_ablate(const PipelineConfig& config, const std::string& sweep);

// Re-ranks an externally supplied square distance matrix (HGEO1D binary or
// dense CSV with --queries); writes per-query re-ranked distances as CSV.
void cmd_rerank_file(const PipelineConfig& config, const std::string& matrix_path,
                     std::size_t csv_queries, const std::string& out_path);

// Rank-shift diagnostic. With two per-query distance CSV files, profiles
// their rankings; otherwise pools the trained split and profiles standard
// re-ranking at the configured k.
void cmd_shift_profile(const PipelineConfig& config, const std::string& before,
                       const std::string& after);

}  // namespace hiergeo
