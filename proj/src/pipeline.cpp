#include "hiergeo/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hiergeo/errors.hpp"
#include "hiergeo/parallel.hpp"

namespace fs = std::filesystem;

namespace hiergeo {

namespace {

constexpr const char* kVersion = "0.1.0";

struct ManifestWriter {
    std::string command;
    std::string out_dir;
    std::string config_hash;
    nlohmann::ordered_json stages = nlohmann::ordered_json::array();
    nlohmann::ordered_json artifacts = nlohmann::ordered_json::array();
    std::chrono::steady_clock::time_point stage_start;
    std::string stage_name;

    void begin_stage(const std::string& name) {
        stage_name = name;
        stage_start = std::chrono::steady_clock::now();
    }
    void end_stage() {
        const auto elapsed = std::chrono::duration<double, std::milli>(
                                 std::chrono::steady_clock::now() - stage_start)
                                 .count();
        stages.push_back({{"name", stage_name}, {"wall_ms", elapsed}});
    }
    void add_artifact(const std::string& relative_path) {
        const std::string full = out_dir + "/" + relative_path;
        artifacts.push_back(
            {{"path", relative_path},
             {"fnv1a64", hash_hex(fnv1a64_file(full))}});
    }
    void write() {
        nlohmann::ordered_json j;
        j["command"] = command;
        j["version"] = kVersion;
        j["config_hash"] = config_hash;
        j["stages"] = stages;
        j["artifacts"] = artifacts;
        const std::string path = out_dir + "/manifest_" + command + ".json";
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw IoError("cannot write manifest: " + path);
        out << j.dump(2) << '\n';
        if (!out) throw IoError("write failed: " + path);
    }
};

ManifestWriter make_manifest(const PipelineConfig& config,
                             const std::string& command) {
    ManifestWriter m;
    m.command = command;
    m.out_dir = config.out_dir;
    const std::string canon = config.canonical();
    m.config_hash = hash_hex(fnv1a64(canon.data(), canon.size()));
    return m;
}

void ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
        throw IoError("cannot create output directory: " + dir);
    const std::string probe = dir + "/.write_probe";
    {
        std::ofstream p(probe, std::ios::trunc);
        if (!p) throw IoError("output directory not writable: " + dir);
    }
    fs::remove(probe, ec);
}

std::string path_in(const PipelineConfig& config, const std::string& name) {
    return config.out_dir + "/" + name;
}

void require_file(const std::string& path, const std::string& producer) {
    if (!fs::exists(path))
        throw InputError("missing input " + path + " (run '" + producer +
                         "' first)");
}

struct TrainedArtifacts {
    CampusRegistry registry;
    EmbeddingSet train_drone, train_satellite, test_drone, test_satellite;
};

TrainedArtifacts load_trained(const PipelineConfig& config) {
    for (const char* name :
         {"registry.jsonl", "emb_train_drone.bin", "emb_train_satellite.bin",
          "emb_test_drone.bin", "emb_test_satellite.bin"})
        require_file(path_in(config, name),
                     std::string(name) == "registry.jsonl" ? "gen" : "train");
    TrainedArtifacts art;
    art.registry = load_registry_jsonl(path_in(config, "registry.jsonl"));
    art.train_drone = load_embeddings(path_in(config, "emb_train_drone.bin"));
    art.train_satellite =
        load_embeddings(path_in(config, "emb_train_satellite.bin"));
    art.test_drone = load_embeddings(path_in(config, "emb_test_drone.bin"));
    art.test_satellite =
        load_embeddings(path_in(config, "emb_test_satellite.bin"));
    return art;
}

SynthOutput load_generated(const PipelineConfig& config) {
    for (const char* name :
         {"registry.jsonl", "raw_drone.bin", "raw_satellite.bin"})
        require_file(path_in(config, name), "gen");
    SynthOutput out;
    out.registry = load_registry_jsonl(path_in(config, "registry.jsonl"));
    out.drone_raw = load_embeddings(path_in(config, "raw_drone.bin"));
    out.satellite_raw = load_embeddings(path_in(config, "raw_satellite.bin"));
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("write failed: " + path);
}

std::string training_log_csv(const std::vector<EpochLog>& log) {
    std::ostringstream out;
    out.precision(17);
    out << "epoch,mean_total,mean_dycl,mean_clust\n";
    for (const auto& e : log)
        out << e.epoch << ',' << e.mean_total << ',' << e.mean_dycl << ','
            << e.mean_clust << '\n';
    return out.str();
}

// Gallery-to-gallery plus query row composed into the per-query augmented
// matrix: index 0 is the query, entries are cosine distances clamped at 0.
Matrix augmented_matrix(const Matrix& query_gallery_dist,
                        const Matrix& gallery_gallery_dist, std::size_t query) {
    const std::size_t n = gallery_gallery_dist.rows;
    Matrix aug(n + 1, n + 1, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        const double d = std::max(0.0, query_gallery_dist.at(query, j));
        aug.at(0, j + 1) = d;
        aug.at(j + 1, 0) = d;
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            aug.at(i + 1, j + 1) =
                i == j ? 0.0 : std::max(0.0, gallery_gallery_dist.at(i, j));
    return aug;
}

KSchedule schedule_for(const PipelineConfig& config,
                       const TrainedArtifacts& art) {
    if (!config.rerank_schedule.empty()) {
        KSchedule s{config.rerank_schedule};
        s.validate();
        return s;
    }
    const CampusRegistry train_registry = art.registry.subset(Split::train);
    std::vector<ScalePartition> partitions;
    partitions.reserve(train_registry.buildings.size());
    for (const auto& b : train_registry.buildings)
        partitions.push_back(
            build_scale_partition(b.building_id, train_registry, config.geo));
    std::unordered_map<std::int64_t, std::int64_t> images_per_building;
    for (const auto* set : {&art.train_drone, &art.train_satellite})
        for (const auto& r : set->records) ++images_per_building[r.building_id];
    return compute_k_schedule(partitions, images_per_building, config.rerank,
                              config.geo.levels());
}

int clamp_k(int k, std::size_t gallery_size, std::vector<std::string>& notes) {
    const int max_k = static_cast<int>(gallery_size);  // matrix size is n + 1
    if (k <= max_k) return k;
    notes.push_back("k=" + std::to_string(k) + " clamped to " +
                    std::to_string(max_k) + " for a gallery of " +
                    std::to_string(gallery_size));
    return max_k;
}

struct TaskEval {
    std::string task;
    MetricReport base;
    MetricReport reranked;  // valid when mode != none
    bool has_rerank = false;
    std::vector<int> schedule_used;
    std::vector<std::string> notes;
};

TaskEval evaluate_task(const PipelineConfig& config, const std::string& task,
                       const EmbeddingSet& queries, const EmbeddingSet& gallery,
                       const CampusRegistry& registry, RerankMode mode,
                       const KSchedule* schedule, ManifestWriter* manifest) {
    TaskEval out;
    out.task = task;
    const RelevanceTable relevance =
        build_relevance_table(queries, gallery, registry, config.geo);
    const MetricConfig metric_config = config.metric_config();

    const Matrix sims = similarity_matrix(queries, gallery);
    out.base = evaluate(queries, gallery, sims, true, relevance, metric_config);
    if (mode == RerankMode::none) return out;

    const Matrix query_dist = similarity_to_distance(sims);
    const Matrix gallery_dist =
        similarity_to_distance(similarity_matrix(gallery, gallery));
    const std::size_t nq = queries.records.size();
    const std::size_t ng = gallery.records.size();

    RerankConfig rerank_config = config.rerank;
    rerank_config.k = clamp_k(rerank_config.k, ng, out.notes);
    KSchedule clamped;
    if (mode == RerankMode::msrerank) {
        clamped = *schedule;
        for (int& k : clamped.ks) k = clamp_k(k, ng, out.notes);
        out.schedule_used = clamped.ks;
    }

    Matrix reranked(nq, ng);
    parallel_for(nq, [&](std::size_t qi) {
        const Matrix aug = augmented_matrix(query_dist, gallery_dist, qi);
        const std::vector<double> d =
            mode == RerankMode::standard
                ? k_reciprocal_rerank(aug, rerank_config)
                : ms_rerank(aug, clamped, rerank_config);
        std::copy(d.begin(), d.end(), reranked.row(qi));
    });
    out.reranked =
        evaluate(queries, gallery, reranked, false, relevance, metric_config);
    out.has_rerank = true;

    // Rank-shift diagnostic of the re-ranking pass.
    std::vector<std::vector<std::int64_t>> before(nq), after(nq);
    for (std::size_t qi = 0; qi < nq; ++qi) {
        before[qi] = rank_by_score(gallery, query_dist.row(qi),
                                   queries.records[qi].image_id, false)
                         .gallery_order;
        after[qi] = rank_by_score(gallery, reranked.row(qi),
                                  queries.records[qi].image_id, false)
                        .gallery_order;
    }
    const std::vector<double> profile = rank_shift_profile(before, after);
    std::ostringstream csv;
    csv.precision(17);
    csv << "position,mean_abs_shift\n";
    for (std::size_t p = 0; p < profile.size(); ++p)
        csv << p + 1 << ',' << profile[p] << '\n';
    const std::string shift_name = "shift_" + task + ".csv";
    write_text(config.out_dir + "/" + shift_name, csv.str());
    if (manifest) manifest->add_artifact(shift_name);
    return out;
}

std::string mode_name(RerankMode mode) {
    switch (mode) {
        case RerankMode::none: return "none";
        case RerankMode::standard: return "standard";
        case RerankMode::msrerank: return "msrerank";
    }
    return "none";
}

}  // namespace

RerankMode parse_rerank_mode(const std::string& name) {
    if (name == "none") return RerankMode::none;
    if (name == "standard") return RerankMode::standard;
    if (name == "msrerank") return RerankMode::msrerank;
    throw ConfigError("unknown rerank mode: " + name);
}

void cmd_gen(const PipelineConfig& config) {
    config.validate();
    ensure_out_dir(config.out_dir);
    ManifestWriter manifest = make_manifest(config, "gen");

    manifest.begin_stage("generate");
    const SynthOutput out = generate_campus(config.synth);
    manifest.end_stage();

    manifest.begin_stage("write");
    save_registry_jsonl(out.registry, path_in(config, "registry.jsonl"));
    save_embeddings(out.drone_raw, path_in(config, "raw_drone.bin"));
    save_embeddings(out.satellite_raw, path_in(config, "raw_satellite.bin"));
    manifest.end_stage();

    manifest.add_artifact("registry.jsonl");
    manifest.add_artifact("raw_drone.bin");
    manifest.add_artifact("raw_satellite.bin");
    manifest.write();
}

void cmd_train(const PipelineConfig& config) {
    config.validate();
    ensure_out_dir(config.out_dir);
    ManifestWriter manifest = make_manifest(config, "train");

    manifest.begin_stage("load");
    const SynthOutput data = load_generated(config);
    manifest.end_stage();

    manifest.begin_stage("train");
    const TrainResult result =
        train(config.trainer, data, config.loss, config.geo);
    manifest.end_stage();

    manifest.begin_stage("embed");
    const EncoderState& state = result.state;
    struct SplitSpec {
        const char* name;
        Split split;
    };
    save_encoder(state, path_in(config, "encoder.bin"));
    for (const SplitSpec spec :
         {SplitSpec{"train", Split::train}, SplitSpec{"test", Split::test}}) {
        std::vector<std::int64_t> ids;
        for (const auto& b : data.registry.buildings)
            if (b.split == spec.split) ids.push_back(b.building_id);
        const EmbeddingSet drone =
            encode(state, data.drone_raw.filter_buildings(ids));
        const EmbeddingSet satellite =
            encode(state, data.satellite_raw.filter_buildings(ids));
        save_embeddings(drone, path_in(config, std::string("emb_") + spec.name +
                                                   "_drone.bin"));
        save_embeddings(satellite,
                        path_in(config, std::string("emb_") + spec.name +
                                            "_satellite.bin"));
    }
    write_text(path_in(config, "train_log.csv"), training_log_csv(result.log));
    manifest.end_stage();

    for (const char* name :
         {"encoder.bin", "emb_train_drone.bin", "emb_train_satellite.bin",
          "emb_test_drone.bin", "emb_test_satellite.bin", "train_log.csv"})
        manifest.add_artifact(name);
    manifest.write();
}

void cmd_eval(const PipelineConfig& config, RerankMode mode) {
    config.validate();
    ensure_out_dir(config.out_dir);
    ManifestWriter manifest = make_manifest(config, "eval");

    manifest.begin_stage("load");
    const TrainedArtifacts art = load_trained(config);
    manifest.end_stage();

    KSchedule schedule;
    if (mode == RerankMode::msrerank) {
        manifest.begin_stage("schedule");
        schedule = schedule_for(config, art);
        manifest.end_stage();
    }

    nlohmann::ordered_json summary;
    summary["rerank_mode"] = mode_name(mode);

    struct TaskSpec {
        const char* name;
        const EmbeddingSet* queries;
        const EmbeddingSet* gallery;
    };
    const TaskSpec tasks[] = {
        {"satellite_to_drone", &art.test_satellite, &art.test_drone},
        {"drone_to_satellite", &art.test_drone, &art.test_satellite},
    };
    for (const auto& task : tasks) {
        manifest.begin_stage(task.name);
        const TaskEval eval_result = evaluate_task(
            config, task.name, *task.queries, *task.gallery, art.registry,
            mode, mode == RerankMode::msrerank ? &schedule : nullptr,
            &manifest);
        manifest.end_stage();

        const std::string base_name = std::string("report_") + task.name;
        const MetricReport& primary =
            eval_result.has_rerank ? eval_result.reranked : eval_result.base;
        write_text(path_in(config, base_name + ".csv"), primary.to_csv());
        write_text(path_in(config, base_name + ".json"),
                   primary.to_json() + "\n");
        manifest.add_artifact(base_name + ".csv");
        manifest.add_artifact(base_name + ".json");

        nlohmann::ordered_json task_summary;
        task_summary["hap"] = primary.hap;
        task_summary["map_overall"] = primary.map_overall;
        task_summary["r1_overall"] = primary.r1_overall;
        if (eval_result.has_rerank) {
            write_text(path_in(config, base_name + "_none.csv"),
                       eval_result.base.to_csv());
            write_text(path_in(config, base_name + "_none.json"),
                       eval_result.base.to_json() + "\n");
            manifest.add_artifact(base_name + "_none.csv");
            manifest.add_artifact(base_name + "_none.json");
            task_summary["hap_before_rerank"] = eval_result.base.hap;
            task_summary["hap_delta"] = primary.hap - eval_result.base.hap;
            if (!eval_result.schedule_used.empty())
                task_summary["schedule"] = eval_result.schedule_used;
            if (!eval_result.notes.empty())
                task_summary["notes"] = eval_result.notes;
        }
        summary[task.name] = task_summary;
    }

    write_text(path_in(config, "summary.json"), summary.dump(2) + "\n");
    manifest.add_artifact("summary.json");
    manifest.write();
}

void cmd_ablate(const PipelineConfig& config, const std::string& sweep) {
    config.validate();
    ensure_out_dir(config.out_dir);
    ManifestWriter manifest = make_manifest(config, "ablate");

    manifest.begin_stage("load");
    const SynthOutput data = load_generated(config);
    manifest.end_stage();

    const MetricConfig metric_config = config.metric_config();

    auto evaluate_model = [&](const EncoderState& state) {
        std::vector<std::int64_t> test_ids;
        for (const auto& b : data.registry.buildings)
            if (b.split == Split::test) test_ids.push_back(b.building_id);
        const EmbeddingSet drone =
            encode(state, data.drone_raw.filter_buildings(test_ids));
        const EmbeddingSet satellite =
            encode(state, data.satellite_raw.filter_buildings(test_ids));
        const RelevanceTable relevance =
            build_relevance_table(satellite, drone, data.registry, config.geo);
        const Matrix sims = similarity_matrix(satellite, drone);
        return evaluate(satellite, drone, sims, true, relevance, metric_config);
    };

    std::ostringstream csv;
    csv.precision(17);
    std::string out_name;

    if (sweep == "tau") {
        manifest.begin_stage("sweep_tau");
        out_name = "ablate_tau.csv";
        csv << "tau,map_overall,hap,ndcg\n";
        for (double tau : {16.0, 32.0, 64.0}) {
            LossConfig loss = config.loss;
            loss.tau = tau;
            const TrainResult run =
                train(config.trainer, data, loss, config.geo);
            const MetricReport report = evaluate_model(run.state);
            csv << tau << ',' << report.map_overall << ',' << report.hap << ','
                << report.ndcg << '\n';
        }
        manifest.end_stage();
    } else if (sweep == "lambda1") {
        manifest.begin_stage("sweep_lambda1");
        out_name = "ablate_lambda1.csv";
        csv << "lambda1,map_overall,hap,ndcg\n";
        for (double lambda1 : {0.05, 0.1, 0.2, 0.4, 0.8}) {
            LossConfig loss = config.loss;
            loss.lambda1 = lambda1;
            const TrainResult run =
                train(config.trainer, data, loss, config.geo);
            const MetricReport report = evaluate_model(run.state);
            csv << lambda1 << ',' << report.map_overall << ',' << report.hap
                << ',' << report.ndcg << '\n';
        }
        manifest.end_stage();
    } else if (sweep == "single_vs_multi") {
        manifest.begin_stage("sweep_single_vs_multi");
        out_name = "ablate_single_vs_multi.csv";
        csv << "model,map_small,map_middle,map_large,map_overall,r1_overall\n";
        const int scale_count = config.geo.levels();
        for (int model = 0; model <= scale_count; ++model) {
            ObjectiveSpec objective;
            ScaleConfig scales = config.geo;
            std::string name;
            if (model < scale_count) {
                objective.kind = TrainObjective::triplet_single;
                scales.thresholds.assign(config.geo.thresholds.begin(),
                                         config.geo.thresholds.begin() + model +
                                             1);
                name = "single_scale" + std::to_string(model);
            } else {
                objective.kind = TrainObjective::triplet_multi;
                name = "multi_scale";
            }
            const TrainResult run =
                train(config.trainer, data, config.loss, scales, objective);
            const MetricReport report = evaluate_model(run.state);
            csv << name;
            for (double v : report.map_per_scale) csv << ',' << v;
            csv << ',' << report.map_overall << ',' << report.r1_overall
                << '\n';
        }
        manifest.end_stage();
    } else {
        throw ConfigError("unknown sweep: " + sweep +
                          " (expected tau|lambda1|single_vs_multi)");
    }

    write_text(path_in(config, out_name), csv.str());
    manifest.add_artifact(out_name);
    manifest.write();
}

namespace {

Matrix load_csv_matrix(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open CSV matrix: " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::istringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ','))
            row.push_back(std::stod(cell));
        if (!rows.empty() && row.size() != rows.front().size())
            throw InputError(path + ": ragged CSV rows");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw InputError(path + ": empty CSV matrix");
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) m.at(i, j) = rows[i][j];
    return m;
}

}  // namespace

void cmd_rerank_file(const PipelineConfig& config,
                     const std::string& matrix_path, std::size_t csv_queries,
                     const std::string& out_path) {
    config.validate();
    SquareDistanceFile file;
    if (matrix_path.size() > 4 &&
        matrix_path.substr(matrix_path.size() - 4) == ".csv") {
        file.matrix = load_csv_matrix(matrix_path);
        file.n_query = csv_queries;
    } else {
        file = load_distance_matrix(matrix_path);
    }
    if (file.matrix.rows != file.matrix.cols)
        throw InputError("rerank input must be a square matrix over "
                         "queries + gallery");
    if (file.n_query == 0 || file.n_query >= file.matrix.rows)
        throw InputError("query count must be in [1, matrix size)");

    const std::size_t nq = file.n_query;
    const std::size_t ng = file.matrix.rows - nq;
    KSchedule schedule;
    if (!config.rerank_schedule.empty())
        schedule.ks = config.rerank_schedule;
    else
        schedule.ks = {config.rerank.k};
    schedule.validate();

    // Slice out {query} + gallery per query; gallery block is shared.
    Matrix reranked(nq, ng);
    parallel_for(nq, [&](std::size_t qi) {
        Matrix aug(ng + 1, ng + 1, 0.0);
        for (std::size_t j = 0; j < ng; ++j) {
            const double d = std::max(0.0, file.matrix.at(qi, nq + j));
            aug.at(0, j + 1) = d;
            aug.at(j + 1, 0) = d;
        }
        for (std::size_t i = 0; i < ng; ++i)
            for (std::size_t j = 0; j < ng; ++j)
                aug.at(i + 1, j + 1) =
                    i == j ? 0.0
                           : std::max(0.0, file.matrix.at(nq + i, nq + j));
        const std::vector<double> d =
            schedule.ks.size() == 1 && config.rerank_schedule.empty()
                ? k_reciprocal_rerank(aug, config.rerank)
                : ms_rerank(aug, schedule, config.rerank);
        std::copy(d.begin(), d.end(), reranked.row(qi));
    });

    std::ostringstream csv;
    csv.precision(17);
    for (std::size_t qi = 0; qi < nq; ++qi) {
        for (std::size_t j = 0; j < ng; ++j)
            csv << (j ? "," : "") << reranked.at(qi, j);
        csv << '\n';
    }
    write_text(out_path, csv.str());
}

void cmd_shift_profile(const PipelineConfig& config, const std::string& before,
                       const std::string& after) {
    config.validate();
    ensure_out_dir(config.out_dir);
    ManifestWriter manifest = make_manifest(config, "shift_profile");

    std::vector<std::vector<std::int64_t>> rank_before, rank_after;
    std::string out_name;

    if (!before.empty() || !after.empty()) {
        if (before.empty() || after.empty())
            throw ConfigError("shift-profile needs both --before and --after");
        manifest.begin_stage("load");
        const Matrix mb = load_csv_matrix(before);
        const Matrix ma = load_csv_matrix(after);
        if (mb.rows != ma.rows || mb.cols != ma.cols)
            throw InputError("before/after matrices must share a shape");
        manifest.end_stage();
        manifest.begin_stage("profile");
        auto rank_rows = [](const Matrix& m) {
            std::vector<std::vector<std::int64_t>> out(m.rows);
            std::vector<std::size_t> order(m.cols);
            for (std::size_t q = 0; q < m.rows; ++q) {
                const double* row = m.row(q);
                for (std::size_t j = 0; j < m.cols; ++j) order[j] = j;
                std::sort(order.begin(), order.end(),
                          [&](std::size_t a, std::size_t b) {
                              if (row[a] != row[b]) return row[a] < row[b];
                              return a < b;
                          });
                out[q].assign(order.begin(), order.end());
            }
            return out;
        };
        rank_before = rank_rows(mb);
        rank_after = rank_rows(ma);
        out_name = "shift_profile.csv";
        manifest.end_stage();
    } else {
        // Every trained split image queries the remaining pool, original
        // ranking vs standard re-ranking at the configured k.
        manifest.begin_stage("load");
        const TrainedArtifacts art = load_trained(config);
        EmbeddingSet pool = art.train_drone;
        pool.records.insert(pool.records.end(),
                            art.train_satellite.records.begin(),
                            art.train_satellite.records.end());
        pool.validate();
        manifest.end_stage();

        manifest.begin_stage("profile");
        const Matrix dist =
            similarity_to_distance(similarity_matrix(pool, pool));
        const std::size_t n = pool.records.size();
        if (n < 3) throw InputError("shift-profile: pool too small");
        std::vector<std::string> notes;
        RerankConfig rerank_config = config.rerank;
        rerank_config.k = clamp_k(rerank_config.k, n - 1, notes);

        rank_before.resize(n);
        rank_after.resize(n);
        parallel_for(n, [&](std::size_t qi) {
            // query moved to slot 0; gallery is the pool minus the query
            std::vector<std::size_t> gallery;
            gallery.reserve(n - 1);
            for (std::size_t j = 0; j < n; ++j)
                if (j != qi) gallery.push_back(j);
            Matrix aug(n, n, 0.0);
            for (std::size_t j = 0; j < n - 1; ++j) {
                const double d = std::max(0.0, dist.at(qi, gallery[j]));
                aug.at(0, j + 1) = d;
                aug.at(j + 1, 0) = d;
            }
            for (std::size_t i = 0; i < n - 1; ++i)
                for (std::size_t j = 0; j < n - 1; ++j)
                    aug.at(i + 1, j + 1) =
                        i == j ? 0.0
                               : std::max(0.0, dist.at(gallery[i], gallery[j]));
            const std::vector<double> reranked =
                k_reciprocal_rerank(aug, rerank_config);

            std::vector<std::size_t> order(n - 1);
            auto fill_ranks = [&](const double* scores,
                                  std::vector<std::int64_t>& out) {
                for (std::size_t j = 0; j < n - 1; ++j) order[j] = j;
                std::sort(order.begin(), order.end(),
                          [&](std::size_t a, std::size_t b) {
                              if (scores[a] != scores[b])
                                  return scores[a] < scores[b];
                              return pool.records[gallery[a]].image_id <
                                     pool.records[gallery[b]].image_id;
                          });
                out.resize(n - 1);
                for (std::size_t j = 0; j < n - 1; ++j)
                    out[j] = pool.records[gallery[order[j]]].image_id;
            };
            std::vector<double> original(n - 1);
            for (std::size_t j = 0; j < n - 1; ++j)
                original[j] = aug.at(0, j + 1);
            fill_ranks(original.data(), rank_before[qi]);
            fill_ranks(reranked.data(), rank_after[qi]);
        });
        out_name = "shift_train_k" + std::to_string(rerank_config.k) + ".csv";
        manifest.end_stage();
    }

    const std::vector<double> profile =
        rank_shift_profile(rank_before, rank_after);
    std::ostringstream csv;
    csv.precision(17);
    csv << "position,mean_abs_shift\n";
    for (std::size_t p = 0; p < profile.size(); ++p)
        csv << p + 1 << ',' << profile[p] << '\n';
    write_text(path_in(config, out_name), csv.str());
    manifest.add_artifact(out_name);
    manifest.write();
}

}  // namespace hiergeo
