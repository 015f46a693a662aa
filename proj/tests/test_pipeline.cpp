#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "hiergeo/config.hpp"
#include "hiergeo/errors.hpp"
#include "hiergeo/pipeline.hpp"

using namespace hiergeo;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) {
        path = fs::temp_directory_path() / name;
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

std::string write_config(const fs::path& dir, const std::string& body) {
    const auto path = dir / "config.toml";
    std::ofstream out(path);
    out << body;
    return path.string();
}

// tiny campus so pipeline tests stay fast
const char* kTinyConfig = R"(
seed = 3

[synth]
n_buildings_train = 12
n_buildings_test = 6
area_side = 800.0
drone_images_per_building = 3
satellite_images_per_building = 1
raw_dim = 24

[trainer]
embed_dim = 12
batch_buildings = 6
steps_per_epoch = 6
epochs = 3

[rerank]
k = 5
k_floor = 5
)";

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in);
    return nlohmann::json::parse(in);
}

}  // namespace

TEST_CASE("config text parsing") {
    const auto values = parse_config_text(R"(
# comment
seed = 7
[geo]
thresholds = [0.0, 100.0, 250.0]
[io]
out_dir = "runs/x"   # trailing comment
[loss]
third_term = true
)");
    CHECK(values.at("seed").number == 7.0);
    CHECK(values.at("geo.thresholds").array ==
          std::vector<double>{0.0, 100.0, 250.0});
    CHECK(values.at("io.out_dir").text == "runs/x");
    CHECK(values.at("loss.third_term").boolean);

    CHECK_THROWS_AS(parse_config_text("novalue"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("x = [1, 2"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("a = 1\na = 2"), ConfigError);
}

TEST_CASE("pipeline config load and validation") {
    TempDir dir("hiergeo_cfg_test");

    SUBCASE("defaults fill unspecified fields") {
        const auto path = write_config(dir.path, kTinyConfig);
        const PipelineConfig config = PipelineConfig::from_file(path);
        CHECK(config.seed == 3);
        CHECK(config.synth.n_buildings_train == 12);
        CHECK(config.trainer.epochs == 3);
        CHECK(config.loss.tau == 32.0);  // untouched default
        CHECK(config.geo.thresholds == std::vector<double>{0.0, 200.0, 500.0});
        CHECK(config.rerank.k == 5);
    }

    SUBCASE("unknown keys rejected") {
        const auto path =
            write_config(dir.path, "[synth]\nn_buildings = 10\n");
        CHECK_THROWS_AS(PipelineConfig::from_file(path), ConfigError);
    }

    SUBCASE("invalid values rejected") {
        const auto path = write_config(dir.path, "[dycl]\ntau = -1\n");
        CHECK_THROWS_AS(PipelineConfig::from_file(path), ConfigError);
    }

    SUBCASE("canonical text is stable and seed-sensitive") {
        const auto path = write_config(dir.path, kTinyConfig);
        PipelineConfig a = PipelineConfig::from_file(path);
        PipelineConfig b = PipelineConfig::from_file(path);
        CHECK(a.canonical() == b.canonical());
        b.seed = 4;
        b.propagate_seed();
        CHECK(a.canonical() != b.canonical());
    }
}

TEST_CASE("gen/train/eval pipeline") {
    TempDir dir("hiergeo_pipeline_test");
    const auto cfg_path = write_config(dir.path, kTinyConfig);
    PipelineConfig config = PipelineConfig::from_file(cfg_path);
    config.out_dir = (dir.path / "run").string();

    SUBCASE("train before gen fails with missing inputs") {
        CHECK_THROWS_AS(cmd_train(config), InputError);
    }

    SUBCASE("full pipeline produces reports and manifests") {
        cmd_gen(config);
        for (const char* name :
             {"registry.jsonl", "raw_drone.bin", "raw_satellite.bin",
              "manifest_gen.json"})
            CHECK(fs::exists(fs::path(config.out_dir) / name));

        const auto manifest = read_json(config.out_dir + "/manifest_gen.json");
        CHECK(manifest.at("artifacts").size() == 3);

        cmd_train(config);
        CHECK(fs::exists(fs::path(config.out_dir) / "encoder.bin"));
        CHECK(fs::exists(fs::path(config.out_dir) / "train_log.csv"));

        cmd_eval(config, RerankMode::none);
        const auto report = read_json(config.out_dir +
                                      "/report_satellite_to_drone.json");
        CHECK(report.at("map_small").get<double>() >= 0.0);
        CHECK(report.at("map_small").get<double>() <= 1.0);
        CHECK(report.contains("hap"));
        CHECK(report.contains("excluded_queries"));

        SUBCASE("regenerating with the same seed reproduces hashes") {
            const auto before =
                read_json(config.out_dir + "/manifest_gen.json");
            cmd_gen(config);
            const auto after = read_json(config.out_dir + "/manifest_gen.json");
            CHECK(before.at("artifacts") == after.at("artifacts"));
            CHECK(before.at("config_hash") == after.at("config_hash"));
        }

        SUBCASE("standard rerank in eval matches a direct module call") {
            cmd_eval(config, RerankMode::standard);
            const auto reranked = read_json(
                config.out_dir + "/report_satellite_to_drone.json");

            // direct route through the library
            const auto queries = load_embeddings(config.out_dir +
                                                 "/emb_test_satellite.bin");
            const auto gallery =
                load_embeddings(config.out_dir + "/emb_test_drone.bin");
            const auto registry =
                load_registry_jsonl(config.out_dir + "/registry.jsonl");
            const Matrix sims = similarity_matrix(queries, gallery);
            const Matrix qdist = similarity_to_distance(sims);
            const Matrix gdist =
                similarity_to_distance(similarity_matrix(gallery, gallery));
            const std::size_t ng = gallery.records.size();
            Matrix out(queries.records.size(), ng);
            for (std::size_t qi = 0; qi < queries.records.size(); ++qi) {
                Matrix aug(ng + 1, ng + 1, 0.0);
                for (std::size_t j = 0; j < ng; ++j) {
                    const double d = std::max(0.0, qdist.at(qi, j));
                    aug.at(0, j + 1) = d;
                    aug.at(j + 1, 0) = d;
                }
                for (std::size_t i = 0; i < ng; ++i)
                    for (std::size_t j = 0; j < ng; ++j)
                        aug.at(i + 1, j + 1) =
                            i == j ? 0.0 : std::max(0.0, gdist.at(i, j));
                const auto d = k_reciprocal_rerank(aug, config.rerank);
                std::copy(d.begin(), d.end(), out.row(qi));
            }
            const RelevanceTable relevance = build_relevance_table(
                queries, gallery, registry, config.geo);
            const MetricReport direct = evaluate(
                queries, gallery, out, false, relevance, config.metric_config());
            CHECK(reranked.at("hap").get<double>() ==
                  doctest::Approx(direct.hap).epsilon(1e-12));
            CHECK(reranked.at("map_overall").get<double>() ==
                  doctest::Approx(direct.map_overall).epsilon(1e-12));

            // baseline report and summary with the delta ride along
            CHECK(fs::exists(fs::path(config.out_dir) /
                             "report_satellite_to_drone_none.json"));
            const auto summary = read_json(config.out_dir + "/summary.json");
            CHECK(summary.at("satellite_to_drone").contains("hap_delta"));
        }
    }
}

TEST_CASE("unwritable output directory fails without a manifest") {
    PipelineConfig config;
    config.propagate_seed();
    config.synth.n_buildings_train = 4;
    config.synth.n_buildings_test = 2;
    config.synth.area_side = 200.0;
    config.out_dir = "/proc/hiergeo_forbidden";
    CHECK_THROWS_AS(cmd_gen(config), IoError);
    CHECK_FALSE(fs::exists("/proc/hiergeo_forbidden/manifest_gen.json"));
}

TEST_CASE("ablate rejects unknown sweeps") {
    TempDir dir("hiergeo_ablate_test");
    PipelineConfig config;
    config.propagate_seed();
    config.out_dir = (dir.path / "run").string();
    CHECK_THROWS_AS(cmd_ablate(config, "nonsense"), ConfigError);
}
