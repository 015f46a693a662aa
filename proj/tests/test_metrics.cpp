#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "hiergeo/errors.hpp"
#include "hiergeo/metrics.hpp"
#include "hiergeo/rng.hpp"
#include "oracles.hpp"

using namespace hiergeo;

namespace {

const std::vector<double> kGains{1.0, 2.0 / 3.0, 1.0 / 3.0, 0.0};

std::vector<int> random_levels(int n, Rng& rng, int levels = 4) {
    std::vector<int> out(n);
    for (auto& v : out) v = static_cast<int>(rng.uniform_int(levels));
    return out;
}

}  // namespace

TEST_CASE("recall at k") {
    CHECK(recall_at_k({0, 3, 3}, 0, 1) == 1);
    CHECK(recall_at_k({3, 3, 3}, 0, 3) == 0);
    CHECK(recall_at_k({3, 1, 3}, 1, 1) == 0);
    CHECK(recall_at_k({3, 1, 3}, 1, 2) == 1);
    CHECK(recall_at_k({3, 1}, 1, 99) == 1);  // K clamped to the gallery

    Rng rng(211);
    for (int t = 0; t < 200; ++t) {
        const auto levels = random_levels(12, rng);
        const int scale = static_cast<int>(rng.uniform_int(3));
        const int k = 1 + static_cast<int>(rng.uniform_int(14));
        CHECK(recall_at_k(levels, scale, k) ==
              oracle::recall_scan(levels, scale, k));
    }
}

TEST_CASE("average precision") {
    CHECK(average_precision({0, 3, 0, 3, 3}, 0) ==
          doctest::Approx(5.0 / 6.0).epsilon(1e-12));
    CHECK(average_precision({0, 0, 0}, 0) == 1.0);
    CHECK(average_precision({3, 3, 3, 3, 0}, 0) ==
          doctest::Approx(0.2).epsilon(1e-12));
    CHECK_THROWS_AS(average_precision({3, 3}, 0), InputError);

    Rng rng(223);
    for (int t = 0; t < 300; ++t) {
        const auto levels = random_levels(2 + rng.uniform_int(20), rng);
        const int scale = static_cast<int>(rng.uniform_int(3));
        bool any = false;
        for (int lev : levels)
            if (lev <= scale) any = true;
        if (!any) continue;
        CHECK(average_precision(levels, scale) ==
              doctest::Approx(oracle::average_precision_scan(levels, scale))
                  .epsilon(1e-12));
    }
}

TEST_CASE("hierarchical average precision") {
    SUBCASE("gain-sorted lists score exactly 1") {
        CHECK(h_ap({0, 0, 1, 2, 3, 3}, kGains) == doctest::Approx(1.0));
        CHECK(h_ap({0, 1, 1, 2}, kGains) == doctest::Approx(1.0));
        CHECK(h_ap({2, 2, 3}, kGains) == doctest::Approx(1.0));
    }

    SUBCASE("single nonzero gain level equals plain AP") {
        Rng rng(227);
        const std::vector<double> single_gain{1.0, 0.0, 0.0, 0.0};
        for (int t = 0; t < 100; ++t) {
            const auto levels = random_levels(10, rng);
            bool any = false;
            for (int lev : levels)
                if (lev == 0) any = true;
            if (!any) continue;
            CHECK(h_ap(levels, single_gain) ==
                  doctest::Approx(average_precision(levels, 0)).epsilon(1e-12));
        }
    }

    SUBCASE("scrambled six-item list matches the double loop oracle") {
        const std::vector<int> levels{2, 0, 3, 1, 0, 3};
        CHECK(h_ap(levels, kGains) ==
              doctest::Approx(oracle::h_ap_double_loop(levels, kGains))
                  .epsilon(1e-12));
    }

    SUBCASE("random lists match the oracle") {
        Rng rng(229);
        for (int t = 0; t < 300; ++t) {
            const auto levels = random_levels(2 + rng.uniform_int(28), rng);
            bool any = false;
            for (int lev : levels)
                if (kGains[lev] > 0.0) any = true;
            if (!any) continue;
            const double got = h_ap(levels, kGains);
            CHECK(got ==
                  doctest::Approx(oracle::h_ap_double_loop(levels, kGains))
                      .epsilon(1e-12));
            CHECK(got <= 1.0 + 1e-12);
        }
    }
}

TEST_CASE("average set intersection") {
    SUBCASE("identity") {
        CHECK(asi({0, 0, 1, 1, 2, 3}, kGains) == doctest::Approx(1.0));
    }
    SUBCASE("two-level reversal") {
        CHECK(asi({1, 0}, kGains) == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("within-level permutations stay perfect") {
        CHECK(asi({0, 0, 1, 1, 3}, kGains) == doctest::Approx(1.0));
    }
    SUBCASE("random lists match the recounting oracle") {
        Rng rng(233);
        for (int t = 0; t < 300; ++t) {
            const auto levels = random_levels(2 + rng.uniform_int(25), rng);
            bool any = false;
            for (int lev : levels)
                if (kGains[lev] > 0.0) any = true;
            if (!any) continue;
            CHECK(asi(levels, kGains) ==
                  doctest::Approx(oracle::asi_recount(levels, kGains))
                      .epsilon(1e-12));
        }
    }
}

TEST_CASE("ndcg") {
    SUBCASE("ideal ordering") {
        CHECK(ndcg({0, 1, 2, 3}, 3) == doctest::Approx(1.0));
    }
    SUBCASE("worked example with integer gains 3/0/2") {
        // levels 0, 3, 1 give gains 7, 0, 3
        const double expect = 8.5 / 8.892789260714372;
        CHECK(ndcg({0, 3, 1}, 3) == doctest::Approx(expect).epsilon(1e-12));
    }
    SUBCASE("single relevant item in top position") {
        CHECK(ndcg({2, 3, 3}, 3) == doctest::Approx(1.0));
    }
    SUBCASE("random lists match the oracle") {
        Rng rng(239);
        for (int t = 0; t < 300; ++t) {
            const auto levels = random_levels(2 + rng.uniform_int(25), rng);
            bool any = false;
            for (int lev : levels)
                if (lev < 3) any = true;
            if (!any) continue;
            const double got = ndcg(levels, 3);
            CHECK(got == doctest::Approx(oracle::ndcg_scan(levels, 3))
                             .epsilon(1e-12));
            CHECK(got <= 1.0 + 1e-12);
        }
    }
    SUBCASE("all zero gains excluded") {
        CHECK_THROWS_AS(ndcg({3, 3}, 3), InputError);
    }
}

TEST_CASE("rank monotonicity under beneficial swaps") {
    Rng rng(241);
    int tested = 0;
    while (tested < 100) {
        auto levels = random_levels(12, rng);
        // find a less-relevant item ranked above a more-relevant one
        int hi = -1, lo = -1;
        for (int i = 0; i < 12 && hi < 0; ++i)
            for (int j = i + 1; j < 12; ++j)
                if (levels[i] > levels[j]) {
                    hi = i;
                    lo = j;
                    break;
                }
        if (hi < 0) continue;
        bool any = false;
        for (int lev : levels)
            if (kGains[lev] > 0.0) any = true;
        if (!any) continue;
        ++tested;

        auto swapped = levels;
        std::swap(swapped[hi], swapped[lo]);
        CHECK(h_ap(swapped, kGains) >= h_ap(levels, kGains) - 1e-12);
        CHECK(ndcg(swapped, 3) >= ndcg(levels, 3) - 1e-12);
        for (int scale = 0; scale < 3; ++scale) {
            bool rel = false;
            for (int lev : levels)
                if (lev <= scale) rel = true;
            if (!rel) continue;
            CHECK(average_precision(swapped, scale) >=
                  average_precision(levels, scale) - 1e-12);
        }
    }
}

namespace {

EmbeddingSet one_hot_set(const std::vector<std::int64_t>& buildings, View view,
                         int dim, std::int64_t first_id) {
    EmbeddingSet set;
    set.dimension = static_cast<std::uint32_t>(dim);
    std::int64_t id = first_id;
    for (std::int64_t b : buildings) {
        EmbeddingRecord r;
        r.image_id = id++;
        r.building_id = b;
        r.view = view;
        r.vector.assign(dim, 0.0f);
        r.vector[static_cast<std::size_t>(b) % dim] = 1.0f;
        set.records.push_back(std::move(r));
    }
    set.normalized = true;
    return set;
}

}  // namespace

TEST_CASE("evaluate end to end") {
    // two well-separated buildings, one satellite query and two drone
    // images each, embeddings identical per building
    CampusRegistry reg;
    reg.system = CoordSystem::planar;
    for (int b = 1; b <= 2; ++b) {
        BuildingRecord rec;
        rec.building_id = b;
        rec.coord = {b * 2000.0, 0.0};
        rec.split = Split::test;
        reg.buildings.push_back(rec);
    }
    const ScaleConfig scale_config;
    const auto queries = one_hot_set({1, 2}, View::satellite, 4, 1);
    const auto gallery = one_hot_set({1, 1, 2, 2}, View::drone, 4, 10);

    const RelevanceTable relevance =
        build_relevance_table(queries, gallery, reg, scale_config);
    CHECK(relevance.at(0, 0) == 0);
    CHECK(relevance.at(0, 2) == 3);

    const Matrix sims = similarity_matrix(queries, gallery);
    MetricConfig metric_config = MetricConfig::defaults(3);
    const MetricReport report =
        evaluate(queries, gallery, sims, true, relevance, metric_config);

    CHECK(report.map_per_scale[0] == doctest::Approx(1.0));
    CHECK(report.recall_per_scale[0][0] == doctest::Approx(1.0));
    CHECK(report.hap == doctest::Approx(1.0));
    CHECK(report.asi == doctest::Approx(1.0));
    CHECK(report.ndcg == doctest::Approx(1.0));
    CHECK(report.excluded_queries == 0);
    CHECK(report.map_overall ==
          doctest::Approx((report.map_per_scale[0] + report.map_per_scale[1] +
                           report.map_per_scale[2]) /
                          3.0)
              .epsilon(1e-15));

    SUBCASE("positive scaling of similarities changes nothing") {
        Matrix scaled = sims;
        for (auto& v : scaled.data) v *= 2.5;
        const MetricReport scaled_report =
            evaluate(queries, gallery, scaled, true, relevance, metric_config);
        CHECK(scaled_report.map_per_scale == report.map_per_scale);
        CHECK(scaled_report.hap == report.hap);
        CHECK(scaled_report.asi == report.asi);
        CHECK(scaled_report.ndcg == report.ndcg);
    }

    SUBCASE("distance input mirrors similarity input") {
        const MetricReport dist_report =
            evaluate(queries, gallery, similarity_to_distance(sims), false,
                     relevance, metric_config);
        CHECK(dist_report.map_per_scale == report.map_per_scale);
        CHECK(dist_report.hap == report.hap);
    }

    SUBCASE("empty query set rejected") {
        EmbeddingSet no_queries;
        no_queries.dimension = 4;
        no_queries.normalized = true;
        CHECK_THROWS_AS(evaluate(no_queries, gallery, Matrix(0, 4), true,
                                 RelevanceTable{0, 4, 3, {}}, metric_config),
                        InputError);
    }

    SUBCASE("report serialization carries the pinned fields") {
        const std::string json = report.to_json();
        for (const char* field :
             {"map_small", "map_middle", "map_large", "map_overall",
              "r1_small", "hap", "asi", "ndcg", "excluded_queries"})
            CHECK(json.find(field) != std::string::npos);
        const std::string csv = report.to_csv();
        CHECK(csv.find("map,small,") != std::string::npos);
        CHECK(csv.find("r1,overall,") != std::string::npos);
    }
}

TEST_CASE("excluded queries are counted and skipped") {
    CampusRegistry reg;
    reg.system = CoordSystem::planar;
    for (int b = 1; b <= 3; ++b) {
        BuildingRecord rec;
        rec.building_id = b;
        // buildings 1 and 2 within 150 m, building 3 isolated
        rec.coord = {b == 3 ? 5000.0 : b * 150.0, 0.0};
        rec.split = Split::test;
        reg.buildings.push_back(rec);
    }
    const ScaleConfig scale_config;
    const auto queries = one_hot_set({1, 3}, View::satellite, 4, 1);
    // gallery holds building 2 only: query 1 has a level-1 match, query 3
    // has nothing relevant at any scale
    const auto gallery = one_hot_set({2}, View::drone, 4, 10);
    const RelevanceTable relevance =
        build_relevance_table(queries, gallery, reg, scale_config);
    const Matrix sims = similarity_matrix(queries, gallery);
    const MetricReport report = evaluate(queries, gallery, sims, true,
                                         relevance, MetricConfig::defaults(3));
    CHECK(report.excluded_queries == 2);  // query 1 at scale 0; query 3 everywhere
    CHECK(report.map_per_scale[1] == doctest::Approx(1.0));
}

TEST_CASE("random evaluation agrees with the oracle suite") {
    Rng rng(251);
    MetricConfig metric_config = MetricConfig::defaults(3);
    for (int t = 0; t < 200; ++t) {
        const auto levels = random_levels(3 + rng.uniform_int(27), rng);
        bool any = false;
        for (int lev : levels)
            if (lev < 3) any = true;
        if (!any) continue;
        CHECK(h_ap(levels, metric_config.gains) ==
              doctest::Approx(oracle::h_ap_double_loop(levels,
                                                       metric_config.gains))
                  .epsilon(1e-12));
        CHECK(asi(levels, metric_config.gains) ==
              doctest::Approx(oracle::asi_recount(levels, metric_config.gains))
                  .epsilon(1e-12));
        CHECK(ndcg(levels, 3) ==
              doctest::Approx(oracle::ndcg_scan(levels, 3)).epsilon(1e-12));
    }
}
