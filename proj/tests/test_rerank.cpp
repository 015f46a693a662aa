#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hiergeo/errors.hpp"
#include "hiergeo/rerank.hpp"
#include "hiergeo/rng.hpp"
#include "oracles.hpp"

using namespace hiergeo;

namespace {

// Planar point cloud; index 0 acts as the query.
Matrix point_cloud_matrix(const std::vector<std::pair<double, double>>& pts) {
    const std::size_t n = pts.size();
    Matrix m(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            m.at(i, j) = i == j ? 0.0
                                : std::hypot(pts[i].first - pts[j].first,
                                             pts[i].second - pts[j].second);
    return m;
}

Matrix random_cloud(int n, Rng& rng, double side = 2.0) {
    std::vector<std::pair<double, double>> pts;
    for (int i = 0; i < n; ++i)
        pts.emplace_back(rng.uniform(0.0, side), rng.uniform(0.0, side));
    return point_cloud_matrix(pts);
}

}  // namespace

TEST_CASE("rerank config validation") {
    RerankConfig config;
    config.validate();
    config.mu = 0.0;
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config.mu = 0.1;
    config.lambda_fuse = 1.5;
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config.lambda_fuse = 0.3;
    config.k = 0;
    CHECK_THROWS_AS(config.validate(), ConfigError);

    RerankConfig defaults;
    CHECK(defaults.effective_k_expand(20) == 10);
    CHECK(defaults.effective_k_expand(3) == 1);
    CHECK(defaults.effective_k_expand(1) == 1);
}

TEST_CASE("k-reciprocal fusion identity at lambda 1") {
    Rng rng(301);
    const Matrix d = random_cloud(8, rng);
    RerankConfig config;
    config.k = 3;
    config.lambda_fuse = 1.0;
    const auto out = k_reciprocal_rerank(d, config);
    REQUIRE(out.size() == 7);
    for (std::size_t j = 0; j < out.size(); ++j)
        CHECK(out[j] == d.at(0, j + 1));
}

TEST_CASE("duplicate distance rows give zero Jaccard distance") {
    // gallery point 1 duplicates the query exactly
    const Matrix d = point_cloud_matrix(
        {{0.0, 0.0}, {0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}});
    RerankConfig config;
    config.k = 2;
    config.lambda_fuse = 0.0;
    const auto out = k_reciprocal_rerank(d, config);
    CHECK(out[0] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(out[1] > 0.0);
    CHECK(out[2] > 0.0);
}

TEST_CASE("k-reciprocal matches the straight-line reference") {
    Rng rng(307);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 6 + static_cast<int>(rng.uniform_int(10));
        const Matrix d = random_cloud(n, rng);
        RerankConfig config;
        config.k = 2 + static_cast<int>(rng.uniform_int(n - 3));
        config.lambda_fuse = 0.3;
        const auto got = k_reciprocal_rerank(d, config);
        const auto expect = oracle::kreciprocal_reference(
            d, config.k, config.effective_k_expand(config.k),
            config.lambda_fuse);
        REQUIRE(got.size() == expect.size());
        for (std::size_t j = 0; j < got.size(); ++j)
            CHECK(got[j] == doctest::Approx(expect[j]).epsilon(1e-9));
    }
}

TEST_CASE("k bounds are enforced") {
    Rng rng(311);
    const Matrix d = random_cloud(5, rng);
    RerankConfig config;
    config.k = 5;
    CHECK_THROWS_AS(k_reciprocal_rerank(d, config), ConfigError);
    config.k = 4;
    CHECK_NOTHROW(k_reciprocal_rerank(d, config));
}

TEST_CASE("k schedule from training statistics") {
    RerankConfig config;  // mu 0.1, k_floor 20

    SUBCASE("floor case") {
        // single class, 61 images at level 0: mu/C * 61 = 6.1 -> floor 20
        std::vector<ScalePartition> parts(1);
        parts[0].anchor_building_id = 1;
        parts[0].levels = {{1, 0}};
        std::unordered_map<std::int64_t, std::int64_t> images{{1, 61}};
        const KSchedule schedule =
            compute_k_schedule(parts, images, config, 1);
        CHECK(schedule.ks == std::vector<int>{20});
    }

    SUBCASE("constructed 450-class campus reproduces 20/24/61") {
        std::vector<ScalePartition> parts;
        std::unordered_map<std::int64_t, std::int64_t> images;
        for (int c = 0; c < 450; ++c) {
            ScalePartition p;
            p.anchor_building_id = c * 100 + 1;
            // 1 building at level 0, 3 more within level 1, 6 more at level 2
            for (int b = 0; b < 10; ++b) {
                const std::int64_t id = c * 100 + 1 + b;
                p.levels[id] = b == 0 ? 0 : (b < 4 ? 1 : 2);
                images[id] = 61;
            }
            parts.push_back(std::move(p));
        }
        const KSchedule schedule = compute_k_schedule(parts, images, config, 3);
        // totals: 450*61 -> 6.1, 450*244 -> 24.4, 450*610 -> 61.0
        CHECK(schedule.ks == std::vector<int>{20, 24, 61});
    }

    SUBCASE("empty training set") {
        std::unordered_map<std::int64_t, std::int64_t> images;
        CHECK_THROWS_AS(compute_k_schedule({}, images, config, 3), ConfigError);
    }

    SUBCASE("missing image count") {
        std::vector<ScalePartition> parts(1);
        parts[0].anchor_building_id = 1;
        parts[0].levels = {{1, 0}, {2, 1}};
        std::unordered_map<std::int64_t, std::int64_t> images{{1, 10}};
        CHECK_THROWS_AS(compute_k_schedule(parts, images, config, 2),
                        InputError);
    }
}

TEST_CASE("k schedule validation") {
    KSchedule schedule;
    CHECK_THROWS_AS(schedule.validate(), ConfigError);
    schedule.ks = {4, 2};
    CHECK_THROWS_AS(schedule.validate(), ConfigError);
    schedule.ks = {2, 4};
    schedule.validate();
}

TEST_CASE("single-stage msrerank equals standard re-ranking exactly") {
    Rng rng(313);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix d = random_cloud(9, rng);
        RerankConfig config;
        config.k = 3;
        const auto standard = k_reciprocal_rerank(d, config);
        const auto ms = ms_rerank(d, KSchedule{{3}}, config);
        CHECK(ms == standard);  // bit-identical
    }
}

TEST_CASE("msrerank follows the literal segmented procedure") {
    Rng rng(317);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 7 + static_cast<int>(rng.uniform_int(8));
        const Matrix d = random_cloud(n, rng);
        const int gallery = n - 1;
        KSchedule schedule;
        schedule.ks = {2 + static_cast<int>(rng.uniform_int(2)),
                       4 + static_cast<int>(rng.uniform_int(2))};
        RerankConfig config;

        const auto got = ms_rerank(d, schedule, config);

        // simulate the algorithm with public stage calls, tracking frozen
        // values and the per-stage selections
        std::vector<double> total(gallery, 0.0);
        std::vector<bool> active(gallery, true);
        std::vector<std::vector<int>> selections;
        std::vector<std::pair<int, double>> frozen;
        for (int k : schedule.ks) {
            RerankConfig stage_config = config;
            stage_config.k = k;
            const auto stage = k_reciprocal_rerank(d, stage_config);
            for (int j = 0; j < gallery; ++j)
                if (active[j]) total[j] += stage[j];
            std::vector<int> idx(gallery);
            std::iota(idx.begin(), idx.end(), 0);
            std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
                if (total[a] != total[b]) return total[a] < total[b];
                return a < b;
            });
            idx.resize(std::min(k, gallery));
            for (int j : idx)
                if (active[j]) {
                    active[j] = false;
                    frozen.emplace_back(j, total[j]);
                }
            selections.push_back(idx);
        }

        REQUIRE(got.size() == total.size());
        for (int j = 0; j < gallery; ++j) CHECK(got[j] == total[j]);
        // frozen entries never change after their selection stage
        for (const auto& [j, value] : frozen) CHECK(got[j] == value);
        // newly masked sets are disjoint across stages
        std::vector<int> seen;
        for (const auto& sel : selections)
            for (int j : sel) seen.push_back(j);
        // stage selections may re-list already-frozen top entries; the
        // frozen bookkeeping above is the disjoint set
        std::vector<int> frozen_ids;
        for (const auto& [j, value] : frozen) frozen_ids.push_back(j);
        std::sort(frozen_ids.begin(), frozen_ids.end());
        CHECK(std::adjacent_find(frozen_ids.begin(), frozen_ids.end()) ==
              frozen_ids.end());
    }
}

TEST_CASE("msrerank matches the reference pipeline") {
    Rng rng(331);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix d = random_cloud(11, rng);
        KSchedule schedule{{2, 4, 6}};
        RerankConfig config;
        const auto got = ms_rerank(d, schedule, config);
        const auto expect =
            oracle::ms_rerank_reference(d, schedule.ks, config.lambda_fuse);
        for (std::size_t j = 0; j < got.size(); ++j)
            CHECK(got[j] == doctest::Approx(expect[j]).epsilon(1e-9));
    }
}

TEST_CASE("msrerank schedule bounds") {
    Rng rng(337);
    const Matrix d = random_cloud(6, rng);
    RerankConfig config;
    CHECK_THROWS_AS(ms_rerank(d, KSchedule{{2, 6}}, config), ConfigError);
}

TEST_CASE("rank shift profile") {
    SUBCASE("identity rankings") {
        const std::vector<std::vector<std::int64_t>> ranks{{1, 2, 3, 4}};
        const auto profile = rank_shift_profile(ranks, ranks);
        for (double v : profile) CHECK(v == 0.0);
    }

    SUBCASE("full reversal closed form") {
        const int n = 7;
        std::vector<std::int64_t> fwd(n), rev(n);
        std::iota(fwd.begin(), fwd.end(), 1);
        rev.assign(fwd.rbegin(), fwd.rend());
        const auto profile = rank_shift_profile({fwd}, {rev});
        for (int p = 1; p <= n; ++p)
            CHECK(profile[p - 1] ==
                  doctest::Approx(std::abs(n + 1 - 2 * p)).epsilon(1e-15));
    }

    SUBCASE("random permutations match brute force") {
        Rng rng(347);
        const int n = 12, queries = 5;
        std::vector<std::vector<std::int64_t>> before(queries), after(queries);
        for (int q = 0; q < queries; ++q) {
            std::vector<std::int64_t> ids(n);
            std::iota(ids.begin(), ids.end(), 100);
            before[q] = ids;
            for (int i = n - 1; i > 0; --i)
                std::swap(ids[i], ids[rng.uniform_int(i + 1)]);
            after[q] = ids;
        }
        const auto profile = rank_shift_profile(before, after);
        for (int p = 0; p < n; ++p) {
            double expect = 0.0;
            for (int q = 0; q < queries; ++q) {
                const auto it = std::find(after[q].begin(), after[q].end(),
                                          before[q][p]);
                expect += std::abs(
                    static_cast<double>(it - after[q].begin()) - p);
            }
            CHECK(profile[p] == doctest::Approx(expect / queries));
        }
    }

    SUBCASE("mismatched galleries rejected") {
        CHECK_THROWS_AS(
            rank_shift_profile({{1, 2}}, {{1, 3}}), InputError);
    }
}
