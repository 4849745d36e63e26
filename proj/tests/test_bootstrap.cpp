#include <doctest.h>

#include <cmath>
#include <numeric>

#include "stepfit/bootstrap.hpp"
#include "stepfit/errors.hpp"
#include "stepfit/inference.hpp"
#include "stepfit/simulation.hpp"

using namespace stepfit;

namespace {

struct Fixture {
    SimulatedData data;
    ModelDescriptor mm_desc;
    ModelDescriptor sm_desc;
    StepwiseConfig cfg;
    MixtureModel model;

    explicit Fixture(long n = 250, std::uint64_t seed = 51) {
        BakkDesign design;
        design.kind = StudyKind::response;
        design.n = n;
        design.separation = 0.9;
        design.seed = seed;
        data = generate(design);
        mm_desc = bakk_mm_descriptor(StudyKind::response);
        sm_desc = bakk_sm_descriptor(StudyKind::response);
        cfg.n_steps = 1;
        cfg.em.seed = 77;
        cfg.em.abs_tol = 1e-8;
        model = fit_stepwise(data.mm, &data.sm, mm_desc, &sm_desc, 3, cfg);
    }
};

}  // namespace

TEST_SUITE("bootstrap") {

TEST_CASE("align_classes recovers a deliberate swap") {
    Fixture f;
    const Eigen::MatrixXd resp = predict_proba(f.model, f.data.mm, &f.data.sm);
    std::vector<int> swap{2, 0, 1};
    const MixtureModel permuted = permute_classes(f.model, swap);
    const Eigen::MatrixXd resp_permuted = predict_proba(permuted, f.data.mm, &f.data.sm);
    const std::vector<int> sigma = align_classes(resp, resp_permuted, f.data.mm.weights());
    // Aligning the permuted model back: class c of the original lives at
    // position p with swap[p] == c.
    for (int c = 0; c < 3; ++c) CHECK(swap[static_cast<std::size_t>(sigma[static_cast<std::size_t>(c)])] == c);
}

TEST_CASE("align_classes on identical responsibilities is the identity") {
    Fixture f;
    const Eigen::MatrixXd resp = predict_proba(f.model, f.data.mm, &f.data.sm);
    const std::vector<int> sigma = align_classes(resp, resp, f.data.mm.weights());
    for (int c = 0; c < 3; ++c) CHECK(sigma[static_cast<std::size_t>(c)] == c);
}

TEST_CASE("alignment objective is at least the identity objective") {
    Rng rng(61);
    for (int trial = 0; trial < 20; ++trial) {
        const long n = 30;
        const int k = 3;
        Eigen::MatrixXd a(n, k), b(n, k);
        for (long i = 0; i < n; ++i) {
            for (int c = 0; c < k; ++c) {
                a(i, c) = uniform01(rng);
                b(i, c) = uniform01(rng);
            }
            a.row(i) /= a.row(i).sum();
            b.row(i) /= b.row(i).sum();
        }
        const Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
        const std::vector<int> sigma = align_classes(a, b, w);
        double best = 0.0, identity = 0.0;
        for (long i = 0; i < n; ++i)
            for (int c = 0; c < k; ++c) {
                best += a(i, c) * b(i, sigma[static_cast<std::size_t>(c)]);
                identity += a(i, c) * b(i, c);
            }
        CHECK(best >= identity - 1e-12);
    }
}

TEST_CASE("identity resample reproduces direct refits") {
    Fixture f;
    const Resampler identity = [](Rng&, long n, int) {
        std::vector<int> indices(static_cast<std::size_t>(n));
        std::iota(indices.begin(), indices.end(), 0);
        return indices;
    };
    const BootstrapResult result =
        bootstrap_stats(f.model, f.data.mm, &f.data.sm, f.cfg, 3, 1000, 1, identity);
    CHECK(result.n_failed == 0);

    for (int rep = 0; rep < 3; ++rep) {
        StepwiseConfig direct_cfg = f.cfg;
        direct_cfg.em.seed = 1000 + static_cast<std::uint64_t>(rep);
        MixtureModel direct =
            fit_stepwise(f.data.mm, &f.data.sm, f.mm_desc, &f.sm_desc, 3, direct_cfg);
        const Eigen::MatrixXd main_resp = predict_proba(f.model, f.data.mm, &f.data.sm);
        const Eigen::MatrixXd boot_resp = predict_proba(direct, f.data.mm, &f.data.sm);
        const std::vector<int> sigma = align_classes(main_resp, boot_resp, f.data.mm.weights());
        const MixtureModel aligned = permute_classes(direct, sigma);
        const auto& mu = std::get<GaussianParams>(aligned.structural[0]).mu;
        for (int c = 0; c < 3; ++c) {
            const auto draws = result.draws("sm", "outcome", "mu", c, 0);
            REQUIRE(draws.size() == 3);
            CHECK(draws[static_cast<std::size_t>(rep)] == mu(c, 0));
        }
    }
}

TEST_CASE("aggregated means equal the long-form column means") {
    Fixture f;
    const BootstrapResult result = bootstrap_stats(f.model, f.data.mm, &f.data.sm, f.cfg, 8, 2024);
    for (const AggregatedStat& stat : result.sm_stats) {
        const auto draws = result.draws(stat.module, stat.block, stat.param, stat.cls, stat.dim);
        REQUIRE(!draws.empty());
        double mean = 0.0;
        for (double v : draws) mean += v;
        mean /= static_cast<double>(draws.size());
        CHECK(stat.mean == doctest::Approx(mean).epsilon(1e-12));
        double ss = 0.0;
        for (double v : draws) ss += (v - mean) * (v - mean);
        const double sd = std::sqrt(ss / (static_cast<double>(draws.size()) - 1.0));
        CHECK(stat.std == doctest::Approx(sd).epsilon(1e-12));
    }
}

TEST_CASE("permuting the main model permutes the aggregated tables identically") {
    Fixture f;
    const std::vector<int> perm{1, 2, 0};
    const MixtureModel permuted_main = permute_classes(f.model, perm);
    const BootstrapResult base = bootstrap_stats(f.model, f.data.mm, &f.data.sm, f.cfg, 6, 99);
    const BootstrapResult swapped =
        bootstrap_stats(permuted_main, f.data.mm, &f.data.sm, f.cfg, 6, 99);
    for (int c = 0; c < 3; ++c) {
        const auto base_draws = base.draws("sm", "outcome", "mu", perm[static_cast<std::size_t>(c)], 0);
        const auto swapped_draws = swapped.draws("sm", "outcome", "mu", c, 0);
        REQUIRE(base_draws.size() == swapped_draws.size());
        for (std::size_t r = 0; r < base_draws.size(); ++r)
            CHECK(swapped_draws[r] == doctest::Approx(base_draws[r]).epsilon(1e-12));
    }
}

TEST_CASE("bootstrap class-weight means track the main fit on well-separated data") {
    Fixture f(250, 53);
    const BootstrapResult result =
        bootstrap_stats(f.model, f.data.mm, &f.data.sm, f.cfg, 100, 404, 2);
    REQUIRE(result.cw_stats.size() == 3);
    for (const AggregatedStat& stat : result.cw_stats)
        CHECK(std::abs(stat.mean - f.model.class_weights[stat.cls]) < 0.05);
}

TEST_CASE("a one-class model bootstraps with finite spread") {
    BakkDesign design;
    design.kind = StudyKind::response;
    design.n = 60;
    design.seed = 5;
    const SimulatedData data = generate(design);
    StepwiseConfig cfg;
    cfg.em.seed = 1;
    const ModelDescriptor mm_desc = bakk_mm_descriptor(StudyKind::response);
    const ModelDescriptor sm_desc = bakk_sm_descriptor(StudyKind::response);
    const MixtureModel model = fit_stepwise(data.mm, &data.sm, mm_desc, &sm_desc, 1, cfg);
    const BootstrapResult result = bootstrap_stats(model, data.mm, &data.sm, cfg, 2, 17);
    CHECK(result.n_failed == 0);
    for (const AggregatedStat& stat : result.sm_stats) {
        CHECK(std::isfinite(stat.mean));
        CHECK(std::isfinite(stat.std));
    }
}

TEST_CASE("bootstrap rejects fewer than two repetitions") {
    Fixture f(60, 3);
    CHECK_THROWS_AS(bootstrap_stats(f.model, f.data.mm, &f.data.sm, f.cfg, 1, 5),
                    ValidationError);
}

}  // TEST_SUITE
