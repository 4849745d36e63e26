#include <doctest.h>

#include <cmath>

#include "stepfit/errors.hpp"
#include "stepfit/simulation.hpp"
#include "stepfit/stepwise.hpp"
#include "support/oracles.hpp"

using namespace stepfit;

namespace {

ModelDescriptor binary_descriptor(int d) {
    ModelDescriptor desc;
    BlockSpec block;
    block.name = "indicators";
    block.family = Family::binary;
    block.col_begin = 0;
    block.col_end = d;
    desc.blocks.push_back(block);
    return desc;
}

ModelDescriptor outcome_descriptor() {
    ModelDescriptor desc;
    BlockSpec block;
    block.name = "outcome";
    block.family = Family::gaussian_unit;
    block.col_begin = 0;
    block.col_end = 1;
    desc.blocks.push_back(block);
    return desc;
}

MixtureModel binary_model(const Eigen::VectorXd& cw, const Eigen::MatrixXd& pi) {
    MixtureModel model;
    model.n_components = static_cast<int>(cw.size());
    model.class_weights = cw;
    model.measurement_desc = binary_descriptor(static_cast<int>(pi.cols()));
    model.measurement.push_back(BernoulliParams{pi});
    return model;
}

}  // namespace

TEST_SUITE("stepwise") {

TEST_CASE("one-step without structural data equals a plain mixture fit") {
    const BakkDesign design{StudyKind::response, 200, 0.8, 0.0, 7};
    const SimulatedData data = generate(design);
    const ModelDescriptor mm_desc = bakk_mm_descriptor(StudyKind::response);
    EmConfig cfg;
    cfg.seed = 3;
    const MixtureModel a = fit_one_step(data.mm, mm_desc, nullptr, nullptr, 3, cfg);
    const MixtureModel b = fit_measurement(data.mm, mm_desc, 3, cfg);
    CHECK(a.fit_meta.avg_ll == b.fit_meta.avg_ll);
    CHECK(std::get<BernoulliParams>(a.measurement[0]).pi ==
          std::get<BernoulliParams>(b.measurement[0]).pi);
}

TEST_CASE("one-step with K=1 reduces to weighted sample statistics") {
    Eigen::MatrixXd mm_values(4, 1);
    mm_values << 1, 0, 1, 1;
    Eigen::MatrixXd sm_values(4, 1);
    sm_values << 1.0, 2.0, 3.0, 6.0;
    Eigen::VectorXd weights(4);
    weights << 1, 1, 1, 2;
    const Dataset mm(mm_values, BoolMatrix::Constant(4, 1, true), weights, {"y"});
    const Dataset sm(sm_values, BoolMatrix::Constant(4, 1, true), weights, {"z"});
    const ModelDescriptor mm_desc = binary_descriptor(1);
    const ModelDescriptor sm_desc = outcome_descriptor();
    EmConfig cfg;
    const MixtureModel model = fit_one_step(mm, mm_desc, &sm, &sm_desc, 1, cfg);
    CHECK(model.class_weights[0] == 1.0);
    const auto& outcome = std::get<GaussianParams>(model.structural[0]);
    CHECK(outcome.mu(0, 0) == doctest::Approx((1.0 + 2.0 + 3.0 + 12.0) / 5.0).epsilon(1e-12));
}

TEST_CASE("two-step freezes the step-1 measurement parameters") {
    const BakkDesign design{StudyKind::response, 300, 0.8, 0.0, 11};
    const SimulatedData data = generate(design);
    const ModelDescriptor mm_desc = bakk_mm_descriptor(StudyKind::response);
    const ModelDescriptor sm_desc = bakk_sm_descriptor(StudyKind::response);
    EmConfig cfg;
    cfg.seed = 5;
    const MixtureModel step1 = fit_measurement(data.mm, mm_desc, 3, cfg);
    const MixtureModel model = two_step_from(step1, data.mm, data.sm, sm_desc, cfg);
    CHECK(std::get<BernoulliParams>(model.measurement[0]).pi ==
          std::get<BernoulliParams>(step1.measurement[0]).pi);
    CHECK(model.class_weights == step1.class_weights);
    CHECK(model.structural.size() == 1);
}

TEST_CASE("compute_assignments") {
    Eigen::MatrixXd pi(3, 2);
    pi << 0.9, 0.9, 0.5, 0.5, 0.1, 0.1;
    const MixtureModel model = binary_model(Eigen::Vector3d(0.2, 0.5, 0.3), pi);
    Eigen::MatrixXd values(3, 2);
    values << 1, 1, 1, 0, 0, 0;
    const Dataset data{values};

    const ImputedWeights soft = compute_assignments(model, data, Assignment::soft);
    const ImputedWeights modal = compute_assignments(model, data, Assignment::modal);
    for (long i = 0; i < 3; ++i) {
        CHECK(soft.w.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
        int argmax = 0;
        for (long c = 1; c < 3; ++c)
            if (soft.w(i, c) > soft.w(i, argmax)) argmax = static_cast<int>(c);
        CHECK(modal.w(i, argmax) == 1.0);
        CHECK(modal.w.row(i).sum() == 1.0);
    }
}

TEST_CASE("modal assignment breaks ties toward the lowest class") {
    Eigen::MatrixXd pi(2, 1);
    pi << 0.5, 0.5;  // identical classes: posterior is exactly (0.5, 0.5)
    const MixtureModel model = binary_model(Eigen::Vector2d(0.5, 0.5), pi);
    Eigen::MatrixXd values(1, 1);
    values << 1;
    const ImputedWeights modal = compute_assignments(model, Dataset{values}, Assignment::modal);
    CHECK(modal.w(0, 0) == 1.0);
    CHECK(modal.w(0, 1) == 0.0);
}

TEST_CASE("compute_confusion") {
    SUBCASE("perfectly separated posteriors give the identity") {
        Eigen::MatrixXd pi(2, 6);
        // Extreme probabilities make the posterior effectively one-hot.
        pi.row(0).setConstant(1.0 - 1e-12);
        pi.row(1).setConstant(1e-12);
        const MixtureModel model = binary_model(Eigen::Vector2d(0.5, 0.5), pi);
        Eigen::MatrixXd values(4, 6);
        values << 1, 1, 1, 1, 1, 1,
                  1, 1, 1, 1, 1, 1,
                  0, 0, 0, 0, 0, 0,
                  0, 0, 0, 0, 0, 0;
        const Dataset data{values};
        const ImputedWeights modal = compute_assignments(model, data, Assignment::modal);
        const ConfusionMatrix d = compute_confusion(model, data, modal);
        CHECK((d.d - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-9);
    }
    SUBCASE("soft weights match direct summation on six units") {
        Eigen::MatrixXd pi(2, 2);
        pi << 0.8, 0.7, 0.3, 0.4;
        const Eigen::VectorXd cw = Eigen::Vector2d(0.6, 0.4);
        const MixtureModel model = binary_model(cw, pi);
        Eigen::MatrixXd values(6, 2);
        values << 1, 1, 1, 0, 0, 1, 0, 0, 1, 1, 0, 1;
        Eigen::VectorXd weights(6);
        weights << 1, 1, 2, 1, 0.5, 1;
        const Dataset data(values, BoolMatrix::Constant(6, 2, true), weights, {"a", "b"});
        const ImputedWeights soft = compute_assignments(model, data, Assignment::soft);
        const ConfusionMatrix d = compute_confusion(model, data, soft);

        // Direct summation with the plain-domain oracle posterior.
        const auto oracle = oracle::bernoulli_bayes(cw, pi, values);
        Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(2, 2);
        Eigen::VectorXd marginal = Eigen::VectorXd::Zero(2);
        for (long j = 0; j < 6; ++j)
            for (long c = 0; c < 2; ++c) {
                marginal[c] += weights[j] * oracle.posterior(j, c);
                for (long a = 0; a < 2; ++a)
                    expected(c, a) += weights[j] * oracle.posterior(j, c) * oracle.posterior(j, a);
            }
        for (long c = 0; c < 2; ++c) expected.row(c) /= marginal[c];
        CHECK((d.d - expected).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("rows sum to one on random instances") {
        Rng rng(13);
        for (int trial = 0; trial < 10; ++trial) {
            Eigen::MatrixXd pi(3, 3);
            for (long c = 0; c < 3; ++c)
                for (long j = 0; j < 3; ++j) pi(c, j) = 0.1 + 0.8 * uniform01(rng);
            Eigen::VectorXd cw(3);
            cw << 0.2, 0.35, 0.45;
            const MixtureModel model = binary_model(cw, pi);
            Eigen::MatrixXd values(20, 3);
            for (long i = 0; i < 20; ++i)
                for (long j = 0; j < 3; ++j) values(i, j) = uniform01(rng) < 0.5 ? 1.0 : 0.0;
            const Dataset data{values};
            const ImputedWeights w = compute_assignments(
                model, data, trial % 2 == 0 ? Assignment::soft : Assignment::modal);
            const ConfusionMatrix d = compute_confusion(model, data, w);
            for (long c = 0; c < 3; ++c)
                CHECK(d.d.row(c).sum() == doctest::Approx(1.0).epsilon(1e-10));
        }
    }
}

TEST_CASE("exact-enumeration and empirical confusion coincide on a weighted full support") {
    // With one unit per indicator pattern weighted by the model marginal
    // p(y), the empirical estimator integrates over exactly the same measure
    // as the exact enumeration.
    Eigen::MatrixXd pi(2, 2);
    pi << 0.85, 0.6, 0.25, 0.45;
    const Eigen::VectorXd cw = Eigen::Vector2d(0.55, 0.45);
    const MixtureModel model = binary_model(cw, pi);

    const auto patterns = oracle::enumerate_binary(2);
    Eigen::MatrixXd values(4, 2);
    Eigen::VectorXd weights(4);
    for (std::size_t p = 0; p < patterns.size(); ++p) {
        values.row(static_cast<long>(p)) = patterns[p].transpose();
        double marginal = 0.0;
        for (long c = 0; c < 2; ++c)
            marginal += cw[c] * oracle::bernoulli_pmf(pi.row(c), patterns[p]);
        weights[static_cast<long>(p)] = marginal;
    }
    const Dataset data(values, BoolMatrix::Constant(4, 2, true), weights, {"a", "b"});
    const ImputedWeights modal = compute_assignments(model, data, Assignment::modal);
    const ConfusionMatrix empirical = compute_confusion(model, data, modal);

    // Exact enumeration oracle: D(c, k) = sum_y p(y) p(c | y) 1[argmax = k] / p(c).
    const auto bayes = oracle::bernoulli_bayes(cw, pi, values);
    Eigen::MatrixXd exact = Eigen::MatrixXd::Zero(2, 2);
    for (long y = 0; y < 4; ++y) {
        const int assigned = bayes.posterior(y, 0) >= bayes.posterior(y, 1) ? 0 : 1;
        for (long c = 0; c < 2; ++c) exact(c, assigned) += bayes.likelihood[y] * bayes.posterior(y, c);
    }
    for (long c = 0; c < 2; ++c) exact.row(c) /= exact.row(c).sum();
    CHECK((empirical.d - exact).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("bch_adjust") {
    SUBCASE("identity confusion leaves the weights unchanged") {
        ImputedWeights w;
        w.w.resize(2, 2);
        w.w << 0.7, 0.3, 0.2, 0.8;
        ConfusionMatrix d;
        d.d = Eigen::MatrixXd::Identity(2, 2);
        const ImputedWeights adjusted = bch_adjust(w, d);
        CHECK((adjusted.w - w.w).cwiseAbs().maxCoeff() < 1e-14);
        CHECK(adjusted.corrected);
    }
    SUBCASE("hand-derived two-class inverse") {
        ImputedWeights w;
        w.w.resize(1, 2);
        w.w << 1.0, 0.0;
        ConfusionMatrix d;
        d.d.resize(2, 2);
        d.d << 0.8, 0.2, 0.2, 0.8;
        const ImputedWeights adjusted = bch_adjust(w, d);
        CHECK(adjusted.w(0, 0) == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
        CHECK(adjusted.w(0, 1) == doctest::Approx(-1.0 / 3.0).epsilon(1e-12));
    }
    SUBCASE("row sums stay at one for random stochastic confusion matrices") {
        Rng rng(19);
        for (int trial = 0; trial < 20; ++trial) {
            const int k = 2 + static_cast<int>(uniform01(rng) * 3.0);
            ConfusionMatrix d;
            d.d.resize(k, k);
            for (int c = 0; c < k; ++c) {
                for (int a = 0; a < k; ++a)
                    d.d(c, a) = (c == a ? 2.0 : 0.2) + uniform01(rng);  // diagonally dominant
                d.d.row(c) /= d.d.row(c).sum();
            }
            ImputedWeights w;
            w.w.resize(5, k);
            for (long i = 0; i < 5; ++i) {
                for (int a = 0; a < k; ++a) w.w(i, a) = uniform01(rng);
                w.w.row(i) /= w.w.row(i).sum();
            }
            const ImputedWeights adjusted = bch_adjust(w, d);
            for (long i = 0; i < 5; ++i)
                CHECK(adjusted.w.row(i).sum() == doctest::Approx(1.0).epsilon(1e-10));
        }
    }
    SUBCASE("near-singular confusion matrices are rejected") {
        ImputedWeights w;
        w.w.resize(1, 2);
        w.w << 0.5, 0.5;
        ConfusionMatrix d;
        d.d.resize(2, 2);
        d.d << 0.5, 0.5, 0.5, 0.5;  // exactly singular
        CHECK_THROWS_AS(bch_adjust(w, d), NumericalError);
    }
}

TEST_CASE("third_step with one-hot weights is the stratified MLE") {
    Eigen::MatrixXd sm_values(6, 1);
    sm_values << 1.0, 3.0, 2.0, 10.0, 12.0, 14.0;
    const Dataset sm{sm_values};
    ImputedWeights w;
    w.w.resize(6, 2);
    w.w << 1, 0, 1, 0, 1, 0, 0, 1, 0, 1, 0, 1;
    EmConfig cfg;
    const auto params = third_step(sm, outcome_descriptor(), w, nullptr, Correction::none,
                                   Eigen::Vector2d(0.5, 0.5), cfg);
    const auto& outcome = std::get<GaussianParams>(params[0]);
    CHECK(outcome.mu(0, 0) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(outcome.mu(1, 0) == doctest::Approx(12.0).epsilon(1e-15));
}

TEST_CASE("BCH with identity confusion reproduces the naive third step") {
    const BakkDesign design{StudyKind::response, 150, 0.8, 0.0, 23};
    const SimulatedData data = generate(design);
    ImputedWeights w;
    w.w.resize(150, 3);
    Rng rng(7);
    for (long i = 0; i < 150; ++i) {
        for (long c = 0; c < 3; ++c) w.w(i, c) = uniform01(rng);
        w.w.row(i) /= w.w.row(i).sum();
    }
    ConfusionMatrix identity;
    identity.d = Eigen::MatrixXd::Identity(3, 3);
    const ImputedWeights adjusted = bch_adjust(w, identity);

    EmConfig cfg;
    const auto naive = third_step(data.sm, bakk_sm_descriptor(StudyKind::response), w, nullptr,
                                  Correction::none, Eigen::Vector3d(1, 1, 1) / 3.0, cfg);
    const auto bch = third_step(data.sm, bakk_sm_descriptor(StudyKind::response), adjusted,
                                &identity, Correction::bch, Eigen::Vector3d(1, 1, 1) / 3.0, cfg);
    const auto& mu_naive = std::get<GaussianParams>(naive[0]).mu;
    const auto& mu_bch = std::get<GaussianParams>(bch[0]).mu;
    CHECK((mu_naive - mu_bch).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("ML third step keeps responsibilities stochastic") {
    const BakkDesign design{StudyKind::response, 120, 0.8, 0.0, 29};
    const SimulatedData data = generate(design);
    const ModelDescriptor mm_desc = bakk_mm_descriptor(StudyKind::response);
    EmConfig cfg;
    cfg.seed = 2;
    const MixtureModel mm_fit = fit_measurement(data.mm, mm_desc, 3, cfg);
    const ImputedWeights w = compute_assignments(mm_fit, data.mm, Assignment::soft);
    ConfusionMatrix identity;
    identity.d = Eigen::MatrixXd::Identity(3, 3);
    FitMeta meta;
    const auto params = third_step(data.sm, bakk_sm_descriptor(StudyKind::response), w, &identity,
                                   Correction::ml, mm_fit.class_weights, cfg, &meta);
    CHECK(params.size() == 1);
    CHECK(meta.n_iter >= 1);
    // With D = I and soft weights the ML E-step responsibilities are proper
    // posteriors; convergence implies they stayed normalized throughout.
    CHECK(meta.converged);
}

TEST_CASE("three_step_from assembles step-1 measurement and step-3 structural parts") {
    const BakkDesign design{StudyKind::response, 400, 0.8, 0.0, 31};
    const SimulatedData data = generate(design);
    const ModelDescriptor mm_desc = bakk_mm_descriptor(StudyKind::response);
    const ModelDescriptor sm_desc = bakk_sm_descriptor(StudyKind::response);
    EmConfig cfg;
    cfg.seed = 8;
    const MixtureModel mm_fit = fit_measurement(data.mm, mm_desc, 3, cfg);
    for (const Correction corr : {Correction::none, Correction::bch, Correction::ml}) {
        const MixtureModel model =
            three_step_from(mm_fit, data.mm, data.sm, sm_desc, cfg, Assignment::modal, corr);
        CHECK(std::get<BernoulliParams>(model.measurement[0]).pi ==
              std::get<BernoulliParams>(mm_fit.measurement[0]).pi);
        CHECK(model.class_weights == mm_fit.class_weights);
        CHECK(model.structural.size() == 1);
        CHECK(model.method == "3-step (modal, " + correction_name(corr) + ")");
    }
}

TEST_CASE("two-step is a fixed point of the one-step solution") {
    const BakkDesign design{StudyKind::response, 500, 0.9, 0.0, 37};
    const SimulatedData data = generate(design);
    const ModelDescriptor mm_desc = bakk_mm_descriptor(StudyKind::response);
    const ModelDescriptor sm_desc = bakk_sm_descriptor(StudyKind::response);
    EmConfig cfg;
    cfg.seed = 6;
    cfg.abs_tol = 1e-13;
    cfg.max_iter = 5000;
    const MixtureModel one_step = fit_one_step(data.mm, mm_desc, &data.sm, &sm_desc, 3, cfg);

    // Frozen measurement + structural EM started at the one-step structural
    // parameters: the one-step solution must not move beyond the residual
    // motion allowed by the stopping rule (parameter drift scales like the
    // square root of the log-likelihood gap).
    const PreparedData prepared = prepare_data(data.mm, mm_desc, &data.sm, &sm_desc);
    const MixtureModel refit = fit_em(prepared, 3, cfg, &one_step, /*freeze=*/true);
    const auto& mu_one = std::get<GaussianParams>(one_step.structural[0]).mu;
    const auto& mu_two = std::get<GaussianParams>(refit.structural[0]).mu;
    CHECK((mu_one - mu_two).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("fit_stepwise validates its configuration") {
    StepwiseConfig cfg;
    cfg.n_steps = 4;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.n_steps = 2;
    CHECK_NOTHROW(cfg.validate());

    const BakkDesign design{StudyKind::response, 50, 0.8, 0.0, 3};
    const SimulatedData data = generate(design);
    CHECK_THROWS_AS(fit_stepwise(data.mm, nullptr, bakk_mm_descriptor(StudyKind::response), nullptr,
                                 3, cfg),
                    ValidationError);
}

}  // TEST_SUITE
