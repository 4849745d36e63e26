#include "stepfit/simulation.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "stepfit/errors.hpp"
#include "stepfit/inference.hpp"
#include "stepfit/parallel.hpp"

namespace stepfit {

std::string study_kind_name(StudyKind kind) {
    switch (kind) {
        case StudyKind::response: return "response";
        case StudyKind::covariate: return "covariate";
        case StudyKind::complete: return "complete";
    }
    return "response";
}

StudyKind study_kind_from_name(const std::string& name) {
    if (name == "response") return StudyKind::response;
    if (name == "covariate") return StudyKind::covariate;
    if (name == "complete") return StudyKind::complete;
    throw ValidationError("unknown study kind '" + name + "'");
}

std::string estimator_name(Estimator e) {
    switch (e) {
        case Estimator::one_step: return "1-step";
        case Estimator::two_step: return "2-step";
        case Estimator::three_step_naive: return "3-step-naive";
        case Estimator::three_step_bch: return "3-step-bch";
        case Estimator::three_step_ml: return "3-step-ml";
    }
    return "1-step";
}

Estimator estimator_from_name(const std::string& name) {
    if (name == "1-step") return Estimator::one_step;
    if (name == "2-step") return Estimator::two_step;
    if (name == "3-step-naive" || name == "naive") return Estimator::three_step_naive;
    if (name == "3-step-bch" || name == "bch") return Estimator::three_step_bch;
    if (name == "3-step-ml" || name == "ml") return Estimator::three_step_ml;
    throw ValidationError("unknown estimator '" + name + "'");
}

void BakkDesign::validate() const {
    if (n < 1) throw ValidationError("design: n must be positive");
    if (separation <= 0.0 || separation >= 1.0)
        throw ValidationError("design: separation must lie in (0, 1)");
    if (missing_ratio < 0.0 || missing_ratio >= 1.0)
        throw ValidationError("design: missing_ratio must lie in [0, 1)");
    if (kind != StudyKind::complete && missing_ratio != 0.0)
        throw ValidationError("design: only the complete design supports missing data");
}

Eigen::MatrixXd bakk_pi(double separation) {
    // Class-conditional success probabilities, classes by rows. The first
    // class answers all six indicators with probability gamma, the second
    // flips the last three, the third flips all six.
    const double g = separation;
    Eigen::MatrixXd pi(3, 6);
    pi.row(0) << g, g, g, g, g, g;
    pi.row(1) << g, g, g, 1 - g, 1 - g, 1 - g;
    pi.row(2) << 1 - g, 1 - g, 1 - g, 1 - g, 1 - g, 1 - g;
    return pi;
}

Eigen::VectorXd bakk_outcome_means() { return Eigen::Vector3d(-1.0, 1.0, 0.0); }
Eigen::VectorXd bakk_beta() { return Eigen::Vector3d(0.0, -1.0, 1.0); }
Eigen::VectorXd bakk_intercepts() { return Eigen::Vector3d(0.0, 2.35, -3.66); }

ModelDescriptor bakk_mm_descriptor(StudyKind kind) {
    BlockSpec block;
    block.name = "indicators";
    block.family = Family::binary;
    block.col_begin = 0;
    block.col_end = 6;
    block.fiml = kind == StudyKind::complete;
    ModelDescriptor desc;
    desc.blocks.push_back(block);
    return desc;
}

ModelDescriptor bakk_sm_descriptor(StudyKind kind) {
    ModelDescriptor desc;
    if (kind == StudyKind::response) {
        BlockSpec outcome;
        outcome.name = "outcome";
        outcome.family = Family::gaussian_unit;
        outcome.col_begin = 0;
        outcome.col_end = 1;
        desc.blocks.push_back(outcome);
        return desc;
    }
    BlockSpec covariate;
    covariate.name = "predictor";
    covariate.family = Family::covariate;
    covariate.col_begin = 0;
    covariate.col_end = 1;
    desc.blocks.push_back(covariate);
    if (kind == StudyKind::complete) {
        BlockSpec outcome;
        outcome.name = "outcome";
        outcome.family = Family::gaussian_unit;
        outcome.col_begin = 1;
        outcome.col_end = 2;
        outcome.fiml = true;
        desc.blocks.push_back(outcome);
    }
    return desc;
}

SimulatedData generate(const BakkDesign& design) {
    design.validate();
    const long n = design.n;
    const Eigen::MatrixXd pi = bakk_pi(design.separation);
    const Eigen::VectorXd mu = bakk_outcome_means();
    const Eigen::VectorXd beta = bakk_beta();
    const Eigen::VectorXd intercepts = bakk_intercepts();

    // All stochastic primitives are thresholded uniforms or standard normals
    // drawn in a fixed order, so datasets generated with the same seed share
    // their randomness across separation and missing-ratio settings (common
    // random numbers). The mask stream is separate and thresholds one uniform
    // per cell, nesting the missing sets across ratios.
    Rng rng(mix_seed(design.seed, 0xda7aULL));
    Rng mask_rng(mix_seed(design.seed, 0x3a5cULL));

    const bool with_covariate = design.kind != StudyKind::response;
    const bool with_outcome = design.kind != StudyKind::covariate;
    const int d_sm = (with_covariate ? 1 : 0) + (with_outcome ? 1 : 0);

    Eigen::MatrixXd mm_values(n, 6);
    Eigen::MatrixXd sm_values(n, d_sm);
    std::vector<int> classes(static_cast<std::size_t>(n));

    for (long i = 0; i < n; ++i) {
        int x;
        double z_p = 0.0;
        if (with_covariate) {
            z_p = 1.0 + std::floor(uniform01(rng) * 5.0);
            if (z_p > 5.0) z_p = 5.0;
            const Eigen::VectorXd logits = beta * z_p + intercepts;
            const double lse = logsumexp(logits);
            const Eigen::VectorXd probs = (logits.array() - lse).exp().matrix();
            x = categorical_draw(rng, probs);
        } else {
            x = categorical_draw(rng, Eigen::Vector3d(1.0, 1.0, 1.0));
        }
        classes[static_cast<std::size_t>(i)] = x;
        for (int j = 0; j < 6; ++j) mm_values(i, j) = uniform01(rng) < pi(x, j) ? 1.0 : 0.0;
        int col = 0;
        if (with_covariate) sm_values(i, col++) = z_p;
        if (with_outcome) sm_values(i, col) = mu[x] + normal01(rng);
    }

    BoolMatrix mm_observed = BoolMatrix::Constant(n, 6, true);
    BoolMatrix sm_observed = BoolMatrix::Constant(n, d_sm, true);
    if (design.kind == StudyKind::complete) {
        // MCAR over the indicators and the outcome; the covariate is never masked.
        for (long i = 0; i < n; ++i) {
            for (int j = 0; j < 6; ++j)
                if (uniform01(mask_rng) < design.missing_ratio) mm_observed(i, j) = false;
            if (uniform01(mask_rng) < design.missing_ratio) sm_observed(i, 1) = false;
        }
    }

    std::vector<std::string> mm_names;
    for (int j = 1; j <= 6; ++j) mm_names.push_back("y" + std::to_string(j));
    std::vector<std::string> sm_names;
    if (with_covariate) sm_names.push_back("z_p");
    if (with_outcome) sm_names.push_back("z_o");

    SimulatedData out{
        Dataset(std::move(mm_values), std::move(mm_observed), Eigen::VectorXd::Ones(n), mm_names),
        Dataset(std::move(sm_values), std::move(sm_observed), Eigen::VectorXd::Ones(n), sm_names),
        std::move(classes)};
    return out;
}

double tracked_parameter_truth(StudyKind) { return 1.0; }

double extract_tracked_parameter(const MixtureModel& model, const SimulatedData& data,
                                 StudyKind kind) {
    // Align the fitted classes to the generating truth through the posterior
    // agreement with one-hot true-class responsibilities.
    const long n = data.mm.n_rows();
    const int k = model.n_components;
    Eigen::MatrixXd truth = Eigen::MatrixXd::Zero(n, k);
    for (long i = 0; i < n; ++i) truth(i, data.true_classes[static_cast<std::size_t>(i)]) = 1.0;
    const Eigen::MatrixXd resp = predict_proba(model, data.mm, &data.sm);
    const std::vector<int> perm = align_classes(truth, resp, data.mm.weights());

    if (kind == StudyKind::covariate) {
        const int cov_block = model.structural_desc.covariate_index();
        const auto& params = std::get<CovariateParams>(
            model.structural[static_cast<std::size_t>(cov_block)]);
        // Rebased slope of true class 2 with true class 0 as reference.
        return params.beta(perm[2], 0) - params.beta(perm[0], 0);
    }
    for (std::size_t b = 0; b < model.structural.size(); ++b) {
        if (model.structural_desc.blocks[b].family != Family::gaussian_unit) continue;
        const auto& params = std::get<GaussianParams>(model.structural[b]);
        return params.mu(perm[1], 0);  // outcome mean of true class 2 (one-indexed)
    }
    throw ValidationError("tracked parameter: no outcome block in the structural model");
}

const StudyCell& StudyResult::cell(int n_index, int axis_index, Estimator estimator) const {
    const auto it = cells.find({n_index, axis_index, estimator});
    if (it == cells.end()) throw ValidationError("study: no such cell");
    return it->second;
}

std::string StudyResult::to_csv() const {
    std::ostringstream out;
    const std::string axis_name =
        kind == StudyKind::complete ? "missing_ratio" : "separation";
    out << axis_name << ",n";
    std::vector<Estimator> estimators;
    for (const auto& [key, value] : cells) {
        const Estimator e = std::get<2>(key);
        bool seen = false;
        for (Estimator known : estimators) seen = seen || known == e;
        if (!seen) estimators.push_back(e);
    }
    for (const Estimator e : estimators) out << ",bias_" << estimator_name(e);
    for (const Estimator e : estimators) out << ",rmse_" << estimator_name(e);
    for (const Estimator e : estimators) out << ",failed_" << estimator_name(e);
    out << '\n';
    char buf[64];
    for (std::size_t a = 0; a < axis.size(); ++a)
        for (std::size_t ni = 0; ni < ns.size(); ++ni) {
            std::snprintf(buf, sizeof(buf), "%.12g", axis[a]);
            out << buf << ',' << ns[ni];
            auto emit = [&](auto field) {
                for (const Estimator e : estimators) {
                    const StudyCell& c = cell(static_cast<int>(ni), static_cast<int>(a), e);
                    std::snprintf(buf, sizeof(buf), "%.12g", static_cast<double>(field(c)));
                    out << ',' << buf;
                }
            };
            emit([](const StudyCell& c) { return c.bias; });
            emit([](const StudyCell& c) { return c.rmse; });
            emit([](const StudyCell& c) { return c.n_failed; });
            out << '\n';
        }
    return out.str();
}

namespace {

struct RepOutcome {
    // One entry per estimator: the tracked-parameter estimate or NaN on failure.
    std::vector<double> estimates;
};

}  // namespace

StudyResult run_study(StudyKind kind, const std::vector<long>& ns, const std::vector<double>& axis,
                      int replications, const std::vector<Estimator>& estimators,
                      std::uint64_t base_seed, const EmConfig& em, int jobs) {
    if (ns.empty() || axis.empty()) throw ValidationError("study: empty grid");
    if (replications < 1) throw ValidationError("study: replications must be >= 1");
    if (estimators.empty()) throw ValidationError("study: no estimators requested");

    const ModelDescriptor mm_desc = bakk_mm_descriptor(kind);
    const ModelDescriptor sm_desc = bakk_sm_descriptor(kind);
    const double truth = tracked_parameter_truth(kind);

    const int n_configs = static_cast<int>(ns.size() * axis.size());
    const int n_tasks = n_configs * replications;
    std::vector<RepOutcome> outcomes(static_cast<std::size_t>(n_tasks));

    const bool needs_mm_fit = [&] {
        for (const Estimator e : estimators)
            if (e != Estimator::one_step) return true;
        return false;
    }();

    parallel_for(n_tasks, jobs, [&](int task) {
        const int rep = task % replications;
        const int config = task / replications;
        const int axis_index = config % static_cast<int>(axis.size());
        const int n_index = config / static_cast<int>(axis.size());

        BakkDesign design;
        design.kind = kind;
        design.n = ns[static_cast<std::size_t>(n_index)];
        design.separation = kind == StudyKind::complete ? 0.8 : axis[static_cast<std::size_t>(axis_index)];
        design.missing_ratio = kind == StudyKind::complete ? axis[static_cast<std::size_t>(axis_index)] : 0.0;
        // Common random numbers: the dataset seed ignores the axis value, so
        // every axis level and estimator sees the same underlying draws.
        design.seed = mix_seed(base_seed, static_cast<std::uint64_t>(design.n),
                               static_cast<std::uint64_t>(rep));
        const SimulatedData data = generate(design);

        EmConfig rep_em = em;
        rep_em.seed = mix_seed(design.seed, 0xf17ULL);

        // The measurement fit is shared by the two- and three-step estimators;
        // with identical seeds a shared fit is indistinguishable from refitting.
        MixtureModel mm_fit;
        bool mm_ok = false;
        std::string mm_error;
        if (needs_mm_fit) {
            try {
                mm_fit = fit_measurement(data.mm, mm_desc, 3, rep_em);
                mm_ok = true;
            } catch (const Error& e) {
                mm_error = e.what();
            }
        }

        RepOutcome& out = outcomes[static_cast<std::size_t>(task)];
        out.estimates.assign(estimators.size(), std::numeric_limits<double>::quiet_NaN());
        for (std::size_t ei = 0; ei < estimators.size(); ++ei) {
            try {
                MixtureModel fitted;
                switch (estimators[ei]) {
                    case Estimator::one_step:
                        fitted = fit_one_step(data.mm, mm_desc, &data.sm, &sm_desc, 3, rep_em);
                        break;
                    case Estimator::two_step:
                        if (!mm_ok) throw NumericalError(mm_error);
                        fitted = two_step_from(mm_fit, data.mm, data.sm, sm_desc, rep_em);
                        break;
                    case Estimator::three_step_naive:
                    case Estimator::three_step_bch:
                    case Estimator::three_step_ml: {
                        if (!mm_ok) throw NumericalError(mm_error);
                        const Correction corr =
                            estimators[ei] == Estimator::three_step_naive ? Correction::none
                            : estimators[ei] == Estimator::three_step_bch ? Correction::bch
                                                                          : Correction::ml;
                        fitted = three_step_from(mm_fit, data.mm, data.sm, sm_desc, rep_em,
                                                 Assignment::modal, corr);
                        break;
                    }
                }
                out.estimates[ei] = extract_tracked_parameter(fitted, data, kind);
            } catch (const Error&) {
                // left as NaN; counted as a failed fit for this cell
            }
        }
    });

    StudyResult result;
    result.kind = kind;
    result.ns = ns;
    result.axis = axis;
    result.replications = replications;
    for (int config = 0; config < n_configs; ++config) {
        const int axis_index = config % static_cast<int>(axis.size());
        const int n_index = config / static_cast<int>(axis.size());
        for (std::size_t ei = 0; ei < estimators.size(); ++ei) {
            StudyCell cell;
            double sum = 0.0, sum_sq = 0.0;
            for (int rep = 0; rep < replications; ++rep) {
                const double estimate =
                    outcomes[static_cast<std::size_t>(config * replications + rep)].estimates[ei];
                if (std::isnan(estimate)) {
                    ++cell.n_failed;
                    continue;
                }
                ++cell.n_used;
                sum += estimate - truth;
                sum_sq += (estimate - truth) * (estimate - truth);
            }
            if (cell.n_used > 0) {
                cell.bias = sum / cell.n_used;
                cell.rmse = std::sqrt(sum_sq / cell.n_used);
            }
            result.cells[{n_index, axis_index, estimators[ei]}] = cell;
        }
    }
    return result;
}

}  // namespace stepfit
