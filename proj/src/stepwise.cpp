#include "stepfit/stepwise.hpp"

#include <cmath>

#include <Eigen/LU>

#include "stepfit/errors.hpp"

namespace stepfit {

std::string assignment_name(Assignment a) { return a == Assignment::soft ? "soft" : "modal"; }

std::string correction_name(Correction c) {
    switch (c) {
        case Correction::none: return "none";
        case Correction::bch: return "bch";
        case Correction::ml: return "ml";
    }
    return "none";
}

Assignment assignment_from_name(const std::string& name) {
    if (name == "soft") return Assignment::soft;
    if (name == "modal") return Assignment::modal;
    throw ValidationError("unknown assignment '" + name + "' (expected soft or modal)");
}

Correction correction_from_name(const std::string& name) {
    if (name == "none") return Correction::none;
    if (name == "bch") return Correction::bch;
    if (name == "ml") return Correction::ml;
    throw ValidationError("unknown correction '" + name + "' (expected none, bch or ml)");
}

void StepwiseConfig::validate() const {
    if (n_steps < 1 || n_steps > 3)
        throw ValidationError("stepwise config: n_steps must be 1, 2 or 3");
    em.validate();
}

std::string StepwiseConfig::method_label() const {
    if (n_steps == 1) return "1-step";
    if (n_steps == 2) return "2-step";
    return "3-step (" + assignment_name(assignment) + ", " + correction_name(correction) + ")";
}

MixtureModel fit_one_step(const Dataset& mm, const ModelDescriptor& mm_desc, const Dataset* sm,
                          const ModelDescriptor* sm_desc, int n_components, const EmConfig& cfg) {
    const PreparedData data = prepare_data(mm, mm_desc, sm, sm_desc);
    MixtureModel model = fit_em(data, n_components, cfg);
    model.method = "1-step";
    return model;
}

MixtureModel fit_measurement(const Dataset& mm, const ModelDescriptor& mm_desc, int n_components,
                             const EmConfig& cfg) {
    const PreparedData data = prepare_data(mm, mm_desc, nullptr, nullptr);
    MixtureModel model = fit_em(data, n_components, cfg);
    model.method = "measurement";
    return model;
}

MixtureModel two_step_from(const MixtureModel& mm_fit, const Dataset& mm2, const Dataset& sm2,
                           const ModelDescriptor& sm_desc, const EmConfig& cfg) {
    const PreparedData data = prepare_data(mm2, mm_fit.measurement_desc, &sm2, &sm_desc);
    MixtureModel model = fit_em(data, mm_fit.n_components, cfg, &mm_fit, /*freeze=*/true);
    model.method = "2-step";
    return model;
}

MixtureModel fit_two_step(const Dataset& mm1, const Dataset& mm2, const Dataset& sm2,
                          const ModelDescriptor& mm_desc, const ModelDescriptor& sm_desc,
                          int n_components, const EmConfig& cfg) {
    const MixtureModel mm_fit = fit_measurement(mm1, mm_desc, n_components, cfg);
    return two_step_from(mm_fit, mm2, sm2, sm_desc, cfg);
}

ImputedWeights compute_assignments(const MixtureModel& mm_fit, const Dataset& mm,
                                   Assignment assignment) {
    const PreparedData data = prepare_data(mm, mm_fit.measurement_desc, nullptr, nullptr);
    const EStepResult posterior = e_step(mm_fit, data);
    ImputedWeights out;
    if (assignment == Assignment::soft) {
        out.w = posterior.tau;
        return out;
    }
    out.w = Eigen::MatrixXd::Zero(posterior.tau.rows(), posterior.tau.cols());
    for (long i = 0; i < posterior.tau.rows(); ++i) {
        int best = 0;
        for (long c = 1; c < posterior.tau.cols(); ++c)
            if (posterior.tau(i, c) > posterior.tau(i, best)) best = static_cast<int>(c);
        out.w(i, best) = 1.0;
    }
    return out;
}

ConfusionMatrix compute_confusion(const MixtureModel& mm_fit, const Dataset& mm,
                                  const ImputedWeights& weights) {
    if (weights.corrected)
        throw ValidationError("compute_confusion expects uncorrected assignment weights");
    const PreparedData data = prepare_data(mm, mm_fit.measurement_desc, nullptr, nullptr);
    const Eigen::MatrixXd tau = e_step(mm_fit, data).tau;
    const long k = tau.cols();
    if (weights.w.rows() != tau.rows() || weights.w.cols() != k)
        throw ValidationError("compute_confusion: weight shape mismatch");

    Eigen::MatrixXd num = Eigen::MatrixXd::Zero(k, k);
    Eigen::VectorXd den = Eigen::VectorXd::Zero(k);
    for (long i = 0; i < tau.rows(); ++i) {
        const double wi = data.weights[i];
        for (long c = 0; c < k; ++c) {
            const double t = wi * tau(i, c);
            den[c] += t;
            for (long a = 0; a < k; ++a) num(c, a) += t * weights.w(i, a);
        }
    }
    ConfusionMatrix out;
    out.d.resize(k, k);
    for (long c = 0; c < k; ++c) {
        if (den[c] <= 0.0)
            throw NumericalError("degenerate class " + std::to_string(c) +
                                 ": zero marginal probability in the confusion matrix");
        out.d.row(c) = num.row(c) / den[c];
        out.d.row(c) /= out.d.row(c).sum();  // absorb floating-point drift
    }
    return out;
}

ImputedWeights bch_adjust(const ImputedWeights& weights, const ConfusionMatrix& confusion) {
    if (weights.corrected) throw ValidationError("weights are already BCH-corrected");
    const Eigen::MatrixXd& d = confusion.d;
    if (d.rows() != d.cols() || d.rows() != weights.w.cols())
        throw ValidationError("bch_adjust: confusion matrix shape mismatch");
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(d);
    const Eigen::MatrixXd inv = lu.inverse();
    // 1-norm condition estimate guards against explosive corrected weights.
    const double cond = d.cwiseAbs().colwise().sum().maxCoeff() *
                        inv.cwiseAbs().colwise().sum().maxCoeff();
    if (!std::isfinite(cond) || cond > 1e12)
        throw NumericalError("confusion matrix is near-singular (condition estimate " +
                             std::to_string(cond) + "); the BCH correction is unreliable here, "
                             "consider the ML correction instead");
    ImputedWeights out;
    out.w = weights.w * inv;
    out.corrected = true;
    return out;
}

namespace {

Eigen::MatrixXd normalized_rows(const Eigen::MatrixXd& w) {
    Eigen::MatrixXd out = w;
    for (long i = 0; i < out.rows(); ++i) {
        const double s = out.row(i).sum();
        if (s == 0.0)
            throw NumericalError("imputed weights of unit " + std::to_string(i + 1) + " sum to zero");
        out.row(i) /= s;
    }
    return out;
}

struct StructuralBlocks {
    std::vector<BlockData> blocks;
    std::vector<int> levels;
    int covariate = -1;
};

StructuralBlocks prepare_structural(const Dataset& sm, const ModelDescriptor& desc) {
    StructuralBlocks out;
    out.blocks = prepare_blocks(sm, desc, DescriptorRole::structural, out.levels);
    out.covariate = desc.covariate_index();
    return out;
}

std::vector<EmissionParams> structural_m_step(const StructuralBlocks& data,
                                              const ModelDescriptor& desc,
                                              const Eigen::MatrixXd& resp,
                                              const Eigen::VectorXd& weights,
                                              const std::vector<EmissionParams>* warm) {
    std::vector<EmissionParams> params(data.blocks.size());
    for (std::size_t b = 0; b < data.blocks.size(); ++b) {
        const BlockSpec& spec = desc.blocks[b];
        const EmissionParams* warm_b = warm ? &(*warm)[b] : nullptr;
        params[b] = emission_m_step(spec.family, data.blocks[b], resp, weights, data.levels[b],
                                    spec.solver, warm_b);
    }
    return params;
}

}  // namespace

std::vector<EmissionParams> third_step(const Dataset& sm2, const ModelDescriptor& sm_desc,
                                       const ImputedWeights& weights,
                                       const ConfusionMatrix* confusion, Correction correction,
                                       const Eigen::VectorXd& class_weights, const EmConfig& cfg,
                                       FitMeta* meta) {
    const StructuralBlocks data = prepare_structural(sm2, sm_desc);
    const Eigen::VectorXd& omega = sm2.weights();
    if (weights.w.rows() != sm2.n_rows())
        throw ValidationError("third_step: weights and structural data disagree on N");
    const long k = weights.w.cols();

    if (correction != Correction::ml) {
        // Responsibilities are fixed, so the EM fixed point is reached after a
        // single M-step for the closed-form blocks; the covariate block runs
        // its inner solver to its own tolerance.
        const Eigen::MatrixXd resp = normalized_rows(weights.w);
        if (meta) {
            meta->n_iter = 1;
            meta->converged = true;
        }
        return structural_m_step(data, sm_desc, resp, omega, nullptr);
    }

    if (confusion == nullptr)
        throw ValidationError("the ML correction requires the confusion matrix");
    if (weights.corrected)
        throw ValidationError("the ML correction expects uncorrected assignment weights");

    // Class-conditional probability of the predicted membership: w* = w D^T.
    Eigen::MatrixXd w_star = weights.w * confusion->d.transpose();
    Eigen::MatrixXd log_w_star(w_star.rows(), k);
    for (long i = 0; i < w_star.rows(); ++i)
        for (long c = 0; c < k; ++c)
            log_w_star(i, c) = w_star(i, c) > 0.0 ? std::log(w_star(i, c))
                                                  : -std::numeric_limits<double>::infinity();

    Eigen::VectorXd log_cw(k);
    for (long c = 0; c < k; ++c)
        log_cw[c] = class_weights[c] > 0.0 ? std::log(class_weights[c])
                                           : -std::numeric_limits<double>::infinity();

    // Warm start at the naive solution.
    std::vector<EmissionParams> params =
        third_step(sm2, sm_desc, weights, nullptr, Correction::none, class_weights, cfg);

    const double total_weight = omega.sum();
    auto expectation = [&](const std::vector<EmissionParams>& current) {
        Eigen::MatrixXd log_joint = log_w_star;
        if (data.covariate >= 0) {
            const auto& cov = std::get<CovariateParams>(current[static_cast<std::size_t>(data.covariate)]);
            log_joint += covariate_log_prior(cov, data.blocks[static_cast<std::size_t>(data.covariate)]);
        } else {
            log_joint.rowwise() += log_cw.transpose();
        }
        for (std::size_t b = 0; b < data.blocks.size(); ++b) {
            if (static_cast<int>(b) == data.covariate) continue;
            log_joint += emission_log_prob(current[b], data.blocks[b]);
        }
        EStepResult e;
        e.tau.resize(log_joint.rows(), k);
        double ll = 0.0;
        for (long i = 0; i < log_joint.rows(); ++i) {
            const double lse = logsumexp(log_joint.row(i).transpose());
            if (!std::isfinite(lse))
                throw NumericalError("ML third step: zero probability for unit " +
                                     std::to_string(i + 1) + " in every class");
            for (long c = 0; c < k; ++c) e.tau(i, c) = std::exp(log_joint(i, c) - lse);
            ll += omega[i] * lse;
        }
        e.avg_ll = ll / total_weight;
        return e;
    };

    EStepResult e = expectation(params);
    double prev_ll = e.avg_ll;
    std::vector<double> history{prev_ll};
    int iter = 0;
    bool converged = false;
    for (; iter < cfg.max_iter; ++iter) {
        params = structural_m_step(data, sm_desc, e.tau, omega, &params);
        e = expectation(params);
        history.push_back(e.avg_ll);
        const double gap = std::abs(e.avg_ll - prev_ll);
        const bool abs_ok = cfg.abs_tol && gap < *cfg.abs_tol;
        const bool rel_ok = cfg.rel_tol && gap < *cfg.rel_tol * std::abs(prev_ll);
        prev_ll = e.avg_ll;
        if (abs_ok || rel_ok) {
            converged = true;
            ++iter;
            break;
        }
    }
    if (meta) {
        meta->avg_ll = prev_ll;
        meta->n_iter = iter;
        meta->converged = converged;
        meta->ll_history = std::move(history);
    }
    return params;
}

MixtureModel three_step_from(const MixtureModel& mm_fit, const Dataset& mm2, const Dataset& sm2,
                             const ModelDescriptor& sm_desc, const EmConfig& cfg,
                             Assignment assignment, Correction correction) {
    ImputedWeights w = compute_assignments(mm_fit, mm2, assignment);
    std::optional<ConfusionMatrix> confusion;
    if (correction != Correction::none) {
        confusion = compute_confusion(mm_fit, mm2, w);
        if (correction == Correction::bch) w = bch_adjust(w, *confusion);
    }
    MixtureModel model = mm_fit;
    model.structural_desc = sm_desc;
    FitMeta step3_meta;
    model.structural = third_step(sm2, sm_desc, w, confusion ? &*confusion : nullptr, correction,
                                  mm_fit.class_weights, cfg, &step3_meta);
    model.method = "3-step (" + assignment_name(assignment) + ", " + correction_name(correction) + ")";
    // Final average log-likelihood of the assembled complete model.
    const PreparedData cm = prepare_data(mm2, mm_fit.measurement_desc, &sm2, &sm_desc);
    model.fit_meta.n_iter = step3_meta.n_iter;
    model.fit_meta.converged = step3_meta.converged;
    model.fit_meta.avg_ll = e_step(model, cm).avg_ll;
    model.fit_meta.ll_history.clear();
    return model;
}

MixtureModel fit_three_step(const Dataset& mm1, const Dataset& mm2, const Dataset& sm2,
                            const ModelDescriptor& mm_desc, const ModelDescriptor& sm_desc,
                            int n_components, const EmConfig& cfg, Assignment assignment,
                            Correction correction) {
    const MixtureModel mm_fit = fit_measurement(mm1, mm_desc, n_components, cfg);
    return three_step_from(mm_fit, mm2, sm2, sm_desc, cfg, assignment, correction);
}

MixtureModel fit_stepwise(const Dataset& mm, const Dataset* sm, const ModelDescriptor& mm_desc,
                          const ModelDescriptor* sm_desc, int n_components,
                          const StepwiseConfig& cfg) {
    cfg.validate();
    if (cfg.n_steps > 1 && (sm == nullptr || sm_desc == nullptr))
        throw ValidationError("multi-step estimation requires structural data");
    if (cfg.n_steps == 1)
        return fit_one_step(mm, mm_desc, sm, sm_desc, n_components, cfg.em);
    if (cfg.n_steps == 2)
        return fit_two_step(mm, mm, *sm, mm_desc, *sm_desc, n_components, cfg.em);
    return fit_three_step(mm, mm, *sm, mm_desc, *sm_desc, n_components, cfg.em, cfg.assignment,
                          cfg.correction);
}

}  // namespace stepfit
