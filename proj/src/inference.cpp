#include "stepfit/inference.hpp"

#include <cmath>

#include "stepfit/errors.hpp"

namespace stepfit {

namespace {

PreparedData prepare_for_model(const MixtureModel& model, const Dataset& mm, const Dataset* sm) {
    const ModelDescriptor* sm_desc = nullptr;
    if (sm != nullptr) {
        if (!model.has_structural())
            throw ValidationError("structural data given but the model has no structural part");
        sm_desc = &model.structural_desc;
    } else if (model.has_structural()) {
        throw ValidationError("the model has structural blocks; structural data is required");
    }
    return prepare_data(mm, model.measurement_desc, sm, sm_desc);
}

}  // namespace

Eigen::MatrixXd predict_proba(const MixtureModel& model, const Dataset& mm, const Dataset* sm) {
    return e_step(model, prepare_for_model(model, mm, sm)).tau;
}

std::vector<int> predict(const MixtureModel& model, const Dataset& mm, const Dataset* sm) {
    const Eigen::MatrixXd tau = predict_proba(model, mm, sm);
    std::vector<int> classes(static_cast<std::size_t>(tau.rows()));
    for (long i = 0; i < tau.rows(); ++i) {
        int best = 0;
        for (long c = 1; c < tau.cols(); ++c)
            if (tau(i, c) > tau(i, best)) best = static_cast<int>(c);
        classes[static_cast<std::size_t>(i)] = best;
    }
    return classes;
}

double score(const MixtureModel& model, const Dataset& mm, const Dataset* sm) {
    return e_step(model, prepare_for_model(model, mm, sm)).avg_ll;
}

long model_n_parameters(const MixtureModel& model) {
    long count = 0;
    for (const EmissionParams& params : model.measurement) count += emission_n_parameters(params);
    for (const EmissionParams& params : model.structural) count += emission_n_parameters(params);
    if (!model.has_covariate()) count += model.n_components - 1;
    return count;
}

FitReportStats information_criteria(const MixtureModel& model, const Dataset& mm,
                                    const Dataset* sm) {
    const PreparedData data = prepare_for_model(model, mm, sm);
    const EStepResult e = e_step(model, data);
    FitReportStats stats;
    stats.n = data.total_weight;
    stats.k = model.n_components;
    stats.avg_ll = e.avg_ll;
    stats.total_ll = e.avg_ll * data.total_weight;
    stats.n_parameters = model_n_parameters(model);
    stats.aic = -2.0 * stats.total_ll + 2.0 * static_cast<double>(stats.n_parameters);
    stats.bic = -2.0 * stats.total_ll + std::log(stats.n) * static_cast<double>(stats.n_parameters);
    stats.class_sizes = Eigen::VectorXd::Zero(model.n_components);
    for (long i = 0; i < data.n; ++i)
        stats.class_sizes += data.weights[i] * e.tau.row(i).transpose();
    stats.class_sizes /= data.total_weight;
    return stats;
}

SampleResult sample_model(const MixtureModel& model, long n, Rng& rng) {
    if (model.has_covariate())
        throw ValidationError(
            "sampling requires a model without covariates: the marginal distribution of the "
            "latent class is only specified when no covariate block is present");
    if (n < 0) throw ValidationError("sample: n must be nonnegative");

    auto width_of = [](const ModelDescriptor& desc) {
        int width = 0;
        for (const BlockSpec& block : desc.blocks) width = std::max(width, block.col_end);
        return width;
    };
    const int d_mm = width_of(model.measurement_desc);
    const int d_sm = model.has_structural() ? width_of(model.structural_desc) : 0;

    std::vector<int> classes(static_cast<std::size_t>(n));
    Eigen::MatrixXd mm_values(n, d_mm);
    Eigen::MatrixXd sm_values(n, d_sm);
    for (long i = 0; i < n; ++i) {
        const int x = categorical_draw(rng, model.class_weights);
        classes[static_cast<std::size_t>(i)] = x;
        for (std::size_t b = 0; b < model.measurement.size(); ++b) {
            const BlockSpec& spec = model.measurement_desc.blocks[b];
            mm_values.row(i).segment(spec.col_begin, spec.width()) =
                emission_sample(model.measurement[b], x, rng).transpose();
        }
        for (std::size_t b = 0; b < model.structural.size(); ++b) {
            const BlockSpec& spec = model.structural_desc.blocks[b];
            sm_values.row(i).segment(spec.col_begin, spec.width()) =
                emission_sample(model.structural[b], x, rng).transpose();
        }
    }
    return SampleResult{std::move(classes), Dataset(std::move(mm_values)),
                        Dataset(std::move(sm_values))};
}

double normal_cdf(double x) { return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }

ZTestResult class_difference_test(const std::vector<double>& reference_draws,
                                  const std::vector<double>& target_draws) {
    if (reference_draws.size() != target_draws.size())
        throw ValidationError("class_difference_test: draw counts differ between classes");
    const std::size_t n = reference_draws.size();
    if (n < 2) throw ValidationError("class_difference_test: at least two bootstrap draws required");

    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += target_draws[r] - reference_draws[r];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const double diff = target_draws[r] - reference_draws[r] - mean;
        ss += diff * diff;
    }
    ZTestResult out;
    out.estimate = mean;
    out.se = std::sqrt(ss / static_cast<double>(n - 1));
    out.z = out.se > 0.0 ? out.estimate / out.se : 0.0;
    out.p_value = 2.0 * (1.0 - normal_cdf(std::abs(out.z)));
    return out;
}

}  // namespace stepfit
