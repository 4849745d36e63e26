#pragma once

#include <vector>

#include "stepfit/em.hpp"

namespace stepfit {

struct FitReportStats {
    double total_ll = 0.0;
    double avg_ll = 0.0;
    long n_parameters = 0;
    double aic = 0.0;
    double bic = 0.0;
    double n = 0.0;  // total sample weight
    int k = 0;
    Eigen::VectorXd class_sizes;  // weighted mean responsibilities
};

/// Posterior class probabilities p(x | y, z) for each unit.
Eigen::MatrixXd predict_proba(const MixtureModel& model, const Dataset& mm,
                              const Dataset* sm = nullptr);

/// Most probable class per unit; ties go to the lowest index.
std::vector<int> predict(const MixtureModel& model, const Dataset& mm, const Dataset* sm = nullptr);

/// Weighted average log-likelihood of the complete model over the dataset.
double score(const MixtureModel& model, const Dataset& mm, const Dataset* sm = nullptr);

/// Log-likelihood, free-parameter count and information criteria. The free
/// parameters are the sum over blocks plus K-1 class weights; the class
/// weights are not counted when a covariate block supplies the latent prior.
/// N in the BIC is the total sample weight.
FitReportStats information_criteria(const MixtureModel& model, const Dataset& mm,
                                    const Dataset* sm = nullptr);

long model_n_parameters(const MixtureModel& model);

struct SampleResult {
    std::vector<int> classes;
    Dataset mm;
    Dataset sm;  // zero columns when the model has no structural part
};

/// Draws n units from the generative model: x ~ class weights, then every
/// block conditional on x. Requires a model without covariates, since the
/// marginal of the latent class is not specified otherwise.
SampleResult sample_model(const MixtureModel& model, long n, Rng& rng);

struct ZTestResult {
    double estimate = 0.0;
    double se = 0.0;
    double z = 0.0;
    double p_value = 1.0;
};

/// Two-sided Z-test of a parameter difference between two classes computed
/// from bootstrap draws: one value per repetition and class. The estimate is
/// the mean bootstrapped difference and the SE its standard deviation.
ZTestResult class_difference_test(const std::vector<double>& reference_draws,
                                  const std::vector<double>& target_draws);

/// Standard normal CDF (erf-based).
double normal_cdf(double x);

}  // namespace stepfit
