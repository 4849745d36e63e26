#pragma once

#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "stepfit/dataset.hpp"
#include "stepfit/descriptor.hpp"
#include "stepfit/rng.hpp"

namespace stepfit {

// Probability clamp for Bernoulli/categorical parameters and floors for
// Gaussian variances. They keep every log-probability finite on held-out
// patterns and guard EM against collapsing classes.
constexpr double kProbEps = 1e-15;
constexpr double kVarianceFloor = 1e-6;

struct BernoulliParams {
    Eigen::MatrixXd pi;  // K x D success probabilities
};

struct CategoricalParams {
    std::vector<Eigen::MatrixXd> prob;  // per class: D x C, rows sum to 1
    int n_levels() const { return prob.empty() ? 0 : static_cast<int>(prob[0].cols()); }
};

struct GaussianParams {
    Family family = Family::gaussian_unit;  // which covariance structure applies
    Eigen::MatrixXd mu;                     // K x D means
    Eigen::VectorXd var_scalar;             // K   (spherical)
    Eigen::MatrixXd var_diag;               // K x D (diag)
    std::vector<Eigen::MatrixXd> cov;       // per class: D x D (full)
};

struct CovariateParams {
    Eigen::MatrixXd beta;  // K x D slopes
    Eigen::VectorXd b;     // K intercepts
};

using EmissionParams =
    std::variant<BernoulliParams, CategoricalParams, GaussianParams, CovariateParams>;

Family family_of(const EmissionParams& params);
int n_classes_of(const EmissionParams& params);

/// One block's column slice of a dataset, prepared for fitting.
struct BlockData {
    Eigen::MatrixXd values;  // N x D
    BoolMatrix observed;     // N x D, all true unless the block is FIML-enabled
    long n() const { return values.rows(); }
    long dim() const { return values.cols(); }
};

inline double logsumexp(const Eigen::VectorXd& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;  // all -inf
    double s = 0.0;
    for (long k = 0; k < v.size(); ++k) s += std::exp(v[k] - m);
    return m + std::log(s);
}

/// Class-conditional log-probability of every unit: entry (i, k) is the log
/// density/pmf of row i under class k, restricted to the observed dimensions.
/// A fully missing row contributes log 1 = 0.
Eigen::MatrixXd emission_log_prob(const EmissionParams& params, const BlockData& data);

/// log p(x = k | z) rows: log-softmax of beta_k' z + b_k. Rows exponentiate to
/// stochastic vectors.
Eigen::MatrixXd covariate_log_prior(const CovariateParams& params, const BlockData& z);

/// Weighted complete-information M-step for one block. `resp` is the N x K
/// responsibility matrix (rows may carry negative entries after a BCH
/// correction but still sum to 1); `weights` are the sample weights.
/// `n_levels` fixes C for categorical blocks; `warm` supplies the incumbent
/// parameters used to warm-start the covariate solver.
EmissionParams emission_m_step(Family family, const BlockData& data, const Eigen::MatrixXd& resp,
                               const Eigen::VectorXd& weights, int n_levels = 0,
                               const SolverOptions& solver = {},
                               const EmissionParams* warm = nullptr,
                               std::vector<double>* objective_trace = nullptr);

/// Weighted multinomial logistic objective and its gradient, exposed for the
/// solver and for finite-difference checks. The gradient is laid out K x (D+1)
/// with the intercept in the last column.
double covariate_objective(const CovariateParams& params, const BlockData& z,
                           const Eigen::MatrixXd& resp, const Eigen::VectorXd& weights);
Eigen::MatrixXd covariate_gradient(const CovariateParams& params, const BlockData& z,
                                   const Eigen::MatrixXd& resp, const Eigen::VectorXd& weights);

CovariateParams covariate_m_step(const BlockData& z, const Eigen::MatrixXd& resp,
                                 const Eigen::VectorXd& weights, const SolverOptions& solver,
                                 const CovariateParams* warm = nullptr,
                                 std::vector<double>* objective_trace = nullptr);

/// Free-parameter count of one block. Covariate uses the reference-class
/// convention (K-1)(D+1).
long emission_n_parameters(const EmissionParams& params);

/// Draws one observation vector conditional on the class. Covariates are
/// exogenous and cannot be sampled.
Eigen::VectorXd emission_sample(const EmissionParams& params, int class_index, Rng& rng);

/// Rebases covariate coefficients so the reference class has zero slope and
/// intercept (softmax parameters are identified only up to a shift).
CovariateParams rebase_covariate(const CovariateParams& params, int reference_class);

}  // namespace stepfit
