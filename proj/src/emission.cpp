#include "stepfit/emission.hpp"

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "stepfit/errors.hpp"

namespace stepfit {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double clamp_prob(double p) {
    return std::min(1.0 - kProbEps, std::max(kProbEps, p));
}

void check_class_count(long k, const char* what) {
    if (k < 1) throw ValidationError(std::string(what) + ": at least one class required");
}

[[noreturn]] void degenerate_class(long k) {
    throw NumericalError("degenerate class " + std::to_string(k) +
                         ": zero effective weight on every observed cell");
}

}  // namespace

Family family_of(const EmissionParams& params) {
    if (std::holds_alternative<BernoulliParams>(params)) return Family::binary;
    if (std::holds_alternative<CategoricalParams>(params)) return Family::categorical;
    if (std::holds_alternative<CovariateParams>(params)) return Family::covariate;
    return std::get<GaussianParams>(params).family;
}

int n_classes_of(const EmissionParams& params) {
    if (const auto* p = std::get_if<BernoulliParams>(&params)) return static_cast<int>(p->pi.rows());
    if (const auto* p = std::get_if<CategoricalParams>(&params)) return static_cast<int>(p->prob.size());
    if (const auto* p = std::get_if<CovariateParams>(&params)) return static_cast<int>(p->beta.rows());
    return static_cast<int>(std::get<GaussianParams>(params).mu.rows());
}

// ---------------------------------------------------------------------------
// log_prob

namespace {

Eigen::MatrixXd bernoulli_log_prob(const BernoulliParams& params, const BlockData& data) {
    const long n = data.n(), d = data.dim(), k = params.pi.rows();
    if (params.pi.cols() != d) throw ValidationError("binary block: dimension mismatch");
    Eigen::MatrixXd log_p1 = params.pi.array().log().matrix();
    Eigen::MatrixXd log_p0 = (1.0 - params.pi.array()).log().matrix();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, k);
    for (long i = 0; i < n; ++i)
        for (long c = 0; c < k; ++c) {
            double s = 0.0;
            for (long j = 0; j < d; ++j) {
                if (!data.observed(i, j)) continue;
                s += data.values(i, j) != 0.0 ? log_p1(c, j) : log_p0(c, j);
            }
            out(i, c) = s;
        }
    return out;
}

Eigen::MatrixXd categorical_log_prob(const CategoricalParams& params, const BlockData& data) {
    const long n = data.n(), d = data.dim();
    const long k = static_cast<long>(params.prob.size());
    check_class_count(k, "categorical block");
    if (params.prob[0].rows() != d) throw ValidationError("categorical block: dimension mismatch");
    const long n_levels = params.prob[0].cols();
    std::vector<Eigen::MatrixXd> log_p;
    log_p.reserve(static_cast<std::size_t>(k));
    for (const auto& p : params.prob) log_p.push_back(p.array().log().matrix());
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, k);
    for (long i = 0; i < n; ++i)
        for (long c = 0; c < k; ++c) {
            double s = 0.0;
            for (long j = 0; j < d; ++j) {
                if (!data.observed(i, j)) continue;
                const long level = static_cast<long>(data.values(i, j));
                if (level < 0 || level >= n_levels)
                    throw ValidationError("categorical level " + std::to_string(level) +
                                          " outside 0.." + std::to_string(n_levels - 1));
                s += log_p[static_cast<std::size_t>(c)](j, level);
            }
            out(i, c) = s;
        }
    return out;
}

Eigen::MatrixXd gaussian_log_prob(const GaussianParams& params, const BlockData& data) {
    const long n = data.n(), d = data.dim(), k = params.mu.rows();
    if (params.mu.cols() != d) throw ValidationError("gaussian block: dimension mismatch");
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, k);

    if (params.family == Family::gaussian_full) {
        std::vector<Eigen::LLT<Eigen::MatrixXd>> chol;
        std::vector<double> log_det(static_cast<std::size_t>(k));
        chol.reserve(static_cast<std::size_t>(k));
        for (long c = 0; c < k; ++c) {
            chol.emplace_back(params.cov[static_cast<std::size_t>(c)]);
            if (chol.back().info() != Eigen::Success)
                throw NumericalError("gaussian_full: covariance of class " + std::to_string(c) +
                                     " is not positive definite");
            log_det[static_cast<std::size_t>(c)] =
                2.0 * chol.back().matrixL().toDenseMatrix().diagonal().array().log().sum();
        }
        for (long i = 0; i < n; ++i)
            for (long c = 0; c < k; ++c) {
                Eigen::VectorXd centered = data.values.row(i).transpose() - params.mu.row(c).transpose();
                const double quad = centered.dot(chol[static_cast<std::size_t>(c)].solve(centered));
                out(i, c) = -0.5 * (static_cast<double>(d) * kLog2Pi +
                                    log_det[static_cast<std::size_t>(c)] + quad);
            }
        return out;
    }

    // Diagonal structures share one masked loop.
    for (long i = 0; i < n; ++i)
        for (long c = 0; c < k; ++c) {
            double s = 0.0;
            for (long j = 0; j < d; ++j) {
                if (!data.observed(i, j)) continue;
                double var = 1.0;
                if (params.family == Family::gaussian_spherical) var = params.var_scalar[c];
                else if (params.family == Family::gaussian_diag) var = params.var_diag(c, j);
                const double diff = data.values(i, j) - params.mu(c, j);
                s += -0.5 * (kLog2Pi + std::log(var)) - diff * diff / (2.0 * var);
            }
            out(i, c) = s;
        }
    return out;
}

}  // namespace

Eigen::MatrixXd emission_log_prob(const EmissionParams& params, const BlockData& data) {
    if (const auto* p = std::get_if<BernoulliParams>(&params)) return bernoulli_log_prob(*p, data);
    if (const auto* p = std::get_if<CategoricalParams>(&params)) return categorical_log_prob(*p, data);
    if (const auto* p = std::get_if<GaussianParams>(&params)) return gaussian_log_prob(*p, data);
    throw ValidationError("covariate blocks have no emission probability; use covariate_log_prior");
}

Eigen::MatrixXd covariate_log_prior(const CovariateParams& params, const BlockData& z) {
    const long n = z.n(), d = z.dim(), k = params.beta.rows();
    if (params.beta.cols() != d) throw ValidationError("covariate block: dimension mismatch");
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < d; ++j)
            if (!z.observed(i, j))
                throw ValidationError("covariate block: missing value at row " + std::to_string(i + 1));
    Eigen::MatrixXd logits = z.values * params.beta.transpose();
    logits.rowwise() += params.b.transpose();
    for (long i = 0; i < n; ++i) {
        const double lse = logsumexp(logits.row(i).transpose());
        for (long c = 0; c < k; ++c) logits(i, c) -= lse;
    }
    return logits;
}

// ---------------------------------------------------------------------------
// M-steps

namespace {

BernoulliParams bernoulli_m_step(const BlockData& data, const Eigen::MatrixXd& resp,
                                 const Eigen::VectorXd& weights) {
    const long n = data.n(), d = data.dim(), k = resp.cols();
    Eigen::MatrixXd num = Eigen::MatrixXd::Zero(k, d);
    Eigen::MatrixXd den = Eigen::MatrixXd::Zero(k, d);
    for (long i = 0; i < n; ++i)
        for (long c = 0; c < k; ++c) {
            const double r = weights[i] * resp(i, c);
            if (r == 0.0) continue;
            for (long j = 0; j < d; ++j) {
                if (!data.observed(i, j)) continue;
                num(c, j) += r * data.values(i, j);
                den(c, j) += r;
            }
        }
    BernoulliParams params;
    params.pi.resize(k, d);
    for (long c = 0; c < k; ++c) {
        if ((den.row(c).array() == 0.0).all()) degenerate_class(c);
        for (long j = 0; j < d; ++j)
            params.pi(c, j) = den(c, j) != 0.0 ? clamp_prob(num(c, j) / den(c, j)) : 0.5;
    }
    return params;
}

CategoricalParams categorical_m_step(const BlockData& data, const Eigen::MatrixXd& resp,
                                     const Eigen::VectorXd& weights, int n_levels) {
    const long n = data.n(), d = data.dim(), k = resp.cols();
    if (n_levels < 1) throw ValidationError("categorical block: level count not resolved");
    CategoricalParams params;
    params.prob.assign(static_cast<std::size_t>(k), Eigen::MatrixXd::Zero(d, n_levels));
    Eigen::MatrixXd den = Eigen::MatrixXd::Zero(k, d);
    for (long i = 0; i < n; ++i)
        for (long c = 0; c < k; ++c) {
            const double r = weights[i] * resp(i, c);
            if (r == 0.0) continue;
            for (long j = 0; j < d; ++j) {
                if (!data.observed(i, j)) continue;
                const long level = static_cast<long>(data.values(i, j));
                if (level < 0 || level >= n_levels)
                    throw ValidationError("categorical level " + std::to_string(level) +
                                          " outside 0.." + std::to_string(n_levels - 1));
                params.prob[static_cast<std::size_t>(c)](j, level) += r;
                den(c, j) += r;
            }
        }
    for (long c = 0; c < k; ++c) {
        if ((den.row(c).array() == 0.0).all()) degenerate_class(c);
        for (long j = 0; j < d; ++j) {
            auto row = params.prob[static_cast<std::size_t>(c)].row(j);
            if (den(c, j) != 0.0) row /= den(c, j);
            else row.setConstant(1.0 / static_cast<double>(n_levels));
            // Clamp away exact zeros, then renormalize so rows sum to one.
            for (long l = 0; l < n_levels; ++l) row[l] = std::max(row[l], kProbEps);
            row /= row.sum();
        }
    }
    return params;
}

GaussianParams gaussian_m_step(Family family, const BlockData& data, const Eigen::MatrixXd& resp,
                               const Eigen::VectorXd& weights) {
    const long n = data.n(), d = data.dim(), k = resp.cols();
    GaussianParams params;
    params.family = family;
    params.mu = Eigen::MatrixXd::Zero(k, d);
    Eigen::MatrixXd den = Eigen::MatrixXd::Zero(k, d);
    for (long i = 0; i < n; ++i)
        for (long c = 0; c < k; ++c) {
            const double r = weights[i] * resp(i, c);
            if (r == 0.0) continue;
            for (long j = 0; j < d; ++j) {
                if (!data.observed(i, j)) continue;
                params.mu(c, j) += r * data.values(i, j);
                den(c, j) += r;
            }
        }
    for (long c = 0; c < k; ++c) {
        if ((den.row(c).array() == 0.0).all()) degenerate_class(c);
        for (long j = 0; j < d; ++j)
            params.mu(c, j) = den(c, j) != 0.0 ? params.mu(c, j) / den(c, j) : 0.0;
    }

    if (family == Family::gaussian_unit) return params;

    if (family == Family::gaussian_full) {
        params.cov.assign(static_cast<std::size_t>(k), Eigen::MatrixXd::Zero(d, d));
        Eigen::VectorXd mass = Eigen::VectorXd::Zero(k);
        for (long i = 0; i < n; ++i)
            for (long c = 0; c < k; ++c) {
                const double r = weights[i] * resp(i, c);
                if (r == 0.0) continue;
                Eigen::VectorXd centered = data.values.row(i).transpose() - params.mu.row(c).transpose();
                params.cov[static_cast<std::size_t>(c)].noalias() += r * centered * centered.transpose();
                mass[c] += r;
            }
        for (long c = 0; c < k; ++c) {
            Eigen::MatrixXd& cov = params.cov[static_cast<std::size_t>(c)];
            if (mass[c] <= 0.0) degenerate_class(c);
            cov /= mass[c];
            cov = 0.5 * (cov + cov.transpose()).eval();
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
            if (eig.eigenvalues().minCoeff() < kVarianceFloor) {
                Eigen::VectorXd floored = eig.eigenvalues().cwiseMax(kVarianceFloor);
                cov = eig.eigenvectors() * floored.asDiagonal() * eig.eigenvectors().transpose();
                cov = 0.5 * (cov + cov.transpose()).eval();
            }
        }
        return params;
    }

    // Per-dimension second central moments for diag; pooled over dimensions
    // for spherical.
    Eigen::MatrixXd ss = Eigen::MatrixXd::Zero(k, d);
    for (long i = 0; i < n; ++i)
        for (long c = 0; c < k; ++c) {
            const double r = weights[i] * resp(i, c);
            if (r == 0.0) continue;
            for (long j = 0; j < d; ++j) {
                if (!data.observed(i, j)) continue;
                const double diff = data.values(i, j) - params.mu(c, j);
                ss(c, j) += r * diff * diff;
            }
        }
    if (family == Family::gaussian_diag) {
        params.var_diag.resize(k, d);
        for (long c = 0; c < k; ++c)
            for (long j = 0; j < d; ++j)
                params.var_diag(c, j) =
                    den(c, j) != 0.0 ? std::max(ss(c, j) / den(c, j), kVarianceFloor) : 1.0;
    } else {
        params.var_scalar.resize(k);
        for (long c = 0; c < k; ++c) {
            const double total_den = den.row(c).sum();
            params.var_scalar[c] =
                total_den != 0.0 ? std::max(ss.row(c).sum() / total_den, kVarianceFloor) : 1.0;
        }
    }
    return params;
}

}  // namespace

double covariate_objective(const CovariateParams& params, const BlockData& z,
                           const Eigen::MatrixXd& resp, const Eigen::VectorXd& weights) {
    const long n = z.n(), k = params.beta.rows();
    Eigen::MatrixXd logits = z.values * params.beta.transpose();
    logits.rowwise() += params.b.transpose();
    double objective = 0.0;
    for (long i = 0; i < n; ++i) {
        const double lse = logsumexp(logits.row(i).transpose());
        double s = 0.0;
        for (long c = 0; c < k; ++c) s += resp(i, c) * (logits(i, c) - lse);
        objective += weights[i] * s;
    }
    return objective;
}

Eigen::MatrixXd covariate_gradient(const CovariateParams& params, const BlockData& z,
                                   const Eigen::MatrixXd& resp, const Eigen::VectorXd& weights) {
    const long n = z.n(), d = z.dim(), k = params.beta.rows();
    Eigen::MatrixXd logits = z.values * params.beta.transpose();
    logits.rowwise() += params.b.transpose();
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(k, d + 1);
    for (long i = 0; i < n; ++i) {
        const double lse = logsumexp(logits.row(i).transpose());
        for (long c = 0; c < k; ++c) {
            const double delta = weights[i] * (resp(i, c) - std::exp(logits(i, c) - lse));
            for (long j = 0; j < d; ++j) grad(c, j) += delta * z.values(i, j);
            grad(c, d) += delta;
        }
    }
    return grad;
}

CovariateParams covariate_m_step(const BlockData& z, const Eigen::MatrixXd& resp,
                                 const Eigen::VectorXd& weights, const SolverOptions& solver,
                                 const CovariateParams* warm,
                                 std::vector<double>* objective_trace) {
    const long n = z.n(), d = z.dim(), k = resp.cols();
    for (long c = 0; c < k; ++c) {
        double total = 0.0;
        for (long i = 0; i < n; ++i) total += weights[i] * resp(i, c);
        if (total <= 0.0) degenerate_class(c);
    }

    CovariateParams params;
    if (warm && warm->beta.rows() == k && warm->beta.cols() == d) {
        params = *warm;
    } else {
        params.beta = Eigen::MatrixXd::Zero(k, d);
        params.b = Eigen::VectorXd::Zero(k);
    }

    double objective = covariate_objective(params, z, resp, weights);
    if (!std::isfinite(objective))
        throw NumericalError("covariate solver: non-finite objective at warm start");
    if (objective_trace) objective_trace->push_back(objective);

    const long p = k * (d + 1);
    for (int iter = 0; iter < solver.max_iter; ++iter) {
        const Eigen::MatrixXd grad = covariate_gradient(params, z, resp, weights);
        const double grad_norm = grad.norm();
        if (grad_norm <= solver.tol) break;

        Eigen::MatrixXd direction;
        if (solver.method == SolverOptions::Method::newton) {
            // Negated Hessian of the expected complete-data log-likelihood in
            // the logits; independent of resp because responsibilities sum to
            // one per row, so the objective stays concave even with negative
            // (BCH-corrected) responsibilities.
            Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(p, p);
            Eigen::MatrixXd logits = z.values * params.beta.transpose();
            logits.rowwise() += params.b.transpose();
            Eigen::VectorXd xt(d + 1), prob(k);
            for (long i = 0; i < n; ++i) {
                const double lse = logsumexp(logits.row(i).transpose());
                for (long c = 0; c < k; ++c) prob[c] = std::exp(logits(i, c) - lse);
                for (long j = 0; j < d; ++j) xt[j] = z.values(i, j);
                xt[d] = 1.0;
                for (long c = 0; c < k; ++c)
                    for (long c2 = 0; c2 < k; ++c2) {
                        const double fisher =
                            prob[c] * ((c == c2 ? 1.0 : 0.0) - prob[c2]) * weights[i];
                        if (fisher == 0.0) continue;
                        const long row0 = c * (d + 1), col0 = c2 * (d + 1);
                        for (long a = 0; a <= d; ++a)
                            for (long b = 0; b <= d; ++b)
                                hess(row0 + a, col0 + b) += fisher * xt[a] * xt[b];
                    }
            }
            // hess is the negated Hessian (positive semidefinite); ridge makes
            // it invertible despite the softmax shift degeneracy.
            const double ridge = 1e-9 * std::max(1.0, hess.diagonal().maxCoeff());
            hess.diagonal().array() += ridge;
            Eigen::VectorXd g_flat(p);
            for (long c = 0; c < k; ++c) g_flat.segment(c * (d + 1), d + 1) = grad.row(c).transpose();
            Eigen::VectorXd step = hess.ldlt().solve(g_flat);
            direction.resize(k, d + 1);
            for (long c = 0; c < k; ++c) direction.row(c) = step.segment(c * (d + 1), d + 1).transpose();
        } else {
            direction = solver.step_size * grad;
        }

        // Backtracking keeps the objective from decreasing.
        double scale = 1.0;
        bool accepted = false;
        double improvement = 0.0;
        for (int bt = 0; bt < 40; ++bt) {
            CovariateParams trial;
            trial.beta = params.beta + scale * direction.leftCols(d);
            trial.b = params.b + scale * direction.col(d);
            const double trial_objective = covariate_objective(trial, z, resp, weights);
            if (!std::isfinite(trial_objective))
                throw NumericalError(
                    "covariate solver diverged (non-finite objective); try a smaller step size");
            if (trial_objective >= objective) {
                improvement = trial_objective - objective;
                params = std::move(trial);
                objective = trial_objective;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if (objective_trace) objective_trace->push_back(objective);
        if (!accepted) break;  // no uphill step available at this scale
        // At the numerical optimum further iterations cannot move the
        // objective; stop instead of burning the iteration budget.
        if (improvement <= 1e-14 * std::max(1.0, std::abs(objective))) break;
    }
    return params;
}

EmissionParams emission_m_step(Family family, const BlockData& data, const Eigen::MatrixXd& resp,
                               const Eigen::VectorXd& weights, int n_levels,
                               const SolverOptions& solver, const EmissionParams* warm,
                               std::vector<double>* objective_trace) {
    check_class_count(resp.cols(), "m_step");
    switch (family) {
        case Family::binary: return bernoulli_m_step(data, resp, weights);
        case Family::categorical: return categorical_m_step(data, resp, weights, n_levels);
        case Family::gaussian_unit:
        case Family::gaussian_spherical:
        case Family::gaussian_diag:
        case Family::gaussian_full:
            return gaussian_m_step(family, data, resp, weights);
        case Family::covariate: {
            const CovariateParams* warm_cov =
                warm ? std::get_if<CovariateParams>(warm) : nullptr;
            return covariate_m_step(data, resp, weights, solver, warm_cov, objective_trace);
        }
    }
    throw ValidationError("unknown family in m_step");
}

long emission_n_parameters(const EmissionParams& params) {
    if (const auto* p = std::get_if<BernoulliParams>(&params))
        return p->pi.rows() * p->pi.cols();
    if (const auto* p = std::get_if<CategoricalParams>(&params)) {
        const long k = static_cast<long>(p->prob.size());
        if (k == 0) return 0;
        return k * p->prob[0].rows() * (p->prob[0].cols() - 1);
    }
    if (const auto* p = std::get_if<CovariateParams>(&params))
        return (p->beta.rows() - 1) * (p->beta.cols() + 1);
    const auto& g = std::get<GaussianParams>(params);
    const long k = g.mu.rows(), d = g.mu.cols();
    switch (g.family) {
        case Family::gaussian_unit: return k * d;
        case Family::gaussian_spherical: return k * d + k;
        case Family::gaussian_diag: return 2 * k * d;
        case Family::gaussian_full: return k * d + k * d * (d + 1) / 2;
        default: break;
    }
    throw ValidationError("unknown gaussian structure");
}

Eigen::VectorXd emission_sample(const EmissionParams& params, int class_index, Rng& rng) {
    const int k = n_classes_of(params);
    if (class_index < 0 || class_index >= k)
        throw ValidationError("sample: class index out of range");

    if (const auto* p = std::get_if<BernoulliParams>(&params)) {
        Eigen::VectorXd out(p->pi.cols());
        for (long j = 0; j < out.size(); ++j)
            out[j] = uniform01(rng) < p->pi(class_index, j) ? 1.0 : 0.0;
        return out;
    }
    if (const auto* p = std::get_if<CategoricalParams>(&params)) {
        const auto& table = p->prob[static_cast<std::size_t>(class_index)];
        Eigen::VectorXd out(table.rows());
        for (long j = 0; j < out.size(); ++j)
            out[j] = static_cast<double>(categorical_draw(rng, table.row(j).transpose()));
        return out;
    }
    if (const auto* p = std::get_if<GaussianParams>(&params)) {
        const long d = p->mu.cols();
        Eigen::VectorXd noise(d);
        for (long j = 0; j < d; ++j) noise[j] = normal01(rng);
        Eigen::VectorXd out = p->mu.row(class_index).transpose();
        switch (p->family) {
            case Family::gaussian_unit: out += noise; break;
            case Family::gaussian_spherical:
                out += std::sqrt(p->var_scalar[class_index]) * noise;
                break;
            case Family::gaussian_diag:
                out += p->var_diag.row(class_index).array().sqrt().matrix().transpose().cwiseProduct(noise);
                break;
            case Family::gaussian_full: {
                Eigen::LLT<Eigen::MatrixXd> chol(p->cov[static_cast<std::size_t>(class_index)]);
                out += chol.matrixL() * noise;
                break;
            }
            default: break;
        }
        return out;
    }
    throw ValidationError("covariates are exogenous; their marginal distribution is not modeled, "
                          "so they cannot be sampled");
}

CovariateParams rebase_covariate(const CovariateParams& params, int reference_class) {
    if (reference_class < 0 || reference_class >= params.beta.rows())
        throw ValidationError("rebase: reference class out of range");
    CovariateParams out = params;
    const Eigen::RowVectorXd beta_ref = params.beta.row(reference_class);
    const double b_ref = params.b[reference_class];
    out.beta.rowwise() -= beta_ref;
    out.b.array() -= b_ref;
    return out;
}

}  // namespace stepfit
