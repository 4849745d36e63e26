// Independent reference computations used to freeze expected test values.
// Everything here works in the plain probability domain with direct
// enumeration, deliberately avoiding the library's log-domain code paths.
#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

namespace stepfit::oracle {

/// All binary patterns of the given width, most-significant bit first.
inline std::vector<Eigen::VectorXd> enumerate_binary(int width) {
    std::vector<Eigen::VectorXd> out;
    const int count = 1 << width;
    for (int pattern = 0; pattern < count; ++pattern) {
        Eigen::VectorXd row(width);
        for (int j = 0; j < width; ++j) row[j] = (pattern >> (width - 1 - j)) & 1;
        out.push_back(row);
    }
    return out;
}

/// All categorical patterns with the same number of levels per dimension.
inline std::vector<Eigen::VectorXd> enumerate_categorical(int width, int levels) {
    std::vector<Eigen::VectorXd> out;
    long count = 1;
    for (int j = 0; j < width; ++j) count *= levels;
    for (long pattern = 0; pattern < count; ++pattern) {
        Eigen::VectorXd row(width);
        long rest = pattern;
        for (int j = width - 1; j >= 0; --j) {
            row[j] = static_cast<double>(rest % levels);
            rest /= levels;
        }
        out.push_back(row);
    }
    return out;
}

/// Plain-domain Bernoulli pmf of one pattern under one class.
inline double bernoulli_pmf(const Eigen::RowVectorXd& pi, const Eigen::VectorXd& y) {
    double p = 1.0;
    for (long j = 0; j < y.size(); ++j) p *= y[j] != 0.0 ? pi[j] : 1.0 - pi[j];
    return p;
}

inline double categorical_pmf(const Eigen::MatrixXd& table, const Eigen::VectorXd& y) {
    double p = 1.0;
    for (long j = 0; j < y.size(); ++j) p *= table(j, static_cast<long>(y[j]));
    return p;
}

/// Bayes-rule posterior and per-unit likelihood for a binary mixture,
/// computed by direct summation.
struct BayesResult {
    Eigen::MatrixXd posterior;
    Eigen::VectorXd likelihood;  // p(y_i)
};

inline BayesResult bernoulli_bayes(const Eigen::VectorXd& class_weights, const Eigen::MatrixXd& pi,
                                   const Eigen::MatrixXd& data) {
    const long n = data.rows(), k = pi.rows();
    BayesResult out;
    out.posterior.resize(n, k);
    out.likelihood.resize(n);
    for (long i = 0; i < n; ++i) {
        double total = 0.0;
        for (long c = 0; c < k; ++c) {
            const double joint = class_weights[c] * bernoulli_pmf(pi.row(c), data.row(i).transpose());
            out.posterior(i, c) = joint;
            total += joint;
        }
        out.likelihood[i] = total;
        out.posterior.row(i) /= total;
    }
    return out;
}

/// Central finite difference of a scalar function of a matrix argument.
template <typename F>
Eigen::MatrixXd finite_difference(const F& f, Eigen::MatrixXd at, double h = 1e-5) {
    Eigen::MatrixXd grad(at.rows(), at.cols());
    for (long i = 0; i < at.rows(); ++i)
        for (long j = 0; j < at.cols(); ++j) {
            const double saved = at(i, j);
            at(i, j) = saved + h;
            const double up = f(at);
            at(i, j) = saved - h;
            const double down = f(at);
            at(i, j) = saved;
            grad(i, j) = (up - down) / (2.0 * h);
        }
    return grad;
}

}  // namespace stepfit::oracle
