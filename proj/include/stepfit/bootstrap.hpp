#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stepfit/stepwise.hpp"

namespace stepfit {

/// One long-form bootstrap record: the value of a single scalar parameter in
/// one repetition, after class alignment with the main model.
struct BootstrapSample {
    int rep = 0;
    std::string module;  // "mm", "sm" or "cw"
    std::string block;
    std::string param;   // "pi", "p", "mu", "var", "cov", "beta", "b", "w"
    int cls = 0;
    int dim = 0;
    double value = 0.0;
};

struct AggregatedStat {
    std::string module;
    std::string block;
    std::string param;
    int cls = 0;
    int dim = 0;
    double mean = 0.0;
    double std = 0.0;  // n-1 denominator
};

struct BootstrapResult {
    std::vector<BootstrapSample> samples;
    std::vector<AggregatedStat> mm_stats;
    std::vector<AggregatedStat> sm_stats;
    std::vector<AggregatedStat> cw_stats;
    int n_repetitions = 0;
    int n_failed = 0;

    /// Bootstrap draws of one parameter in repetition order.
    std::vector<double> draws(const std::string& module, const std::string& block,
                              const std::string& param, int cls, int dim) const;
};

/// Resampler hook: returns the row indices of repetition `rep`. The default
/// draws n indices uniformly with replacement.
using Resampler = std::function<std::vector<int>(Rng&, long n, int rep)>;

/// Nonparametric bootstrap of a stepwise estimator. Each repetition resamples
/// the units (carrying their sample weights), refits with seed base_seed + rep,
/// aligns the classes to the main model by posterior agreement and records
/// every parameter. Failed repetitions are dropped; more than 20% failures is
/// an error.
BootstrapResult bootstrap_stats(const MixtureModel& main_model, const Dataset& mm,
                                const Dataset* sm, const StepwiseConfig& cfg, int n_repetitions,
                                std::uint64_t seed, int jobs = 1,
                                const Resampler& resampler = nullptr);

/// Permutation sigma maximizing sum_i w_i sum_k main(i,k) * boot(i, sigma(k)).
/// Exact enumeration for K <= 8, greedy row-max assignment otherwise.
std::vector<int> align_classes(const Eigen::MatrixXd& main_resp, const Eigen::MatrixXd& boot_resp,
                               const Eigen::VectorXd& weights);

/// Relabels classes: the returned model's class c holds what was class
/// perm[c] in the input.
MixtureModel permute_classes(const MixtureModel& model, const std::vector<int>& perm);

/// Flattens a model's parameters into long-form records (rep left at 0).
std::vector<BootstrapSample> flatten_parameters(const MixtureModel& model);

}  // namespace stepfit
