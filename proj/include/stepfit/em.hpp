#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stepfit/dataset.hpp"
#include "stepfit/descriptor.hpp"
#include "stepfit/emission.hpp"

namespace stepfit {

struct EmConfig {
    int max_iter = 1000;
    std::optional<double> abs_tol = 1e-10;  // gap between successive average log-likelihoods
    std::optional<double> rel_tol;          // relative gap; disabled by default
    int n_init = 1;
    std::uint64_t seed = 0;

    void validate() const;
};

struct FitMeta {
    double avg_ll = 0.0;
    int n_iter = 0;
    int init_index = 0;
    std::uint64_t seed = 0;
    bool converged = false;
    std::vector<double> ll_history;  // average LL after each E-step
};

/// A fitted (or initialized) mixture model: class weights, measurement blocks
/// and optional structural blocks, each paired with its descriptor. When the
/// structural descriptor contains a covariate block, the class weights are not
/// part of the likelihood (the covariate model supplies the latent prior).
struct MixtureModel {
    int n_components = 0;
    Eigen::VectorXd class_weights;
    ModelDescriptor measurement_desc;
    std::vector<EmissionParams> measurement;
    ModelDescriptor structural_desc;  // empty when the model has no structural part
    std::vector<EmissionParams> structural;
    FitMeta fit_meta;
    std::string method = "em";  // estimation route, for reporting

    bool has_structural() const { return !structural_desc.blocks.empty(); }
    bool has_covariate() const { return structural_desc.has_covariate(); }
};

/// Column slices, masks and weights prepared once per fit. Validates data
/// against the descriptors (value ranges, missingness vs. FIML flags) and
/// resolves categorical level counts.
struct PreparedData {
    long n = 0;
    Eigen::VectorXd weights;
    double total_weight = 0.0;
    std::vector<BlockData> mm_blocks;
    std::vector<BlockData> sm_blocks;
    std::vector<int> mm_levels;  // resolved categorical C per block (0 otherwise)
    std::vector<int> sm_levels;
    ModelDescriptor mm_desc;
    ModelDescriptor sm_desc;
    int covariate_block = -1;  // index into sm_blocks, -1 when absent
};

PreparedData prepare_data(const Dataset& mm, const ModelDescriptor& mm_desc, const Dataset* sm,
                          const ModelDescriptor* sm_desc);

/// Validates one dataset against a descriptor and slices it into blocks.
/// levels_out receives the resolved categorical level count per block.
std::vector<BlockData> prepare_blocks(const Dataset& data, const ModelDescriptor& desc,
                                      DescriptorRole role, std::vector<int>& levels_out);

struct EStepResult {
    Eigen::MatrixXd tau;  // N x K responsibilities, rows sum to 1
    double avg_ll = 0.0;  // weighted average log-likelihood
};

/// Posterior responsibilities and the weighted average log-likelihood of the
/// complete model over the prepared data.
EStepResult e_step(const MixtureModel& model, const PreparedData& data);

/// N x K matrix of log prior terms: log class weights broadcast per row, or
/// the covariate log-softmax when a covariate block is present.
Eigen::MatrixXd log_prior_matrix(const MixtureModel& model, const PreparedData& data);

/// Updates every parameter group from the responsibilities. With
/// freeze_measurement, class weights and measurement blocks keep their
/// incumbent values and only structural blocks are refit.
void m_step_full(MixtureModel& model, const PreparedData& data, const Eigen::MatrixXd& resp,
                 bool freeze_measurement = false);

/// Multi-start EM. Each of cfg.n_init runs draws Dirichlet(1) responsibility
/// rows with seed cfg.seed + j and keeps the run with the highest final
/// average log-likelihood (ties to the lowest init index). When `init` is
/// given without freeze_measurement the fit warm-starts from it instead of
/// randomizing; with freeze_measurement the init supplies the fixed
/// measurement part and each run randomizes only the structural start.
MixtureModel fit_em(const PreparedData& data, int n_components, const EmConfig& cfg,
                    const MixtureModel* init = nullptr, bool freeze_measurement = false);

/// Row-wise softmax of a matrix of log-probabilities. Exposed for tests.
Eigen::MatrixXd log_normalize_rows(const Eigen::MatrixXd& log_joint);

}  // namespace stepfit
