#pragma once

#include <optional>

#include "stepfit/em.hpp"

namespace stepfit {

enum class Assignment { soft, modal };
enum class Correction { none, bch, ml };

std::string assignment_name(Assignment a);
std::string correction_name(Correction c);
Assignment assignment_from_name(const std::string& name);
Correction correction_from_name(const std::string& name);

struct StepwiseConfig {
    int n_steps = 1;  // 1, 2 or 3
    Assignment assignment = Assignment::modal;   // three-step only
    Correction correction = Correction::none;    // three-step only
    EmConfig em;

    void validate() const;
    std::string method_label() const;
};

/// Imputed class weights from the second step of the three-step method. Rows
/// sum to 1; entries may be negative once the BCH correction has been applied.
struct ImputedWeights {
    Eigen::MatrixXd w;  // N x K
    bool corrected = false;
};

/// Estimated misclassification probabilities D(c, k) = p(assigned k | true c).
/// Rows sum to 1.
struct ConfusionMatrix {
    Eigen::MatrixXd d;
};

// --- full pipelines --------------------------------------------------------

/// One-step: EM on the complete model. `sm` may be null for a pure
/// measurement-model fit.
MixtureModel fit_one_step(const Dataset& mm, const ModelDescriptor& mm_desc, const Dataset* sm,
                          const ModelDescriptor* sm_desc, int n_components, const EmConfig& cfg);

/// Two-step with possibly distinct samples: the measurement model is fit on
/// `mm1`; the structural parameters are then fit on (`mm2`, `sm2`) with the
/// measurement parameters held fixed.
MixtureModel fit_two_step(const Dataset& mm1, const Dataset& mm2, const Dataset& sm2,
                          const ModelDescriptor& mm_desc, const ModelDescriptor& sm_desc,
                          int n_components, const EmConfig& cfg);

/// Three-step: measurement fit on `mm1`, class assignment (and optional
/// BCH/ML correction) on `mm2`, structural estimation on `sm2`.
MixtureModel fit_three_step(const Dataset& mm1, const Dataset& mm2, const Dataset& sm2,
                            const ModelDescriptor& mm_desc, const ModelDescriptor& sm_desc,
                            int n_components, const EmConfig& cfg, Assignment assignment,
                            Correction correction);

/// Dispatch on cfg.n_steps with a shared sample (N1 == N2).
MixtureModel fit_stepwise(const Dataset& mm, const Dataset* sm, const ModelDescriptor& mm_desc,
                          const ModelDescriptor* sm_desc, int n_components,
                          const StepwiseConfig& cfg);

// --- composable steps ------------------------------------------------------

/// Step 1 of the multi-step methods: plain EM on the measurement model.
MixtureModel fit_measurement(const Dataset& mm, const ModelDescriptor& mm_desc, int n_components,
                             const EmConfig& cfg);

/// Step 2 of the two-step method, starting from a fitted measurement model.
MixtureModel two_step_from(const MixtureModel& mm_fit, const Dataset& mm2, const Dataset& sm2,
                           const ModelDescriptor& sm_desc, const EmConfig& cfg);

/// Imputed class weights: soft posteriors of the measurement model, or their
/// one-hot modal assignment (ties to the lowest class index).
ImputedWeights compute_assignments(const MixtureModel& mm_fit, const Dataset& mm,
                                   Assignment assignment);

/// Empirical misclassification matrix for uncorrected weights, with sample
/// weights folded into both sums and rows renormalized to 1.
ConfusionMatrix compute_confusion(const MixtureModel& mm_fit, const Dataset& mm,
                                  const ImputedWeights& weights);

/// BCH correction: each weight row is multiplied by D^-1. Row sums stay 1.
/// Fails when D is near-singular (1-norm condition estimate above 1e12).
ImputedWeights bch_adjust(const ImputedWeights& weights, const ConfusionMatrix& confusion);

/// Step 3: structural parameters from imputed class weights. none/bch run a
/// single M-step with the weights as fixed responsibilities; ml runs EM on
/// the structural model with responsibilities proportional to
/// (w D^T)_ك * prior_k * p(z^o | k), warm-started at the naive solution.
/// `class_weights` supplies the latent prior when the structural descriptor
/// has no covariate block.
std::vector<EmissionParams> third_step(const Dataset& sm2, const ModelDescriptor& sm_desc,
                                       const ImputedWeights& weights,
                                       const ConfusionMatrix* confusion, Correction correction,
                                       const Eigen::VectorXd& class_weights, const EmConfig& cfg,
                                       FitMeta* meta = nullptr);

/// Composes steps 2 and 3 on top of an existing measurement fit.
MixtureModel three_step_from(const MixtureModel& mm_fit, const Dataset& mm2, const Dataset& sm2,
                             const ModelDescriptor& sm_desc, const EmConfig& cfg,
                             Assignment assignment, Correction correction);

}  // namespace stepfit
