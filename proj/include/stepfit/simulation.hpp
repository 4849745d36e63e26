#pragma once

#include <map>
#include <string>
#include <vector>

#include "stepfit/bootstrap.hpp"
#include "stepfit/stepwise.hpp"

namespace stepfit {

enum class StudyKind { response, covariate, complete };

std::string study_kind_name(StudyKind kind);
StudyKind study_kind_from_name(const std::string& name);

/// Synthetic designs: three equally likely latent classes measured by six
/// binary indicators whose association strength is the separation parameter.
/// The response design adds a unit-variance Gaussian outcome with means
/// (-1, 1, 0); the covariate design instead draws the class from a
/// multinomial logit on a uniform integer covariate in 1..5; the complete
/// design combines both and masks indicator and outcome cells completely at
/// random.
struct BakkDesign {
    StudyKind kind = StudyKind::response;
    long n = 500;
    double separation = 0.8;      // 0.7 / 0.8 / 0.9 in the original studies
    double missing_ratio = 0.0;   // complete design only
    std::uint64_t seed = 0;

    void validate() const;
};

struct SimulatedData {
    Dataset mm;
    Dataset sm;
    std::vector<int> true_classes;
};

SimulatedData generate(const BakkDesign& design);

/// True generating parameters of the designs.
Eigen::MatrixXd bakk_pi(double separation);       // 3 x 6 class-conditional probabilities
Eigen::VectorXd bakk_outcome_means();             // (-1, 1, 0)
Eigen::VectorXd bakk_beta();                      // (0, -1, 1)
Eigen::VectorXd bakk_intercepts();                // (0, 2.35, -3.66)

/// Descriptors used to estimate each design.
ModelDescriptor bakk_mm_descriptor(StudyKind kind);
ModelDescriptor bakk_sm_descriptor(StudyKind kind);

enum class Estimator { one_step, two_step, three_step_naive, three_step_bch, three_step_ml };

std::string estimator_name(Estimator e);
Estimator estimator_from_name(const std::string& name);

struct StudyCell {
    double bias = 0.0;
    double rmse = 0.0;
    int n_used = 0;
    int n_failed = 0;
};

struct StudyResult {
    StudyKind kind = StudyKind::response;
    std::vector<long> ns;
    std::vector<double> axis;  // separations, or missing ratios for the complete design
    int replications = 0;
    // Key: (n index, axis index, estimator).
    std::map<std::tuple<int, int, Estimator>, StudyCell> cells;

    const StudyCell& cell(int n_index, int axis_index, Estimator estimator) const;
    std::string to_csv() const;
};

/// Replication study over the requested grid. Dataset seeds depend on the
/// replication and sample size but not on the axis value or the estimator
/// (common random numbers), and three-step estimators always use modal
/// assignment. The tracked parameter is the second-class outcome mean
/// (response/complete, truth 1) or the third-class covariate slope rebased on
/// the first class (covariate, truth 1), after aligning classes to the
/// generating truth.
StudyResult run_study(StudyKind kind, const std::vector<long>& ns, const std::vector<double>& axis,
                      int replications, const std::vector<Estimator>& estimators,
                      std::uint64_t base_seed, const EmConfig& em, int jobs = 1);

/// Tracked-parameter extraction shared by run_study and the tests: aligns the
/// fitted model to the true classes and reads the parameter described above.
double extract_tracked_parameter(const MixtureModel& model, const SimulatedData& data,
                                 StudyKind kind);

double tracked_parameter_truth(StudyKind kind);

}  // namespace stepfit
