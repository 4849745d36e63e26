#include "stepfit/em.hpp"

#include <cmath>

#include "stepfit/errors.hpp"
#include "stepfit/rng.hpp"

namespace stepfit {

void EmConfig::validate() const {
    if (max_iter < 1) throw ValidationError("em config: max_iter must be >= 1");
    if (n_init < 1) throw ValidationError("em config: n_init must be >= 1");
    if (abs_tol && *abs_tol < 0.0) throw ValidationError("em config: abs_tol must be >= 0");
    if (rel_tol && *rel_tol < 0.0) throw ValidationError("em config: rel_tol must be >= 0");
    if (!abs_tol && !rel_tol)
        throw ValidationError("em config: at least one convergence tolerance must be enabled");
}

namespace {

BlockData slice_block(const Dataset& data, const BlockSpec& spec) {
    BlockData block;
    block.values = data.values().middleCols(spec.col_begin, spec.width());
    block.observed = data.observed().middleCols(spec.col_begin, spec.width());
    return block;
}

int resolve_levels(const BlockData& block, const BlockSpec& spec) {
    if (spec.family != Family::categorical) return 0;
    long max_level = -1;
    for (long i = 0; i < block.n(); ++i)
        for (long j = 0; j < block.dim(); ++j) {
            if (!block.observed(i, j)) continue;
            const double v = block.values(i, j);
            if (v != std::floor(v) || v < 0.0)
                throw ValidationError("block '" + spec.name + "': categorical data must be " +
                                      "integer-encoded as 0..C-1, found " + std::to_string(v));
            max_level = std::max(max_level, static_cast<long>(v));
        }
    int levels = static_cast<int>(max_level + 1);
    if (spec.n_levels) {
        if (*spec.n_levels < levels)
            throw ValidationError("block '" + spec.name + "': data contains level " +
                                  std::to_string(levels - 1) + " but n_levels is " +
                                  std::to_string(*spec.n_levels));
        levels = *spec.n_levels;
    }
    if (levels < 1)
        throw ValidationError("block '" + spec.name + "': no observed categorical data");
    return levels;
}

void validate_block_data(const BlockData& block, const BlockSpec& spec) {
    for (long i = 0; i < block.n(); ++i)
        for (long j = 0; j < block.dim(); ++j) {
            if (!block.observed(i, j)) {
                if (!spec.fiml)
                    throw ValidationError("block '" + spec.name + "': missing value at row " +
                                          std::to_string(i + 1) +
                                          " but FIML is not enabled for this block");
                continue;
            }
            const double v = block.values(i, j);
            if (!std::isfinite(v))
                throw ValidationError("block '" + spec.name + "': non-finite value at row " +
                                      std::to_string(i + 1));
            if (spec.family == Family::binary && v != 0.0 && v != 1.0)
                throw ValidationError("block '" + spec.name + "': binary data must be 0/1, found " +
                                      std::to_string(v) + " at row " + std::to_string(i + 1));
        }
}

}  // namespace

std::vector<BlockData> prepare_blocks(const Dataset& data, const ModelDescriptor& desc,
                                      DescriptorRole role, std::vector<int>& levels_out) {
    validate_descriptor(desc, data, role);
    std::vector<BlockData> blocks;
    blocks.reserve(desc.blocks.size());
    for (const BlockSpec& spec : desc.blocks) {
        BlockData block = slice_block(data, spec);
        validate_block_data(block, spec);
        levels_out.push_back(resolve_levels(block, spec));
        blocks.push_back(std::move(block));
    }
    return blocks;
}

PreparedData prepare_data(const Dataset& mm, const ModelDescriptor& mm_desc, const Dataset* sm,
                          const ModelDescriptor* sm_desc) {
    PreparedData out;
    out.n = mm.n_rows();
    out.weights = mm.weights();
    out.total_weight = out.weights.sum();
    out.mm_desc = mm_desc;
    out.mm_blocks = prepare_blocks(mm, mm_desc, DescriptorRole::measurement, out.mm_levels);
    if (sm != nullptr) {
        if (sm_desc == nullptr) throw ValidationError("structural data given without a descriptor");
        if (sm->n_rows() != mm.n_rows())
            throw ValidationError("measurement and structural datasets must cover the same units (" +
                                  std::to_string(mm.n_rows()) + " vs " +
                                  std::to_string(sm->n_rows()) + " rows)");
        out.sm_desc = *sm_desc;
        out.sm_blocks = prepare_blocks(*sm, *sm_desc, DescriptorRole::structural, out.sm_levels);
        out.covariate_block = out.sm_desc.covariate_index();
    }
    if (out.n == 0) throw ValidationError("dataset has no rows");
    return out;
}

Eigen::MatrixXd log_prior_matrix(const MixtureModel& model, const PreparedData& data) {
    const int k = model.n_components;
    if (data.covariate_block >= 0) {
        const auto& params = std::get<CovariateParams>(
            model.structural[static_cast<std::size_t>(data.covariate_block)]);
        return covariate_log_prior(params, data.sm_blocks[static_cast<std::size_t>(data.covariate_block)]);
    }
    Eigen::RowVectorXd log_cw(k);
    for (int c = 0; c < k; ++c)
        log_cw[c] = model.class_weights[c] > 0.0 ? std::log(model.class_weights[c])
                                                 : -std::numeric_limits<double>::infinity();
    return log_cw.replicate(data.n, 1);
}

namespace {

Eigen::MatrixXd log_joint_matrix(const MixtureModel& model, const PreparedData& data) {
    Eigen::MatrixXd log_joint = log_prior_matrix(model, data);
    for (std::size_t b = 0; b < data.mm_blocks.size(); ++b)
        log_joint += emission_log_prob(model.measurement[b], data.mm_blocks[b]);
    for (std::size_t b = 0; b < data.sm_blocks.size(); ++b) {
        if (static_cast<int>(b) == data.covariate_block) continue;  // prior already included
        log_joint += emission_log_prob(model.structural[b], data.sm_blocks[b]);
    }
    return log_joint;
}

}  // namespace

Eigen::MatrixXd log_normalize_rows(const Eigen::MatrixXd& log_joint) {
    Eigen::MatrixXd tau(log_joint.rows(), log_joint.cols());
    for (long i = 0; i < log_joint.rows(); ++i) {
        const double lse = logsumexp(log_joint.row(i).transpose());
        if (!std::isfinite(lse))
            throw NumericalError("likelihood underflow: unit " + std::to_string(i + 1) +
                                 " has zero probability in every class");
        for (long c = 0; c < log_joint.cols(); ++c) tau(i, c) = std::exp(log_joint(i, c) - lse);
    }
    return tau;
}

EStepResult e_step(const MixtureModel& model, const PreparedData& data) {
    const Eigen::MatrixXd log_joint = log_joint_matrix(model, data);
    EStepResult out;
    out.tau.resize(log_joint.rows(), log_joint.cols());
    double weighted_ll = 0.0;
    for (long i = 0; i < log_joint.rows(); ++i) {
        const double lse = logsumexp(log_joint.row(i).transpose());
        if (!std::isfinite(lse))
            throw NumericalError("likelihood underflow: unit " + std::to_string(i + 1) +
                                 " has zero probability in every class");
        for (long c = 0; c < log_joint.cols(); ++c) out.tau(i, c) = std::exp(log_joint(i, c) - lse);
        weighted_ll += data.weights[i] * lse;
    }
    out.avg_ll = weighted_ll / data.total_weight;
    return out;
}

void m_step_full(MixtureModel& model, const PreparedData& data, const Eigen::MatrixXd& resp,
                 bool freeze_measurement) {
    const int k = model.n_components;
    if (resp.rows() != data.n || resp.cols() != k)
        throw ValidationError("m_step: responsibility shape mismatch");

    if (!freeze_measurement) {
        if (data.covariate_block < 0) {
            Eigen::VectorXd cw = Eigen::VectorXd::Zero(k);
            for (long i = 0; i < data.n; ++i) cw += data.weights[i] * resp.row(i).transpose();
            model.class_weights = cw / data.total_weight;
        }
        model.measurement.resize(data.mm_blocks.size());
        for (std::size_t b = 0; b < data.mm_blocks.size(); ++b) {
            const BlockSpec& spec = data.mm_desc.blocks[b];
            model.measurement[b] = emission_m_step(spec.family, data.mm_blocks[b], resp,
                                                   data.weights, data.mm_levels[b], spec.solver);
        }
    }
    if (!data.sm_blocks.empty()) {
        const bool has_warm = model.structural.size() == data.sm_blocks.size();
        std::vector<EmissionParams> updated(data.sm_blocks.size());
        for (std::size_t b = 0; b < data.sm_blocks.size(); ++b) {
            const BlockSpec& spec = data.sm_desc.blocks[b];
            const EmissionParams* warm = has_warm ? &model.structural[b] : nullptr;
            updated[b] = emission_m_step(spec.family, data.sm_blocks[b], resp, data.weights,
                                         data.sm_levels[b], spec.solver, warm);
        }
        model.structural = std::move(updated);
    }
}

namespace {

Eigen::MatrixXd dirichlet_responsibilities(long n, int k, Rng& rng) {
    Eigen::MatrixXd tau(n, k);
    for (long i = 0; i < n; ++i) {
        double total = 0.0;
        for (int c = 0; c < k; ++c) {
            double u = uniform01(rng);
            while (u <= 0.0) u = uniform01(rng);
            tau(i, c) = -std::log(u);  // Exp(1) draws normalize to Dirichlet(1)
            total += tau(i, c);
        }
        tau.row(i) /= total;
    }
    return tau;
}

struct SingleRun {
    MixtureModel model;
    bool converged = false;
};

SingleRun run_em(MixtureModel model, const PreparedData& data, const EmConfig& cfg,
                 bool randomize, bool freeze_measurement, std::uint64_t seed) {
    const int k = model.n_components;
    if (randomize) {
        Rng rng(seed);
        const Eigen::MatrixXd tau0 = dirichlet_responsibilities(data.n, k, rng);
        m_step_full(model, data, tau0, freeze_measurement);
    }

    SingleRun run;
    EStepResult e = e_step(model, data);
    model.fit_meta.ll_history.clear();
    model.fit_meta.ll_history.push_back(e.avg_ll);
    double prev_ll = e.avg_ll;
    int iter = 0;
    for (; iter < cfg.max_iter; ++iter) {
        m_step_full(model, data, e.tau, freeze_measurement);
        e = e_step(model, data);
        model.fit_meta.ll_history.push_back(e.avg_ll);
        const double gap = std::abs(e.avg_ll - prev_ll);
        const bool abs_ok = cfg.abs_tol && gap < *cfg.abs_tol;
        const bool rel_ok = cfg.rel_tol && gap < *cfg.rel_tol * std::abs(prev_ll);
        prev_ll = e.avg_ll;
        if (abs_ok || rel_ok) {
            run.converged = true;
            ++iter;
            break;
        }
    }
    model.fit_meta.avg_ll = prev_ll;
    model.fit_meta.n_iter = iter;
    model.fit_meta.seed = seed;
    model.fit_meta.converged = run.converged;
    run.model = std::move(model);
    return run;
}

}  // namespace

MixtureModel fit_em(const PreparedData& data, int n_components, const EmConfig& cfg,
                    const MixtureModel* init, bool freeze_measurement) {
    cfg.validate();
    if (n_components < 1) throw ValidationError("fit: n_components must be >= 1");
    if (freeze_measurement && init == nullptr)
        throw ValidationError("fit: freeze_measurement requires an initial model");

    MixtureModel skeleton;
    if (init != nullptr) {
        if (init->n_components != n_components)
            throw ValidationError("fit: initial model has a different number of classes");
        if (init->measurement.size() != data.mm_blocks.size())
            throw ValidationError("fit: initial model does not match the measurement descriptor");
        skeleton = *init;
        skeleton.measurement_desc = data.mm_desc;
        skeleton.structural_desc = data.sm_desc;
        if (freeze_measurement) {
            // Keep a matching structural part as a warm start; otherwise it is
            // randomized per initialization below.
            if (skeleton.structural.size() != data.sm_blocks.size()) skeleton.structural.clear();
        } else if (skeleton.structural.size() != data.sm_blocks.size()) {
            throw ValidationError("fit: initial model does not match the structural descriptor");
        }
    } else {
        skeleton.n_components = n_components;
        skeleton.class_weights =
            Eigen::VectorXd::Constant(n_components, 1.0 / static_cast<double>(n_components));
        skeleton.measurement_desc = data.mm_desc;
        skeleton.structural_desc = data.sm_desc;
    }
    skeleton.fit_meta = FitMeta{};

    // A warm start without randomization is a single deterministic run.
    const bool randomize =
        init == nullptr || (freeze_measurement && skeleton.structural.empty() &&
                            !data.sm_blocks.empty());
    const int n_init = randomize ? cfg.n_init : 1;

    std::optional<SingleRun> best;
    int best_index = 0;
    std::vector<std::string> failures;
    for (int j = 0; j < n_init; ++j) {
        const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(j);
        try {
            SingleRun run = run_em(skeleton, data, cfg, randomize, freeze_measurement, seed);
            if (!best || run.model.fit_meta.avg_ll > best->model.fit_meta.avg_ll) {
                run.model.fit_meta.init_index = j;
                best = std::move(run);
                best_index = j;
            }
        } catch (const NumericalError& e) {
            failures.push_back("init " + std::to_string(j) + ": " + e.what());
        }
    }
    if (!best) {
        std::string message = "all " + std::to_string(n_init) + " initializations failed:";
        for (const std::string& f : failures) message += "\n  " + f;
        throw NumericalError(message);
    }
    best->model.fit_meta.init_index = best_index;
    return std::move(best->model);
}

}  // namespace stepfit
