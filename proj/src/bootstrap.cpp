#include "stepfit/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "stepfit/errors.hpp"
#include "stepfit/inference.hpp"
#include "stepfit/parallel.hpp"

namespace stepfit {

std::vector<int> align_classes(const Eigen::MatrixXd& main_resp, const Eigen::MatrixXd& boot_resp,
                               const Eigen::VectorXd& weights) {
    if (main_resp.rows() != boot_resp.rows() || main_resp.cols() != boot_resp.cols())
        throw ValidationError("align_classes: responsibility shapes differ");
    const int k = static_cast<int>(main_resp.cols());

    // Cross-agreement matrix M(a, b) = sum_i w_i main(i, a) boot(i, b).
    Eigen::MatrixXd agreement = main_resp.transpose() * weights.asDiagonal() * boot_resp;

    std::vector<int> best(static_cast<std::size_t>(k));
    if (k <= 8) {
        std::vector<int> perm(static_cast<std::size_t>(k));
        std::iota(perm.begin(), perm.end(), 0);
        double best_score = -std::numeric_limits<double>::infinity();
        do {
            double score = 0.0;
            for (int a = 0; a < k; ++a) score += agreement(a, perm[static_cast<std::size_t>(a)]);
            if (score > best_score) {
                best_score = score;
                best = perm;
            }
        } while (std::next_permutation(perm.begin(), perm.end()));
        return best;
    }

    // Greedy: repeatedly take the largest remaining agreement entry.
    std::vector<bool> row_used(static_cast<std::size_t>(k), false);
    std::vector<bool> col_used(static_cast<std::size_t>(k), false);
    for (int step = 0; step < k; ++step) {
        int best_a = -1, best_b = -1;
        double best_value = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < k; ++a) {
            if (row_used[static_cast<std::size_t>(a)]) continue;
            for (int b = 0; b < k; ++b) {
                if (col_used[static_cast<std::size_t>(b)]) continue;
                if (agreement(a, b) > best_value) {
                    best_value = agreement(a, b);
                    best_a = a;
                    best_b = b;
                }
            }
        }
        best[static_cast<std::size_t>(best_a)] = best_b;
        row_used[static_cast<std::size_t>(best_a)] = true;
        col_used[static_cast<std::size_t>(best_b)] = true;
    }
    return best;
}

MixtureModel permute_classes(const MixtureModel& model, const std::vector<int>& perm) {
    const int k = model.n_components;
    if (static_cast<int>(perm.size()) != k)
        throw ValidationError("permute_classes: permutation size mismatch");
    MixtureModel out = model;
    for (int c = 0; c < k; ++c) out.class_weights[c] = model.class_weights[perm[static_cast<std::size_t>(c)]];

    auto permute_params = [&](const EmissionParams& params) -> EmissionParams {
        if (const auto* p = std::get_if<BernoulliParams>(&params)) {
            BernoulliParams q = *p;
            for (int c = 0; c < k; ++c) q.pi.row(c) = p->pi.row(perm[static_cast<std::size_t>(c)]);
            return q;
        }
        if (const auto* p = std::get_if<CategoricalParams>(&params)) {
            CategoricalParams q = *p;
            for (int c = 0; c < k; ++c)
                q.prob[static_cast<std::size_t>(c)] = p->prob[static_cast<std::size_t>(perm[static_cast<std::size_t>(c)])];
            return q;
        }
        if (const auto* p = std::get_if<CovariateParams>(&params)) {
            CovariateParams q = *p;
            for (int c = 0; c < k; ++c) {
                q.beta.row(c) = p->beta.row(perm[static_cast<std::size_t>(c)]);
                q.b[c] = p->b[perm[static_cast<std::size_t>(c)]];
            }
            return q;
        }
        const auto& g = std::get<GaussianParams>(params);
        GaussianParams q = g;
        for (int c = 0; c < k; ++c) {
            const int src = perm[static_cast<std::size_t>(c)];
            q.mu.row(c) = g.mu.row(src);
            if (g.family == Family::gaussian_spherical) q.var_scalar[c] = g.var_scalar[src];
            if (g.family == Family::gaussian_diag) q.var_diag.row(c) = g.var_diag.row(src);
            if (g.family == Family::gaussian_full)
                q.cov[static_cast<std::size_t>(c)] = g.cov[static_cast<std::size_t>(src)];
        }
        return q;
    };

    for (std::size_t b = 0; b < out.measurement.size(); ++b)
        out.measurement[b] = permute_params(model.measurement[b]);
    for (std::size_t b = 0; b < out.structural.size(); ++b)
        out.structural[b] = permute_params(model.structural[b]);
    return out;
}

namespace {

void flatten_block(const std::string& module, const std::string& block_name,
                   const EmissionParams& params, std::vector<BootstrapSample>& out) {
    auto push = [&](const std::string& param, int cls, int dim, double value) {
        out.push_back(BootstrapSample{0, module, block_name, param, cls, dim, value});
    };
    if (const auto* p = std::get_if<BernoulliParams>(&params)) {
        for (long c = 0; c < p->pi.rows(); ++c)
            for (long j = 0; j < p->pi.cols(); ++j)
                push("pi", static_cast<int>(c), static_cast<int>(j), p->pi(c, j));
        return;
    }
    if (const auto* p = std::get_if<CategoricalParams>(&params)) {
        const long n_levels = p->prob.empty() ? 0 : p->prob[0].cols();
        for (std::size_t c = 0; c < p->prob.size(); ++c)
            for (long j = 0; j < p->prob[c].rows(); ++j)
                for (long l = 0; l < n_levels; ++l)
                    push("p", static_cast<int>(c), static_cast<int>(j * n_levels + l),
                         p->prob[c](j, l));
        return;
    }
    if (const auto* p = std::get_if<CovariateParams>(&params)) {
        for (long c = 0; c < p->beta.rows(); ++c) {
            for (long j = 0; j < p->beta.cols(); ++j)
                push("beta", static_cast<int>(c), static_cast<int>(j), p->beta(c, j));
            push("b", static_cast<int>(c), 0, p->b[c]);
        }
        return;
    }
    const auto& g = std::get<GaussianParams>(params);
    const long d = g.mu.cols();
    for (long c = 0; c < g.mu.rows(); ++c) {
        for (long j = 0; j < d; ++j) push("mu", static_cast<int>(c), static_cast<int>(j), g.mu(c, j));
        if (g.family == Family::gaussian_spherical) push("var", static_cast<int>(c), 0, g.var_scalar[c]);
        if (g.family == Family::gaussian_diag)
            for (long j = 0; j < d; ++j)
                push("var", static_cast<int>(c), static_cast<int>(j), g.var_diag(c, j));
        if (g.family == Family::gaussian_full)
            for (long j = 0; j < d; ++j)
                for (long j2 = 0; j2 < d; ++j2)
                    push("cov", static_cast<int>(c), static_cast<int>(j * d + j2),
                         g.cov[static_cast<std::size_t>(c)](j, j2));
    }
}

}  // namespace

std::vector<BootstrapSample> flatten_parameters(const MixtureModel& model) {
    std::vector<BootstrapSample> out;
    for (int c = 0; c < model.n_components; ++c)
        out.push_back(BootstrapSample{0, "cw", "class_weights", "w", c, 0, model.class_weights[c]});
    for (std::size_t b = 0; b < model.measurement.size(); ++b)
        flatten_block("mm", model.measurement_desc.blocks[b].name, model.measurement[b], out);
    for (std::size_t b = 0; b < model.structural.size(); ++b)
        flatten_block("sm", model.structural_desc.blocks[b].name, model.structural[b], out);
    return out;
}

std::vector<double> BootstrapResult::draws(const std::string& module, const std::string& block,
                                           const std::string& param, int cls, int dim) const {
    std::vector<double> out;
    for (const BootstrapSample& s : samples)
        if (s.module == module && s.block == block && s.param == param && s.cls == cls &&
            s.dim == dim)
            out.push_back(s.value);
    return out;
}

BootstrapResult bootstrap_stats(const MixtureModel& main_model, const Dataset& mm,
                                const Dataset* sm, const StepwiseConfig& cfg, int n_repetitions,
                                std::uint64_t seed, int jobs, const Resampler& resampler) {
    if (n_repetitions < 2)
        throw ValidationError("bootstrap: at least two repetitions are required");
    cfg.validate();

    // Main-model responsibilities on the full sample, reused (row-subset) for
    // the alignment of every repetition.
    const Eigen::MatrixXd main_resp = predict_proba(main_model, mm, sm);
    const long n = mm.n_rows();

    struct RepResult {
        bool ok = false;
        std::string error;
        std::vector<BootstrapSample> params;
    };
    std::vector<RepResult> reps(static_cast<std::size_t>(n_repetitions));

    parallel_for(n_repetitions, jobs, [&](int rep) {
        RepResult& out = reps[static_cast<std::size_t>(rep)];
        try {
            std::vector<int> indices;
            Rng resample_rng(mix_seed(seed, 0x5e5a317eULL, static_cast<std::uint64_t>(rep)));
            if (resampler) {
                indices = resampler(resample_rng, n, rep);
            } else {
                indices.resize(static_cast<std::size_t>(n));
                for (long i = 0; i < n; ++i)
                    indices[static_cast<std::size_t>(i)] =
                        static_cast<int>(resample_rng() % static_cast<std::uint64_t>(n));
            }
            const Dataset mm_rep = mm.take_rows(indices);
            Dataset sm_rep;
            if (sm != nullptr) sm_rep = sm->take_rows(indices);

            StepwiseConfig rep_cfg = cfg;
            rep_cfg.em.seed = seed + static_cast<std::uint64_t>(rep);
            MixtureModel fitted =
                fit_stepwise(mm_rep, sm != nullptr ? &sm_rep : nullptr, main_model.measurement_desc,
                             main_model.has_structural() ? &main_model.structural_desc : nullptr,
                             main_model.n_components, rep_cfg);

            // Align to the main model on the resampled units.
            Eigen::MatrixXd main_rep_resp(mm_rep.n_rows(), main_resp.cols());
            for (long i = 0; i < mm_rep.n_rows(); ++i)
                main_rep_resp.row(i) = main_resp.row(indices[static_cast<std::size_t>(i)]);
            const Eigen::MatrixXd boot_resp =
                predict_proba(fitted, mm_rep, sm != nullptr ? &sm_rep : nullptr);
            const std::vector<int> perm =
                align_classes(main_rep_resp, boot_resp, mm_rep.weights());
            const MixtureModel aligned = permute_classes(fitted, perm);

            out.params = flatten_parameters(aligned);
            for (BootstrapSample& s : out.params) s.rep = rep;
            out.ok = true;
        } catch (const Error& e) {
            out.error = e.what();
        }
    });

    BootstrapResult result;
    result.n_repetitions = n_repetitions;
    for (const RepResult& rep : reps) {
        if (!rep.ok) {
            ++result.n_failed;
            continue;
        }
        result.samples.insert(result.samples.end(), rep.params.begin(), rep.params.end());
    }
    if (result.n_failed * 5 > n_repetitions)
        throw NumericalError("bootstrap: " + std::to_string(result.n_failed) + " of " +
                             std::to_string(n_repetitions) + " repetitions failed (over 20%)");

    // Aggregate mean and standard deviation per parameter path.
    struct Key {
        std::string module, block, param;
        int cls, dim;
        bool operator<(const Key& other) const {
            return std::tie(module, block, param, cls, dim) <
                   std::tie(other.module, other.block, other.param, other.cls, other.dim);
        }
    };
    std::map<Key, std::vector<double>> grouped;
    for (const BootstrapSample& s : result.samples)
        grouped[Key{s.module, s.block, s.param, s.cls, s.dim}].push_back(s.value);
    for (const auto& [key, values] : grouped) {
        AggregatedStat stat;
        stat.module = key.module;
        stat.block = key.block;
        stat.param = key.param;
        stat.cls = key.cls;
        stat.dim = key.dim;
        const double count = static_cast<double>(values.size());
        for (double v : values) stat.mean += v;
        stat.mean /= count;
        double ss = 0.0;
        for (double v : values) ss += (v - stat.mean) * (v - stat.mean);
        stat.std = values.size() > 1 ? std::sqrt(ss / (count - 1.0)) : 0.0;
        if (key.module == "mm") result.mm_stats.push_back(stat);
        else if (key.module == "sm") result.sm_stats.push_back(stat);
        else result.cw_stats.push_back(stat);
    }
    return result;
}

}  // namespace stepfit
