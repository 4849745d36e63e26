// Command-line interface over the stepfit library: stepwise mixture-model
// estimation, prediction, bootstrap inference and the bundled simulation
// studies. Every subcommand taking --seed is fully deterministic.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "stepfit/bootstrap.hpp"
#include "stepfit/errors.hpp"
#include "stepfit/inference.hpp"
#include "stepfit/parallel.hpp"
#include "stepfit/report.hpp"
#include "stepfit/simulation.hpp"
#include "stepfit/stepwise.hpp"

namespace {

using namespace stepfit;

std::uint64_t env_seed_fallback() {
    if (const char* env = std::getenv("STEPFIT_SEED")) return std::strtoull(env, nullptr, 10);
    return 0;
}

std::string read_descriptor_text(const std::string& arg) {
    const auto first = arg.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && arg[first] == '{') return arg;
    std::ifstream in(arg);
    if (in) {
        std::stringstream buffer;
        buffer << in.rdbuf();
        return buffer.str();
    }
    return arg;  // family shorthand
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open file for writing: " + path);
    out << content;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

struct FitArgs {
    std::string data_path;
    std::string structural_path;
    std::string measurement = "binary";
    std::string structural_model;
    std::string weight_column;
    int n_components = 2;
    int n_steps = 1;
    std::string assignment = "modal";
    std::string correction = "none";
    int max_iter = 1000;
    double abs_tol = 1e-10;
    double rel_tol = 0.0;
    int n_init = 1;
    std::uint64_t seed = env_seed_fallback();
};

void add_fit_options(CLI::App* cmd, FitArgs& args) {
    cmd->add_option("--data", args.data_path, "Measurement (indicator) CSV")->required();
    cmd->add_option("--structural", args.structural_path,
                    "Structural CSV (covariates and/or distal outcomes)");
    cmd->add_option("--measurement", args.measurement,
                    "Measurement descriptor: family name, inline JSON or a JSON file path");
    cmd->add_option("--structural-model", args.structural_model,
                    "Structural descriptor (same forms as --measurement)");
    cmd->add_option("--weight-column", args.weight_column, "Name of the sample-weight column");
    cmd->add_option("--n-components", args.n_components, "Number of latent classes")->required();
    cmd->add_option("--n-steps", args.n_steps, "Estimation route: 1, 2 or 3")
        ->check(CLI::IsMember({1, 2, 3}));
    cmd->add_option("--assignment", args.assignment, "Three-step assignment: soft or modal");
    cmd->add_option("--correction", args.correction, "Three-step correction: none, bch or ml");
    cmd->add_option("--max-iter", args.max_iter, "Maximum EM iterations");
    cmd->add_option("--abs-tol", args.abs_tol, "Absolute average-log-likelihood tolerance");
    cmd->add_option("--rel-tol", args.rel_tol, "Relative tolerance (0 disables)");
    cmd->add_option("--n-init", args.n_init, "Number of random initializations");
    cmd->add_option("--seed", args.seed, "Random seed (default: STEPFIT_SEED or 0)");
}

struct LoadedProblem {
    Dataset mm;
    std::optional<Dataset> sm;
    ModelDescriptor mm_desc;
    std::optional<ModelDescriptor> sm_desc;
};

LoadedProblem load_problem(const FitArgs& args) {
    LoadedProblem p;
    std::optional<std::string> weight_col;
    if (!args.weight_column.empty()) weight_col = args.weight_column;
    p.mm = load_csv(args.data_path, weight_col);
    p.mm_desc = parse_descriptor(read_descriptor_text(args.measurement),
                                 static_cast<int>(p.mm.n_cols()));
    if (!args.structural_path.empty()) {
        p.sm = load_csv(args.structural_path, weight_col);
        if (args.structural_model.empty())
            throw ValidationError("--structural requires --structural-model");
        p.sm_desc = parse_descriptor(read_descriptor_text(args.structural_model),
                                     static_cast<int>(p.sm->n_cols()));
    } else if (!args.structural_model.empty()) {
        throw ValidationError("--structural-model requires --structural");
    }
    return p;
}

StepwiseConfig stepwise_config(const FitArgs& args, const CLI::App* cmd) {
    StepwiseConfig cfg;
    cfg.n_steps = args.n_steps;
    if (args.n_steps != 3) {
        if (cmd->count("--assignment"))
            throw ValidationError("--assignment is only meaningful with --n-steps 3");
        if (cmd->count("--correction"))
            throw ValidationError("--correction is only meaningful with --n-steps 3");
    }
    cfg.assignment = assignment_from_name(args.assignment);
    cfg.correction = correction_from_name(args.correction);
    cfg.em.max_iter = args.max_iter;
    cfg.em.abs_tol = args.abs_tol;
    cfg.em.rel_tol = args.rel_tol > 0.0 ? std::optional<double>(args.rel_tol) : std::nullopt;
    cfg.em.n_init = args.n_init;
    cfg.em.seed = args.seed;
    return cfg;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"stepfit: stepwise pseudo-likelihood estimation of mixture models"};
    app.require_subcommand(1);

    // --- fit ---
    FitArgs fit_args;
    std::string fit_output, fit_report, fit_export_weights, fit_export_confusion;
    int fit_verbose = 1;
    CLI::App* fit_cmd = app.add_subcommand("fit", "Fit a mixture model to CSV data");
    add_fit_options(fit_cmd, fit_args);
    fit_cmd->add_option("--output", fit_output, "Write the fitted model JSON here");
    fit_cmd->add_option("--report", fit_report, "Write the text report here instead of stdout");
    fit_cmd->add_option("--export-weights", fit_export_weights,
                        "Write the three-step imputed class weights (CSV)");
    fit_cmd->add_option("--export-confusion", fit_export_confusion,
                        "Write the estimated misclassification matrix D (CSV)");
    fit_cmd->add_option("--verbose", fit_verbose, "Report verbosity: 0 stats only, 1 full tables");

    // --- predict ---
    std::string predict_model, predict_data, predict_structural, predict_output, predict_weight_col;
    CLI::App* predict_cmd = app.add_subcommand("predict", "Posterior classes and probabilities");
    predict_cmd->add_option("--model", predict_model, "Fitted model JSON")->required();
    predict_cmd->add_option("--data", predict_data, "Measurement CSV")->required();
    predict_cmd->add_option("--structural", predict_structural, "Structural CSV");
    predict_cmd->add_option("--weight-column", predict_weight_col, "Sample-weight column");
    predict_cmd->add_option("--output", predict_output, "Prediction CSV path")->required();

    // --- score ---
    std::string score_model, score_data, score_structural, score_weight_col;
    CLI::App* score_cmd = app.add_subcommand("score", "Average log-likelihood over a dataset");
    score_cmd->add_option("--model", score_model, "Fitted model JSON")->required();
    score_cmd->add_option("--data", score_data, "Measurement CSV")->required();
    score_cmd->add_option("--structural", score_structural, "Structural CSV");
    score_cmd->add_option("--weight-column", score_weight_col, "Sample-weight column");

    // --- sample ---
    std::string sample_model_path, sample_output;
    long sample_n = 100;
    std::uint64_t sample_seed = env_seed_fallback();
    CLI::App* sample_cmd = app.add_subcommand("sample", "Draw observations from a fitted model");
    sample_cmd->add_option("--model", sample_model_path, "Fitted model JSON")->required();
    sample_cmd->add_option("--n", sample_n, "Number of draws")->required();
    sample_cmd->add_option("--seed", sample_seed, "Random seed");
    sample_cmd->add_option("--output", sample_output, "Sample CSV path")->required();

    // --- bootstrap ---
    FitArgs boot_args;
    int boot_reps = 100;
    int boot_jobs = default_jobs();
    std::string boot_samples_path, boot_summary_path;
    CLI::App* boot_cmd =
        app.add_subcommand("bootstrap", "Nonparametric bootstrap of a stepwise estimator");
    add_fit_options(boot_cmd, boot_args);
    boot_cmd->add_option("--n-repetitions", boot_reps, "Bootstrap repetitions")->required();
    boot_cmd->add_option("--jobs", boot_jobs, "Worker threads");
    boot_cmd->add_option("--output-samples", boot_samples_path, "Long-form samples CSV");
    boot_cmd->add_option("--output-summary", boot_summary_path, "Mean/std summary CSV");

    // --- simulate ---
    std::string sim_kind, sim_prefix;
    long sim_n = 500;
    double sim_sep = 0.8, sim_missing = 0.0;
    std::uint64_t sim_seed = env_seed_fallback();
    CLI::App* sim_cmd = app.add_subcommand("simulate", "Generate one synthetic dataset");
    sim_cmd->add_option("kind", sim_kind, "bakk-response, bakk-covariate or bakk-complete")
        ->required();
    sim_cmd->add_option("--n", sim_n, "Sample size")->required();
    sim_cmd->add_option("--sep", sim_sep, "Class separation (0.7, 0.8 or 0.9 in the studies)");
    sim_cmd->add_option("--missing-ratio", sim_missing, "MCAR ratio (complete design only)");
    sim_cmd->add_option("--seed", sim_seed, "Random seed");
    sim_cmd->add_option("--output-prefix", sim_prefix, "Writes <prefix>_mm.csv, _sm.csv, _classes.csv")
        ->required();

    // --- study ---
    std::string study_kind_arg, study_ns = "2000", study_axis, study_estimators =
        "1-step,2-step,3-step-naive,3-step-bch,3-step-ml";
    std::string study_output;
    int study_reps = 100;
    int study_jobs = default_jobs();
    std::uint64_t study_seed = env_seed_fallback();
    double study_abs_tol = 1e-10;
    int study_max_iter = 1000;
    int study_n_init = 1;
    CLI::App* study_cmd = app.add_subcommand("study", "Bias/RMSE replication study");
    study_cmd->add_option("kind", study_kind_arg, "response, covariate or complete")->required();
    study_cmd->add_option("--n", study_ns, "Comma-separated sample sizes");
    study_cmd->add_option("--sep", study_axis, "Comma-separated separations (response/covariate)");
    study_cmd->add_option("--missing", study_axis, "Comma-separated missing ratios (complete)");
    study_cmd->add_option("--reps", study_reps, "Replications per configuration");
    study_cmd->add_option("--estimators", study_estimators, "Comma-separated estimator list");
    study_cmd->add_option("--seed", study_seed, "Base seed");
    study_cmd->add_option("--jobs", study_jobs, "Worker threads");
    study_cmd->add_option("--abs-tol", study_abs_tol, "EM tolerance");
    study_cmd->add_option("--max-iter", study_max_iter, "EM iteration cap");
    study_cmd->add_option("--n-init", study_n_init, "Random initializations per fit");
    study_cmd->add_option("--output", study_output, "Result CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    if (fit_cmd->parsed()) {
        const LoadedProblem p = load_problem(fit_args);
        const StepwiseConfig cfg = stepwise_config(fit_args, fit_cmd);
        MixtureModel model =
            fit_stepwise(p.mm, p.sm ? &*p.sm : nullptr, p.mm_desc, p.sm_desc ? &*p.sm_desc : nullptr,
                         fit_args.n_components, cfg);
        const FitReportStats stats = information_criteria(model, p.mm, p.sm ? &*p.sm : nullptr);
        const std::string report = render_report(model, stats, fit_verbose);
        if (fit_report.empty()) std::cout << report;
        else write_text_file(fit_report, report);
        if (!fit_output.empty()) save_model(model, fit_output);
        if (!fit_export_weights.empty() || !fit_export_confusion.empty()) {
            if (cfg.n_steps != 3)
                throw ValidationError("weight/confusion export requires --n-steps 3");
            MixtureModel mm_part = model;
            mm_part.structural.clear();
            mm_part.structural_desc.blocks.clear();
            const ImputedWeights w = compute_assignments(mm_part, p.mm, cfg.assignment);
            if (!fit_export_confusion.empty())
                write_text_file(fit_export_confusion,
                                confusion_to_csv(compute_confusion(mm_part, p.mm, w)));
            if (!fit_export_weights.empty()) {
                ImputedWeights exported = w;
                if (cfg.correction == Correction::bch)
                    exported = bch_adjust(w, compute_confusion(mm_part, p.mm, w));
                write_text_file(fit_export_weights, weights_to_csv(exported));
            }
        }
        return 0;
    }

    if (predict_cmd->parsed()) {
        const MixtureModel model = load_model(predict_model);
        std::optional<std::string> weight_col;
        if (!predict_weight_col.empty()) weight_col = predict_weight_col;
        const Dataset mm = load_csv(predict_data, weight_col);
        std::optional<Dataset> sm;
        if (!predict_structural.empty()) sm = load_csv(predict_structural, weight_col);
        const Eigen::MatrixXd proba = predict_proba(model, mm, sm ? &*sm : nullptr);
        const std::vector<int> classes = predict(model, mm, sm ? &*sm : nullptr);
        std::ostringstream out;
        out << "class";
        for (long c = 0; c < proba.cols(); ++c) out << ",proba_" << c;
        out << '\n';
        char buf[64];
        for (long i = 0; i < proba.rows(); ++i) {
            out << classes[static_cast<std::size_t>(i)];
            for (long c = 0; c < proba.cols(); ++c) {
                std::snprintf(buf, sizeof(buf), "%.17g", proba(i, c));
                out << ',' << buf;
            }
            out << '\n';
        }
        write_text_file(predict_output, out.str());
        return 0;
    }

    if (score_cmd->parsed()) {
        const MixtureModel model = load_model(score_model);
        std::optional<std::string> weight_col;
        if (!score_weight_col.empty()) weight_col = score_weight_col;
        const Dataset mm = load_csv(score_data, weight_col);
        std::optional<Dataset> sm;
        if (!score_structural.empty()) sm = load_csv(score_structural, weight_col);
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.12g", score(model, mm, sm ? &*sm : nullptr));
        std::cout << buf << '\n';
        return 0;
    }

    if (sample_cmd->parsed()) {
        const MixtureModel model = load_model(sample_model_path);
        Rng rng(sample_seed);
        const SampleResult sample = sample_model(model, sample_n, rng);
        std::ostringstream out;
        out << "class";
        for (const std::string& name : sample.mm.column_names()) out << ',' << name;
        for (const std::string& name : sample.sm.column_names()) out << ',' << name;
        out << '\n';
        char buf[64];
        for (long i = 0; i < sample_n; ++i) {
            out << sample.classes[static_cast<std::size_t>(i)];
            for (long j = 0; j < sample.mm.n_cols(); ++j) {
                std::snprintf(buf, sizeof(buf), "%.17g", sample.mm.values()(i, j));
                out << ',' << buf;
            }
            for (long j = 0; j < sample.sm.n_cols(); ++j) {
                std::snprintf(buf, sizeof(buf), "%.17g", sample.sm.values()(i, j));
                out << ',' << buf;
            }
            out << '\n';
        }
        write_text_file(sample_output, out.str());
        return 0;
    }

    if (boot_cmd->parsed()) {
        const LoadedProblem p = load_problem(boot_args);
        const StepwiseConfig cfg = stepwise_config(boot_args, boot_cmd);
        const MixtureModel main_model =
            fit_stepwise(p.mm, p.sm ? &*p.sm : nullptr, p.mm_desc, p.sm_desc ? &*p.sm_desc : nullptr,
                         boot_args.n_components, cfg);
        const BootstrapResult result =
            bootstrap_stats(main_model, p.mm, p.sm ? &*p.sm : nullptr, cfg, boot_reps,
                            boot_args.seed, boot_jobs);
        if (!boot_samples_path.empty())
            write_text_file(boot_samples_path, bootstrap_samples_to_csv(result));
        if (!boot_summary_path.empty())
            write_text_file(boot_summary_path, bootstrap_summary_to_csv(result));
        std::cout << "bootstrap: " << result.n_repetitions - result.n_failed << " of "
                  << result.n_repetitions << " repetitions succeeded\n";
        return 0;
    }

    if (sim_cmd->parsed()) {
        BakkDesign design;
        if (sim_kind == "bakk-response") design.kind = StudyKind::response;
        else if (sim_kind == "bakk-covariate") design.kind = StudyKind::covariate;
        else if (sim_kind == "bakk-complete") design.kind = StudyKind::complete;
        else throw ValidationError("unknown design '" + sim_kind + "'");
        design.n = sim_n;
        design.separation = sim_sep;
        design.missing_ratio = sim_missing;
        design.seed = sim_seed;
        const SimulatedData data = generate(design);
        save_csv(data.mm, sim_prefix + "_mm.csv");
        save_csv(data.sm, sim_prefix + "_sm.csv");
        std::ostringstream classes;
        classes << "class\n";
        for (int c : data.true_classes) classes << c << '\n';
        write_text_file(sim_prefix + "_classes.csv", classes.str());
        return 0;
    }

    if (study_cmd->parsed()) {
        const StudyKind kind = study_kind_from_name(study_kind_arg);
        std::vector<long> ns;
        for (const std::string& s : split_list(study_ns)) ns.push_back(std::stol(s));
        std::vector<double> axis;
        if (study_axis.empty()) study_axis = kind == StudyKind::complete ? "0.5" : "0.8";
        for (const std::string& s : split_list(study_axis)) axis.push_back(std::stod(s));
        std::vector<Estimator> estimators;
        for (const std::string& s : split_list(study_estimators))
            estimators.push_back(estimator_from_name(s));
        EmConfig em;
        em.abs_tol = study_abs_tol;
        em.max_iter = study_max_iter;
        em.n_init = study_n_init;
        const StudyResult result =
            run_study(kind, ns, axis, study_reps, estimators, study_seed, em, study_jobs);
        write_text_file(study_output, result.to_csv());
        return 0;
    }

    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
