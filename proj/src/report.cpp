#include "stepfit/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "stepfit/errors.hpp"

namespace stepfit {

using nlohmann::json;

namespace {

std::string fmt(double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", value);
    return buf;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (long i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (long j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

json vector_to_json(const Eigen::VectorXd& v) {
    json out = json::array();
    for (long i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

Eigen::MatrixXd matrix_from_json(const json& j, const std::string& path) {
    if (!j.is_array() || j.empty() || !j[0].is_array())
        throw ParseError("model JSON: " + path + " must be a nested array");
    const long rows = static_cast<long>(j.size());
    const long cols = static_cast<long>(j[0].size());
    Eigen::MatrixXd m(rows, cols);
    for (long i = 0; i < rows; ++i) {
        if (static_cast<long>(j[static_cast<std::size_t>(i)].size()) != cols)
            throw ParseError("model JSON: " + path + " has ragged rows");
        for (long c = 0; c < cols; ++c)
            m(i, c) = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

Eigen::VectorXd vector_from_json(const json& j, const std::string& path) {
    if (!j.is_array()) throw ParseError("model JSON: " + path + " must be an array");
    Eigen::VectorXd v(static_cast<long>(j.size()));
    for (long i = 0; i < v.size(); ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
    return v;
}

json params_to_json(const EmissionParams& params) {
    json out{{"family", family_name(family_of(params))}};
    if (const auto* p = std::get_if<BernoulliParams>(&params)) {
        out["pi"] = matrix_to_json(p->pi);
    } else if (const auto* p = std::get_if<CategoricalParams>(&params)) {
        json classes = json::array();
        for (const auto& table : p->prob) classes.push_back(matrix_to_json(table));
        out["p"] = std::move(classes);
    } else if (const auto* p = std::get_if<CovariateParams>(&params)) {
        out["beta"] = matrix_to_json(p->beta);
        out["b"] = vector_to_json(p->b);
    } else {
        const auto& g = std::get<GaussianParams>(params);
        out["mu"] = matrix_to_json(g.mu);
        if (g.family == Family::gaussian_spherical) out["var"] = vector_to_json(g.var_scalar);
        if (g.family == Family::gaussian_diag) out["var"] = matrix_to_json(g.var_diag);
        if (g.family == Family::gaussian_full) {
            json classes = json::array();
            for (const auto& cov : g.cov) classes.push_back(matrix_to_json(cov));
            out["cov"] = std::move(classes);
        }
    }
    return out;
}

EmissionParams params_from_json(const json& j, Family family, const std::string& path) {
    switch (family) {
        case Family::binary: {
            BernoulliParams p;
            p.pi = matrix_from_json(j.at("pi"), path + ".pi");
            for (long c = 0; c < p.pi.rows(); ++c)
                for (long d = 0; d < p.pi.cols(); ++d)
                    if (!(p.pi(c, d) >= 0.0 && p.pi(c, d) <= 1.0))
                        throw ValidationError("model JSON: " + path + ".pi outside [0, 1]");
            return p;
        }
        case Family::categorical: {
            CategoricalParams p;
            for (const auto& jt : j.at("p"))
                p.prob.push_back(matrix_from_json(jt, path + ".p"));
            for (const auto& table : p.prob)
                for (long d = 0; d < table.rows(); ++d) {
                    if (std::abs(table.row(d).sum() - 1.0) > 1e-9)
                        throw ValidationError("model JSON: " + path + ".p rows must sum to 1");
                    if (table.row(d).minCoeff() < 0.0)
                        throw ValidationError("model JSON: " + path + ".p has negative entries");
                }
            return p;
        }
        case Family::covariate: {
            CovariateParams p;
            p.beta = matrix_from_json(j.at("beta"), path + ".beta");
            p.b = vector_from_json(j.at("b"), path + ".b");
            if (p.b.size() != p.beta.rows())
                throw ValidationError("model JSON: " + path + " beta/b class counts differ");
            if (!p.beta.allFinite() || !p.b.allFinite())
                throw ValidationError("model JSON: " + path + " has non-finite coefficients");
            return p;
        }
        default: {
            GaussianParams p;
            p.family = family;
            p.mu = matrix_from_json(j.at("mu"), path + ".mu");
            if (family == Family::gaussian_spherical) {
                p.var_scalar = vector_from_json(j.at("var"), path + ".var");
                if (p.var_scalar.minCoeff() < kVarianceFloor * (1.0 - 1e-12))
                    throw ValidationError("model JSON: " + path + ".var below the variance floor");
            }
            if (family == Family::gaussian_diag) {
                p.var_diag = matrix_from_json(j.at("var"), path + ".var");
                if (p.var_diag.minCoeff() < kVarianceFloor * (1.0 - 1e-12))
                    throw ValidationError("model JSON: " + path + ".var below the variance floor");
            }
            if (family == Family::gaussian_full) {
                for (const auto& jc : j.at("cov")) {
                    Eigen::MatrixXd cov = matrix_from_json(jc, path + ".cov");
                    if (!cov.isApprox(cov.transpose(), 1e-9))
                        throw ValidationError("model JSON: " + path + ".cov is not symmetric");
                    p.cov.push_back(std::move(cov));
                }
            }
            return p;
        }
    }
}

json block_to_json(const BlockSpec& spec, const EmissionParams& params) {
    json j = json::parse(descriptor_to_json(ModelDescriptor{{spec}}));
    json out = j["blocks"][0];
    out["params"] = params_to_json(params);
    return out;
}

std::pair<BlockSpec, EmissionParams> block_from_json(const json& j, int index) {
    const std::string text = json{{"blocks", json::array({j})}}.dump();
    ModelDescriptor desc = parse_descriptor(text, 0);
    BlockSpec spec = desc.blocks.at(0);
    if (!j.contains("params"))
        throw ParseError("model JSON: block " + std::to_string(index) + " lacks params");
    EmissionParams params =
        params_from_json(j["params"], spec.family, "blocks[" + std::to_string(index) + "]");
    return {std::move(spec), std::move(params)};
}

json fit_meta_to_json(const FitMeta& meta) {
    return json{{"avg_ll", meta.avg_ll},     {"n_iter", meta.n_iter},
                {"init_index", meta.init_index}, {"seed", meta.seed},
                {"converged", meta.converged}};
}

FitMeta fit_meta_from_json(const json& j) {
    FitMeta meta;
    meta.avg_ll = j.value("avg_ll", 0.0);
    meta.n_iter = j.value("n_iter", 0);
    meta.init_index = j.value("init_index", 0);
    meta.seed = j.value("seed", std::uint64_t{0});
    meta.converged = j.value("converged", false);
    return meta;
}

}  // namespace

std::string model_to_json(const MixtureModel& model) {
    json measurement = json::array();
    for (std::size_t b = 0; b < model.measurement.size(); ++b)
        measurement.push_back(block_to_json(model.measurement_desc.blocks[b], model.measurement[b]));
    json structural = json::array();
    for (std::size_t b = 0; b < model.structural.size(); ++b)
        structural.push_back(block_to_json(model.structural_desc.blocks[b], model.structural[b]));

    json out{{"schema_version", 1},
             {"method", model.method},
             {"n_components", model.n_components},
             {"class_weights", vector_to_json(model.class_weights)},
             {"measurement", std::move(measurement)},
             {"fit_meta", fit_meta_to_json(model.fit_meta)}};
    if (model.has_structural()) out["structural"] = std::move(structural);
    else out["structural"] = nullptr;
    return out.dump(2);
}

MixtureModel model_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("model JSON: ") + e.what());
    }
    if (!j.contains("schema_version"))
        throw ParseError("model JSON: missing schema_version");
    if (j["schema_version"].get<int>() != 1)
        throw ValidationError("model JSON: unsupported schema version " +
                              j["schema_version"].dump() + " (this build reads version 1)");

    MixtureModel model;
    model.method = j.value("method", "em");
    model.n_components = j.at("n_components").get<int>();
    if (model.n_components < 1)
        throw ValidationError("model JSON: n_components must be >= 1");
    model.class_weights = vector_from_json(j.at("class_weights"), "class_weights");
    if (model.class_weights.size() != model.n_components)
        throw ValidationError("model JSON: class_weights length does not match n_components");
    if (model.class_weights.minCoeff() < 0.0)
        throw ValidationError("model JSON: class_weights must be nonnegative");
    if (std::abs(model.class_weights.sum() - 1.0) > 1e-12)
        throw ValidationError("model JSON: class_weights sum to " +
                              fmt(model.class_weights.sum()) + ", expected 1");

    int index = 0;
    for (const auto& jb : j.at("measurement")) {
        auto [spec, params] = block_from_json(jb, index++);
        if (n_classes_of(params) != model.n_components)
            throw ValidationError("model JSON: block '" + spec.name +
                                  "' class count does not match n_components");
        model.measurement_desc.blocks.push_back(std::move(spec));
        model.measurement.push_back(std::move(params));
    }
    if (model.measurement.empty())
        throw ValidationError("model JSON: at least one measurement block required");
    if (j.contains("structural") && !j["structural"].is_null()) {
        for (const auto& jb : j["structural"]) {
            auto [spec, params] = block_from_json(jb, index++);
            if (n_classes_of(params) != model.n_components)
                throw ValidationError("model JSON: block '" + spec.name +
                                      "' class count does not match n_components");
            model.structural_desc.blocks.push_back(std::move(spec));
            model.structural.push_back(std::move(params));
        }
    }
    if (j.contains("fit_meta")) model.fit_meta = fit_meta_from_json(j["fit_meta"]);
    return model;
}

void save_model(const MixtureModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open file for writing: " + path);
    out << model_to_json(model) << '\n';
}

MixtureModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open file: " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return model_from_json(buffer.str());
}

namespace {

void render_params(std::ostringstream& out, const BlockSpec& spec, const EmissionParams& params) {
    out << "block '" << spec.name << "' (" << family_name(spec.family)
        << (spec.fiml ? ", fiml" : "") << ", columns " << spec.col_begin << ".." << spec.col_end - 1
        << ")\n";
    const int k = n_classes_of(params);
    auto row_label = [&](int c) { return "  class " + std::to_string(c) + ": "; };
    if (const auto* p = std::get_if<BernoulliParams>(&params)) {
        for (int c = 0; c < k; ++c) {
            out << row_label(c) << "pi =";
            for (long d = 0; d < p->pi.cols(); ++d) out << ' ' << fmt(p->pi(c, d));
            out << '\n';
        }
    } else if (const auto* p = std::get_if<CategoricalParams>(&params)) {
        for (int c = 0; c < k; ++c) {
            const auto& table = p->prob[static_cast<std::size_t>(c)];
            for (long d = 0; d < table.rows(); ++d) {
                out << row_label(c) << "p[dim " << d << "] =";
                for (long l = 0; l < table.cols(); ++l) out << ' ' << fmt(table(d, l));
                out << '\n';
            }
        }
    } else if (const auto* p = std::get_if<CovariateParams>(&params)) {
        for (int c = 0; c < k; ++c) {
            out << row_label(c) << "beta =";
            for (long d = 0; d < p->beta.cols(); ++d) out << ' ' << fmt(p->beta(c, d));
            out << "  b = " << fmt(p->b[c]) << '\n';
        }
        const CovariateParams rebased = rebase_covariate(*p, 0);
        out << "  rebased on class 0:\n";
        for (int c = 0; c < k; ++c) {
            out << "  class " << c << ": beta =";
            for (long d = 0; d < rebased.beta.cols(); ++d) out << ' ' << fmt(rebased.beta(c, d));
            out << "  b = " << fmt(rebased.b[c]) << '\n';
        }
    } else {
        const auto& g = std::get<GaussianParams>(params);
        for (int c = 0; c < k; ++c) {
            out << row_label(c) << "mu =";
            for (long d = 0; d < g.mu.cols(); ++d) out << ' ' << fmt(g.mu(c, d));
            if (g.family == Family::gaussian_spherical) out << "  var = " << fmt(g.var_scalar[c]);
            if (g.family == Family::gaussian_diag) {
                out << "  var =";
                for (long d = 0; d < g.var_diag.cols(); ++d) out << ' ' << fmt(g.var_diag(c, d));
            }
            out << '\n';
            if (g.family == Family::gaussian_full) {
                const auto& cov = g.cov[static_cast<std::size_t>(c)];
                for (long r = 0; r < cov.rows(); ++r) {
                    out << "    cov[" << r << "] =";
                    for (long c2 = 0; c2 < cov.cols(); ++c2) out << ' ' << fmt(cov(r, c2));
                    out << '\n';
                }
            }
        }
    }
}

}  // namespace

std::string render_report(const MixtureModel& model, const FitReportStats& stats, int verbosity) {
    std::ostringstream out;
    out << "=== stepfit model report ===\n";
    out << "method: " << model.method << "   classes: " << model.n_components
        << "   units (total weight): " << fmt(stats.n) << "   seed: " << model.fit_meta.seed
        << '\n';
    out << "converged: " << (model.fit_meta.converged ? "yes" : "no")
        << "   iterations: " << model.fit_meta.n_iter
        << "   init: " << model.fit_meta.init_index << '\n';
    out << "total log-likelihood: " << fmt(stats.total_ll) << '\n';
    out << "average log-likelihood: " << fmt(stats.avg_ll) << '\n';
    out << "free parameters: " << stats.n_parameters << "   AIC: " << fmt(stats.aic)
        << "   BIC: " << fmt(stats.bic) << '\n';
    if (verbosity < 1) return out.str();

    out << "class sizes (mean responsibilities):\n";
    for (int c = 0; c < model.n_components; ++c)
        out << "  class " << c << ": " << fmt(stats.class_sizes[c]) << '\n';
    if (!model.has_covariate()) {
        out << "class weights:\n";
        for (int c = 0; c < model.n_components; ++c)
            out << "  class " << c << ": " << fmt(model.class_weights[c]) << '\n';
    } else {
        out << "class weights: not part of the likelihood (covariate prior)\n";
    }
    out << "--- measurement model ---\n";
    for (std::size_t b = 0; b < model.measurement.size(); ++b)
        render_params(out, model.measurement_desc.blocks[b], model.measurement[b]);
    if (model.has_structural()) {
        out << "--- structural model ---\n";
        for (std::size_t b = 0; b < model.structural.size(); ++b)
            render_params(out, model.structural_desc.blocks[b], model.structural[b]);
    }
    return out.str();
}

std::string weights_to_csv(const ImputedWeights& weights) {
    std::ostringstream out;
    for (long c = 0; c < weights.w.cols(); ++c) out << (c > 0 ? "," : "") << 'w' << c;
    out << '\n';
    char buf[64];
    for (long i = 0; i < weights.w.rows(); ++i) {
        for (long c = 0; c < weights.w.cols(); ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", weights.w(i, c));
            out << (c > 0 ? "," : "") << buf;
        }
        out << '\n';
    }
    return out.str();
}

std::string confusion_to_csv(const ConfusionMatrix& confusion) {
    std::ostringstream out;
    char buf[64];
    for (long c = 0; c < confusion.d.rows(); ++c) {
        for (long a = 0; a < confusion.d.cols(); ++a) {
            std::snprintf(buf, sizeof(buf), "%.17g", confusion.d(c, a));
            out << (a > 0 ? "," : "") << buf;
        }
        out << '\n';
    }
    return out.str();
}

std::string bootstrap_samples_to_csv(const BootstrapResult& result) {
    std::ostringstream out;
    out << "rep,module,block,param,class,dim,value\n";
    char buf[64];
    for (const BootstrapSample& s : result.samples) {
        std::snprintf(buf, sizeof(buf), "%.17g", s.value);
        out << s.rep << ',' << s.module << ',' << s.block << ',' << s.param << ',' << s.cls << ','
            << s.dim << ',' << buf << '\n';
    }
    return out.str();
}

std::string bootstrap_summary_to_csv(const BootstrapResult& result) {
    std::ostringstream out;
    out << "module,block,param,class,dim,mean,std\n";
    char buf_mean[64], buf_std[64];
    auto emit = [&](const std::vector<AggregatedStat>& stats) {
        for (const AggregatedStat& s : stats) {
            std::snprintf(buf_mean, sizeof(buf_mean), "%.17g", s.mean);
            std::snprintf(buf_std, sizeof(buf_std), "%.17g", s.std);
            out << s.module << ',' << s.block << ',' << s.param << ',' << s.cls << ',' << s.dim
                << ',' << buf_mean << ',' << buf_std << '\n';
        }
    };
    emit(result.cw_stats);
    emit(result.mm_stats);
    emit(result.sm_stats);
    return out.str();
}

}  // namespace stepfit
