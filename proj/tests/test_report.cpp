#include <doctest.h>

#include <fstream>

#include <json.hpp>

#include "stepfit/errors.hpp"
#include "stepfit/inference.hpp"
#include "stepfit/report.hpp"
#include "stepfit/simulation.hpp"

using namespace stepfit;

namespace {

std::string tmp_path(const std::string& name) {
    return std::string(STEPFIT_TEST_TMPDIR) + "/" + name;
}

MixtureModel fitted_complete_model() {
    BakkDesign design;
    design.kind = StudyKind::complete;
    design.n = 400;
    design.missing_ratio = 0.25;
    design.seed = 81;
    const SimulatedData data = generate(design);
    EmConfig cfg;
    cfg.seed = 21;
    cfg.abs_tol = 1e-8;
    const ModelDescriptor mm_desc = bakk_mm_descriptor(StudyKind::complete);
    const ModelDescriptor sm_desc = bakk_sm_descriptor(StudyKind::complete);
    return fit_one_step(data.mm, mm_desc, &data.sm, &sm_desc, 3, cfg);
}

}  // namespace

TEST_SUITE("report") {

TEST_CASE("model JSON round-trips bit-exactly") {
    const MixtureModel model = fitted_complete_model();
    const std::string path = tmp_path("model_roundtrip.json");
    save_model(model, path);
    const MixtureModel loaded = load_model(path);

    CHECK(loaded.n_components == model.n_components);
    CHECK(loaded.class_weights == model.class_weights);
    CHECK(loaded.method == model.method);
    CHECK(std::get<BernoulliParams>(loaded.measurement[0]).pi ==
          std::get<BernoulliParams>(model.measurement[0]).pi);
    const auto& cov_a = std::get<CovariateParams>(loaded.structural[0]);
    const auto& cov_b = std::get<CovariateParams>(model.structural[0]);
    CHECK(cov_a.beta == cov_b.beta);
    CHECK(cov_a.b == cov_b.b);
    const auto& out_a = std::get<GaussianParams>(loaded.structural[1]);
    const auto& out_b = std::get<GaussianParams>(model.structural[1]);
    CHECK(out_a.mu == out_b.mu);
    CHECK(loaded.fit_meta.avg_ll == model.fit_meta.avg_ll);
    CHECK(loaded.fit_meta.seed == model.fit_meta.seed);
    CHECK(loaded.measurement_desc.blocks[0].fiml == model.measurement_desc.blocks[0].fiml);
}

TEST_CASE("rendering is deterministic and survives a serialization round-trip") {
    const MixtureModel model = fitted_complete_model();
    BakkDesign design;
    design.kind = StudyKind::complete;
    design.n = 400;
    design.missing_ratio = 0.25;
    design.seed = 81;
    const SimulatedData data = generate(design);
    const FitReportStats stats = information_criteria(model, data.mm, &data.sm);

    const std::string once = render_report(model, stats, 1);
    const std::string twice = render_report(model, stats, 1);
    CHECK(once == twice);

    const std::string path = tmp_path("model_render.json");
    save_model(model, path);
    const MixtureModel loaded = load_model(path);
    const FitReportStats stats_again = information_criteria(loaded, data.mm, &data.sm);
    CHECK(render_report(loaded, stats_again, 1) == once);

    // verbosity 0 is a strict prefix with the parameter tables dropped
    const std::string brief = render_report(model, stats, 0);
    CHECK(once.substr(0, brief.size()) == brief);
    CHECK(once.size() > brief.size());
}

TEST_CASE("a one-class model renders a single class row") {
    Eigen::MatrixXd values(5, 1);
    values << 0, 1, 1, 0, 1;
    const Dataset data{values};
    ModelDescriptor desc;
    BlockSpec block;
    block.name = "y";
    block.family = Family::binary;
    block.col_begin = 0;
    block.col_end = 1;
    desc.blocks.push_back(block);
    EmConfig cfg;
    const MixtureModel model = fit_one_step(data, desc, nullptr, nullptr, 1, cfg);
    const FitReportStats stats = information_criteria(model, data);
    const std::string text = render_report(model, stats, 1);
    CHECK(text.find("class 0") != std::string::npos);
    CHECK(text.find("class 1") == std::string::npos);
}

TEST_CASE("load_model validates invariants") {
    SUBCASE("class weights must sum to one") {
        const std::string path = tmp_path("bad_weights.json");
        std::ofstream out(path);
        out << R"({"schema_version":1,"n_components":2,"class_weights":[0.6,0.3],
                   "measurement":[{"name":"y","family":"binary","columns":[0,1],"fiml":false,
                                   "params":{"family":"binary","pi":[[0.5],[0.5]]}}]})";
        out.close();
        CHECK_THROWS_WITH_AS(load_model(path), doctest::Contains("sum"), ValidationError);
    }
    SUBCASE("schema version is checked") {
        const std::string path = tmp_path("bad_version.json");
        std::ofstream out(path);
        out << R"({"schema_version":7,"n_components":1,"class_weights":[1.0],"measurement":[]})";
        out.close();
        CHECK_THROWS_WITH_AS(load_model(path), doctest::Contains("unsupported schema version"),
                             ValidationError);
    }
    SUBCASE("malformed JSON is a parse error with context") {
        const std::string path = tmp_path("bad_json.json");
        std::ofstream out(path);
        out << "{not json";
        out.close();
        CHECK_THROWS_AS(load_model(path), ParseError);
    }
}

TEST_CASE("report numbers reparse to at least ten significant digits") {
    const MixtureModel model = fitted_complete_model();
    BakkDesign design;
    design.kind = StudyKind::complete;
    design.n = 400;
    design.missing_ratio = 0.25;
    design.seed = 81;
    const SimulatedData data = generate(design);
    const FitReportStats stats = information_criteria(model, data.mm, &data.sm);
    const std::string text = render_report(model, stats, 0);
    const std::string label = "average log-likelihood: ";
    const auto at = text.find(label);
    REQUIRE(at != std::string::npos);
    const double parsed = std::stod(text.substr(at + label.size()));
    CHECK(std::abs(parsed - stats.avg_ll) <= 1e-10 * std::abs(stats.avg_ll));
}

TEST_CASE("csv exports are well-formed") {
    ImputedWeights w;
    w.w.resize(2, 3);
    w.w << 0.25, 0.5, 0.25, 1.0, 0.0, 0.0;
    const std::string weights_csv = weights_to_csv(w);
    CHECK(weights_csv.find("w0,w1,w2") == 0);

    ConfusionMatrix d;
    d.d = Eigen::MatrixXd::Identity(2, 2);
    const std::string confusion_csv = confusion_to_csv(d);
    CHECK(confusion_csv == "1,0\n0,1\n");
}

}  // TEST_SUITE
