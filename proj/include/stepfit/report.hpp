#pragma once

#include <string>

#include "stepfit/bootstrap.hpp"
#include "stepfit/inference.hpp"

namespace stepfit {

/// Plain-text model report. Verbosity 0 prints the fit statistics only;
/// verbosity 1 adds the class-weight and per-block parameter tables (with a
/// rebased coefficient table for covariate blocks). Every number is printed
/// with 12 significant digits and the output is byte-deterministic.
std::string render_report(const MixtureModel& model, const FitReportStats& stats, int verbosity);

/// Versioned JSON serialization of a fitted model ("schema_version": 1).
/// Numbers use the shortest round-trip decimal representation, so
/// save_model/load_model is exact.
std::string model_to_json(const MixtureModel& model);
MixtureModel model_from_json(const std::string& text);

void save_model(const MixtureModel& model, const std::string& path);
MixtureModel load_model(const std::string& path);

/// CSV exports used by the CLI.
std::string weights_to_csv(const ImputedWeights& weights);
std::string confusion_to_csv(const ConfusionMatrix& confusion);
std::string bootstrap_samples_to_csv(const BootstrapResult& result);
std::string bootstrap_summary_to_csv(const BootstrapResult& result);

}  // namespace stepfit
