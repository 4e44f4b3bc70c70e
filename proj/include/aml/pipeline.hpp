#pragma once

/// @file pipeline.hpp
/// @brief End-to-end stages shared by the command line and the benchmark.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "aml/config.hpp"
#include "aml/metrics.hpp"
#include "aml/models.hpp"
#include "aml/rules.hpp"
#include "aml/training.hpp"

namespace aml {

/// Everything produced for one architecture on one dataset.
struct ModelRun {
    Architecture architecture = Architecture::CRNIM;
    EncoderModel model;
    LossCurve curve;
    RuleSet rules;
    /// Anomaly score per record; > 1 means anomalous.
    std::vector<double> scores;
};

/// Builds, trains, clusters and scores `arch` on an already standardized
/// dataset. Randomness comes from streams derived from `config.seed`.
ModelRun run_model(Architecture arch, const Dataset& standardized, const RunConfig& config,
                   std::ostream* log = nullptr);

/// Rules from the raw encoder outputs of `standardized`.
RuleSet fit_rules(const EncoderModel& model, const Dataset& standardized, const RunConfig& config,
                  std::uint64_t version, const std::string& created);

/// Per-record anomaly scores: reconstruction error for ABAD, rule score otherwise.
std::vector<double> anomaly_scores(const EncoderModel& model, const RuleSet& rules,
                                   const Dataset& standardized);

/// Accuracy and AUROC over the labeled records. Throws DataError unless both
/// classes are present.
ReportRow evaluate_scores(const std::string& model_name, std::span<const double> scores,
                          const Dataset& data, const RunConfig& config, RocResult* roc = nullptr);

struct BenchmarkResult {
    EvaluationReport report;
    std::vector<ModelRun> runs;
};

/// Trains and evaluates every architecture of the zoo on `raw`.
BenchmarkResult run_benchmark(const Dataset& raw, const RunConfig& config, std::ostream* log = nullptr);

/// Runs one subcommand. Returns the process exit code: 0 on success, 1 for
/// configuration errors, 2 for data errors, 3 for numeric failures.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace aml
