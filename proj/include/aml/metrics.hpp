#pragma once

/// @file metrics.hpp
/// @brief Accuracy, ROC/AUROC and the model comparison report.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "aml/dataio.hpp"

namespace aml {

/// Anomaly score of a labeled record; only illicit and licit labels are valid.
struct ScoredLabel {
    double score = 0.0;
    Label truth = Label::Licit;
};

/// Percentage of records classified correctly, predicting illicit iff
/// score > threshold. Throws DataError on empty input.
double accuracy(std::span<const ScoredLabel> scored, double threshold = 1.0);

/// Threshold among the observed scores (and -inf) with the highest accuracy;
/// ties go to the smallest threshold.
double best_accuracy_threshold(std::span<const ScoredLabel> scored);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
    /// Records with score >= threshold are predicted illicit; +inf for (0,0).
    double threshold = std::numeric_limits<double>::infinity();
};

struct RocResult {
    double auroc = 0.0;
    std::vector<RocPoint> points;
};

/// ROC swept over distinct scores (tied scores form one diagonal step) and the
/// trapezoidal area, which equals the Mann-Whitney statistic with ties worth
/// one half. Throws DataError unless both classes are present.
RocResult auroc(std::span<const ScoredLabel> scored);

struct ReportRow {
    std::string model;
    double acc_percent = 0.0;
    double auroc = 0.0;
};

struct EvaluationReport {
    std::vector<ReportRow> rows;
    /// Parallel to rows; an empty series means no ROC file for that model.
    std::vector<std::vector<RocPoint>> roc;
    std::string config_echo;
    std::uint64_t seed = 0;
};

/// "Simple CNN, 82.5, 0.71": ACC with one decimal, AUROC with two.
std::string format_report_row(const ReportRow& row);
/// Text table: header line then one formatted row per model.
std::string render_report_table(const EvaluationReport& report);
/// `model,acc_percent,auroc` CSV.
std::string render_report_csv(const EvaluationReport& report);
std::string render_roc_csv(std::span<const RocPoint> points);

/// Writes report.txt, report.csv and roc_<index>_<slug>.csv for every
/// non-empty ROC series; returns the files written.
std::vector<std::filesystem::path> write_report(const EvaluationReport& report,
                                                const std::filesystem::path& dir);

/// Parses a report CSV written by render_report_csv.
EvaluationReport read_report_csv(const std::filesystem::path& path);

}  // namespace aml
