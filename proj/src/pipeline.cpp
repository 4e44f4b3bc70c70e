#include "aml/pipeline.hpp"

#include <cstdio>
#include <ostream>

#include "aml/error.hpp"

namespace aml {

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

RuleSet fit_rules(const EncoderModel& model, const Dataset& standardized, const RunConfig& config,
                  std::uint64_t version, const std::string& created) {
    const auto features = standardized.feature_matrix();
    const auto z = embed_rows(model, features, standardized.size());
    const Points points{z, model.embedding_dim()};
    ClusterConfig cc;
    cc.min_pts = config.min_pts;
    cc.radius_percentile = config.radius_percentile;
    cc.epsilon = config.epsilon ? *config.epsilon : auto_epsilon(points, config.min_pts);
    const auto assignment = cluster(points, cc);
    return derive_rules(points, assignment, cc, version, created);
}

std::vector<double> anomaly_scores(const EncoderModel& model, const RuleSet& rules,
                                   const Dataset& standardized) {
    std::vector<double> out;
    out.reserve(standardized.size());
    if (model.has_decoder()) {
        for (const auto& r : standardized.records) out.push_back(reconstruction_error(model, r.features));
        return out;
    }
    const auto features = standardized.feature_matrix();
    const auto z = embed_rows(model, features, standardized.size());
    const std::size_t e = model.embedding_dim();
    for (std::size_t i = 0; i < standardized.size(); ++i) {
        out.push_back(score(rules, std::span<const double>(z).subspan(i * e, e)).score);
    }
    return out;
}

ModelRun run_model(Architecture arch, const Dataset& standardized, const RunConfig& config, std::ostream* log) {
    const std::string tag(architecture_tag(arch));
    SeededRng init = SeededRng::derive(config.seed, "init/" + tag);
    ModelRun run{arch, EncoderModel::build(arch, standardized.dim, config.embedding_dim, init), {}, {}, {}};
    run.curve = train(run.model, standardized, config.sampler_config(), config.training_config());
    run.rules = fit_rules(run.model, standardized, config, 0, {});
    run.scores = anomaly_scores(run.model, run.rules, standardized);
    if (log != nullptr) {
        *log << tag << ": " << run.rules.rules.size() << " rules, epsilon "
             << format_double(run.rules.config.epsilon);
        if (!run.curve.empty()) {
            *log << ", loss " << format_double(run.curve.epoch_loss.front()) << " -> "
                 << format_double(run.curve.epoch_loss.back());
        }
        *log << '\n';
    }
    return run;
}

ReportRow evaluate_scores(const std::string& model_name, std::span<const double> scores, const Dataset& data,
                          const RunConfig& config, RocResult* roc) {
    if (scores.size() != data.size()) {
        throw DataError("evaluate: " + std::to_string(scores.size()) + " scores for " +
                        std::to_string(data.size()) + " records");
    }
    std::vector<ScoredLabel> labeled;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.records[i].label != Label::Unknown) labeled.push_back({scores[i], data.records[i].label});
    }
    if (labeled.empty()) {
        throw DataError("evaluate: no labeled records");
    }
    RocResult r = auroc(labeled);
    const double threshold =
        config.acc_threshold_mode == "best" ? best_accuracy_threshold(labeled) : config.acc_threshold;
    ReportRow row{model_name, accuracy(labeled, threshold), r.auroc};
    if (roc != nullptr) *roc = std::move(r);
    return row;
}

BenchmarkResult run_benchmark(const Dataset& raw, const RunConfig& config, std::ostream* log) {
    raw.validate();
    const Dataset standardized = apply_standardizer(fit_standardizer(raw), raw);
    BenchmarkResult result;
    result.report.seed = config.seed;
    result.report.config_echo = config.to_json().dump();
    for (Architecture arch : kModelZoo) {
        ModelRun run = run_model(arch, standardized, config, log);
        RocResult roc;
        result.report.rows.push_back(
            evaluate_scores(std::string(display_name(arch)), run.scores, raw, config, &roc));
        result.report.roc.push_back(std::move(roc.points));
        result.runs.push_back(std::move(run));
    }
    return result;
}

}  // namespace aml
