#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "aml/error.hpp"
#include "aml/pipeline.hpp"

namespace aml {

namespace {

namespace fs = std::filesystem;

const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> names = {"generate", "ingest",   "train",     "cluster", "score",
                                                   "evaluate", "update-rules", "benchmark", "report"};
    return names;
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open '" + path.string() + "'");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write '" + path.string() + "'");
    }
    out << text;
}

// Tracks the files a run touches for the manifest.
struct Run {
    std::string subcommand;
    RunConfig config;
    std::ostream& log;
    fs::path out;
    std::vector<std::pair<std::string, std::string>> inputs;
    std::vector<std::string> outputs;

    fs::path input(const std::string& path, const std::string& key) {
        if (path.empty()) {
            throw ConfigError(subcommand + ": missing --" + flag_name(key));
        }
        if (!fs::exists(path)) {
            throw DataError(subcommand + ": " + flag_name(key) + " '" + path + "' does not exist");
        }
        if (fs::is_regular_file(path)) {
            inputs.emplace_back(path, fnv1a_hex(read_file(path)));
        }
        return path;
    }

    fs::path output(const std::string& name) {
        outputs.push_back((out / name).string());
        return out / name;
    }

    void note(const fs::path& path) { outputs.push_back(path.string()); }
};

Dataset load_dataset(Run& run) {
    const RunConfig& c = run.config;
    Dataset data;
    if (!c.data.empty()) {
        data = read_dataset_csv(run.input(c.data, "data"));
    } else if (!c.features.empty() || !c.classes.empty()) {
        std::optional<fs::path> edges;
        if (!c.edges.empty()) edges = run.input(c.edges, "edges");
        data = ingest_elliptic(run.input(c.features, "features"), run.input(c.classes, "classes"), edges);
    } else {
        throw ConfigError(run.subcommand + ": missing --data (or --features and --classes)");
    }
    if (data.empty()) {
        throw DataError(run.subcommand + ": dataset is empty");
    }
    return data;
}

struct LoadedModel {
    EncoderModel model;
    StandardizationParams standardizer;
};

LoadedModel load_model(Run& run) {
    const fs::path dir = run.input(run.config.model_dir, "model_dir");
    const fs::path model_path = run.input((dir / "model.json").string(), "model_dir");
    const fs::path std_path = run.input((dir / "standardizer.json").string(), "model_dir");
    nlohmann::json sj;
    try {
        sj = nlohmann::json::parse(read_file(std_path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std_path.string() + ": " + e.what());
    }
    return {EncoderModel::load(model_path), standardizer_from_json(sj)};
}

Dataset standardize_for(const LoadedModel& m, const Dataset& data) {
    if (data.dim != m.model.input_dim()) {
        throw DataError("dataset has " + std::to_string(data.dim) + " features, model expects " +
                        std::to_string(m.model.input_dim()));
    }
    return apply_standardizer(m.standardizer, data);
}

void cmd_generate(Run& run) {
    const Dataset data = generate_synthetic(run.config.synthetic_spec());
    write_dataset_csv(data, run.output("dataset.csv"));
    write_elliptic(data, run.output("elliptic_features.csv"), run.output("elliptic_classes.csv"));
    run.log << "generated " << data.size() << " records (" << data.count(Label::Illicit)
            << " anomalies), d=" << data.dim << '\n';
}

void cmd_ingest(Run& run) {
    const Dataset data = load_dataset(run);
    write_dataset_csv(data, run.output("dataset.csv"));
    run.log << "ingested " << data.size() << " records, d=" << data.dim << ", illicit "
            << data.count(Label::Illicit) << ", licit " << data.count(Label::Licit) << ", unknown "
            << data.count(Label::Unknown);
    if (data.edge_count) run.log << ", edges " << *data.edge_count;
    run.log << '\n';
}

void cmd_train(Run& run) {
    const Dataset data = load_dataset(run);
    const StandardizationParams params = fit_standardizer(data);
    const Dataset standardized = apply_standardizer(params, data);
    const Architecture arch = parse_architecture(run.config.model);
    SeededRng init = SeededRng::derive(run.config.seed, "init/" + run.config.model);
    EncoderModel model = EncoderModel::build(arch, data.dim, run.config.embedding_dim, init);
    const LossCurve curve = train(model, standardized, run.config.sampler_config(), run.config.training_config());
    model.save(run.output("model.json"));
    write_text(run.output("standardizer.json"), to_json(params).dump() + "\n");
    write_loss_curve_csv(curve, run.output("loss_curve.csv"));
    run.log << "trained " << run.config.model << " for " << curve.size() << " epochs";
    if (!curve.empty()) {
        run.log << ", loss " << format_double(curve.epoch_loss.front()) << " -> "
                << format_double(curve.epoch_loss.back());
    }
    run.log << '\n';
}

void cmd_cluster(Run& run) {
    const LoadedModel m = load_model(run);
    const Dataset standardized = standardize_for(m, load_dataset(run));
    const RuleSet rules = fit_rules(m.model, standardized, run.config, 0, utc_timestamp());
    save_rules(rules, run.output("rules.json"));
    run.log << "derived " << rules.rules.size() << " rules (" << rules.tag() << "), epsilon "
            << format_double(rules.config.epsilon) << '\n';
}

void cmd_score(Run& run) {
    const LoadedModel m = load_model(run);
    const Dataset data = load_dataset(run);
    const Dataset standardized = standardize_for(m, data);
    const RuleSet rules = load_rules(run.input(run.config.rules, "rules"));
    const auto scores = anomaly_scores(m.model, rules, standardized);
    std::vector<double> z;
    if (!m.model.has_decoder()) {
        z = embed_rows(m.model, standardized.feature_matrix(), standardized.size());
    }
    std::ostringstream csv;
    csv << "id,score,verdict,rule_id\n";
    std::size_t flagged = 0;
    const std::size_t e = m.model.embedding_dim();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const bool anomalous = scores[i] > 1.0;
        flagged += anomalous ? 1 : 0;
        csv << data.records[i].id << ',' << format_double(scores[i]) << ','
            << (anomalous ? "anomalous" : "normal") << ',';
        if (!z.empty()) {
            const auto s = score(rules, std::span<const double>(z).subspan(i * e, e));
            if (s.rule_id) csv << *s.rule_id;
        }
        csv << '\n';
    }
    write_text(run.output("scores.csv"), csv.str());
    run.log << "scored " << data.size() << " records against " << rules.tag() << ", " << flagged
            << " anomalous\n";
}

std::map<std::string, double> read_scores(const fs::path& path) {
    std::istringstream in(read_file(path));
    std::string line;
    std::map<std::string, double> out;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 1 || line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
        if (c1 == std::string::npos) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected id,score,...");
        }
        try {
            out[line.substr(0, c1)] = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
        } catch (const std::exception&) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": non-numeric score");
        }
    }
    return out;
}

void cmd_evaluate(Run& run) {
    const Dataset data = load_dataset(run);
    const auto by_id = read_scores(run.input(run.config.scores, "scores"));
    std::vector<double> scores;
    for (const auto& r : data.records) {
        const auto it = by_id.find(r.id);
        if (it == by_id.end()) {
            throw DataError("evaluate: no score for record '" + r.id + "'");
        }
        scores.push_back(it->second);
    }
    EvaluationReport report;
    report.seed = run.config.seed;
    report.config_echo = run.config.to_json().dump();
    RocResult roc;
    const auto arch = parse_architecture(run.config.model);
    report.rows.push_back(evaluate_scores(std::string(display_name(arch)), scores, data, run.config, &roc));
    report.roc.push_back(std::move(roc.points));
    for (const auto& p : write_report(report, run.out)) run.note(p);
    run.log << render_report_table(report);
}

void cmd_update_rules(Run& run) {
    const LoadedModel m = load_model(run);
    const Dataset standardized = standardize_for(m, load_dataset(run));
    const RuleSet active = load_rules(run.input(run.config.rules, "rules"));
    RunConfig cc = run.config;
    if (!cc.epsilon) cc.epsilon = active.config.epsilon;
    const std::string now = utc_timestamp();
    const RuleSet candidate = fit_rules(m.model, standardized, cc, active.version + 1, now);
    const auto z = embed_rows(m.model, standardized.feature_matrix(), standardized.size());
    const UpdateDecision decision =
        maybe_update(active, candidate, run.config.drift_threshold, Points{z, m.model.embedding_dim()});
    save_rules(candidate, run.output("candidate_rules.json"));
    save_rules(decision.active, run.output("rules.json"));
    const fs::path audit = run.config.audit_log.empty() ? run.out / "audit_log.csv" : fs::path(run.config.audit_log);
    append_audit_log(audit, decision, now);
    run.note(audit);
    run.log << "drift " << format_double(decision.drift) << " vs threshold " << format_double(decision.threshold)
            << ": " << (decision.adopted ? "adopted " + decision.to_tag : "kept " + decision.from_tag) << '\n';
}

void cmd_benchmark(Run& run) {
    Dataset raw;
    if (run.config.data.empty() && run.config.features.empty() && run.config.classes.empty()) {
        raw = generate_synthetic(run.config.synthetic_spec());
        run.log << "benchmark on synthetic data: " << raw.size() << " records, d=" << raw.dim << '\n';
    } else {
        raw = load_dataset(run);
    }
    const BenchmarkResult result = run_benchmark(raw, run.config, &run.log);
    for (const auto& p : write_report(result.report, run.out)) run.note(p);
    for (const auto& r : result.runs) {
        const std::string tag(architecture_tag(r.architecture));
        write_loss_curve_csv(r.curve, run.output("loss_" + tag + ".csv"));
        save_rules(r.rules, run.output("rules_" + tag + ".json"));
    }
    run.log << render_report_table(result.report);
}

void cmd_report(Run& run) {
    const EvaluationReport report = read_report_csv(run.input(run.config.report, "report"));
    const std::string table = render_report_table(report);
    write_text(run.output("report.txt"), table);
    run.log << table;
}

void write_manifest(const Run& run, double seconds) {
    const std::string config_text = run.config.to_json().dump();
    nlohmann::json inputs = nlohmann::json::array();
    for (const auto& [path, digest] : run.inputs) inputs.push_back({{"path", path}, {"fnv1a64", digest}});
    nlohmann::json manifest = {{"subcommand", run.subcommand},
                               {"config_hash", fnv1a_hex(config_text)},
                               {"seed", run.config.seed},
                               {"inputs", inputs},
                               {"outputs", run.outputs},
                               {"duration_seconds", seconds}};
    write_text(run.out / "config.json", run.config.to_json().dump(2) + "\n");
    write_text(run.out / "manifest.json", manifest.dump(2) + "\n");
}

int dispatch(const std::string& name, const RunConfig& config, std::ostream& log) {
    const auto start = std::chrono::steady_clock::now();
    Run run{name, config, log, fs::path(config.out), {}, {}};
    std::error_code ec;
    fs::create_directories(run.out, ec);
    if (ec) {
        throw DataError("cannot create output directory '" + config.out + "': " + ec.message());
    }
    if (name == "generate") cmd_generate(run);
    else if (name == "ingest") cmd_ingest(run);
    else if (name == "train") cmd_train(run);
    else if (name == "cluster") cmd_cluster(run);
    else if (name == "score") cmd_score(run);
    else if (name == "evaluate") cmd_evaluate(run);
    else if (name == "update-rules") cmd_update_rules(run);
    else if (name == "benchmark") cmd_benchmark(run);
    else if (name == "report") cmd_report(run);
    else throw ConfigError("unknown subcommand '" + name + "'");
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    write_manifest(run, elapsed.count());
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Contrastive embedding rules for transaction anomaly detection"};
    app.set_help_flag("-h,--help", "Show help");
    std::string subcommand;
    std::string config_path;
    app.add_option("subcommand", subcommand, "One of: generate, ingest, train, cluster, score, evaluate, "
                                             "update-rules, benchmark, report")
        ->required()
        ->check(CLI::IsMember(subcommands()));
    app.add_option("--config", config_path, "JSON run configuration");
    std::map<std::string, std::string> flag_values;
    std::map<std::string, CLI::Option*> flag_options;
    for (const auto& key : config_keys()) {
        flag_options[key] = app.add_option("--" + flag_name(key), flag_values[key], "overrides '" + key + "'");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }

    try {
        std::vector<std::pair<std::string, std::string>> overrides;
        for (const auto& key : config_keys()) {
            if (flag_options[key]->count() > 0) overrides.emplace_back(key, flag_values[key]);
        }
        const RunConfig config =
            load_config(config_path.empty() ? std::nullopt : std::optional<fs::path>(config_path), overrides);
        return dispatch(subcommand, config, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 1;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return 2;
    } catch (const ShapeError& e) {
        err << "data error: " << e.what() << '\n';
        return 2;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace aml
