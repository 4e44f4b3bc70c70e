#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "aml/config.hpp"
#include "aml/error.hpp"
#include "aml/pipeline.hpp"
#include "test_support.hpp"

using namespace aml;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code = 0;
    std::string out;
    std::string err;
};

CliResult cli(std::vector<std::string> args) {
    args.insert(args.begin(), "amlrules");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write(const fs::path& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

nlohmann::json read_json(const fs::path& path) { return nlohmann::json::parse(slurp(path)); }

// Small settings so the pipeline runs in about a second.
std::vector<std::string> small(std::vector<std::string> args) {
    for (const char* a : {"--count", "300", "--dim", "8", "--embedding-dim", "8", "--epochs", "2",
                          "--anchors-per-epoch", "64", "--batch-size", "32"}) {
        args.emplace_back(a);
    }
    return args;
}

}  // namespace

TEST_CASE("config: no file and no flags gives the defaults") {
    const RunConfig c = load_config(std::nullopt);
    CHECK(c.seed == 7);
    CHECK(c.temperature == 0.1);
    CHECK(c.negatives == 8);
    CHECK_FALSE(c.epsilon.has_value());
    CHECK(c.min_pts == 5);
    CHECK(c.drift_threshold == 0.2);
    CHECK(c.model == "CRNIM");
}

TEST_CASE("config: an empty JSON object gives the defaults") {
    const auto dir = aml::testing::scratch_dir("cfg_empty");
    write(dir / "c.json", "{}");
    CHECK(load_config(dir / "c.json").to_json() == RunConfig{}.to_json());
}

TEST_CASE("config: flags override the file which overrides defaults") {
    const auto dir = aml::testing::scratch_dir("cfg_precedence");
    write(dir / "c.json", R"({"temperature": 0.2, "min_pts": 9})");
    const RunConfig from_file = load_config(dir / "c.json");
    CHECK(from_file.temperature == 0.2);
    CHECK(from_file.min_pts == 9);
    const RunConfig flagged = load_config(dir / "c.json", {{"temperature", "0.05"}});
    CHECK(flagged.temperature == 0.05);
    CHECK(flagged.min_pts == 9);
}

TEST_CASE("config: epsilon accepts auto or a positive number") {
    CHECK_FALSE(load_config(std::nullopt, {{"epsilon", "auto"}}).epsilon.has_value());
    CHECK(load_config(std::nullopt, {{"epsilon", "0.75"}}).epsilon == 0.75);
    CHECK_THROWS_AS(load_config(std::nullopt, {{"epsilon", "-1"}}), ConfigError);
    CHECK_THROWS_AS(load_config(std::nullopt, {{"epsilon", "wide"}}), ConfigError);
}

TEST_CASE("config: unknown keys and type mismatches name the key") {
    const auto dir = aml::testing::scratch_dir("cfg_bad");
    write(dir / "typo.json", R"({"temprature": 0.2})");
    CHECK_THROWS_WITH_AS(load_config(dir / "typo.json"), doctest::Contains("temprature"), ConfigError);
    write(dir / "type.json", R"({"min_pts": "five"})");
    CHECK_THROWS_WITH_AS(load_config(dir / "type.json"), doctest::Contains("min_pts"), ConfigError);
    write(dir / "neg.json", R"({"epochs": -3})");
    CHECK_THROWS_AS(load_config(dir / "neg.json"), ConfigError);
    write(dir / "broken.json", "{not json");
    CHECK_THROWS_AS(load_config(dir / "broken.json"), ConfigError);
    CHECK_THROWS_WITH_AS(load_config(std::nullopt, {{"negatives", "2.5"}}), doctest::Contains("negatives"), ConfigError);
    CHECK_THROWS_AS(load_config(std::nullopt, {{"model", "Transformer"}}), ConfigError);
    CHECK_THROWS_AS(load_config(std::nullopt, {{"temperature", "0"}}), ConfigError);
}

TEST_CASE("config: JSON echo reloads to the same config") {
    RunConfig c = load_config(std::nullopt, {{"epsilon", "1.5"}, {"seed", "99"}, {"model", "ABAD"}});
    CHECK(config_from_json(c.to_json()).to_json() == c.to_json());
    CHECK(flag_name("anomaly_fraction") == "anomaly-fraction");
    for (const auto& key : config_keys()) CHECK(c.to_json().contains(key));
}

TEST_CASE("cli: bad flags and config errors exit 1") {
    const auto dir = aml::testing::scratch_dir("cli_errors");
    write(dir / "typo.json", R"({"temprature": 0.2})");
    auto r = cli({"generate", "--config", (dir / "typo.json").string(), "--out", (dir / "a").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("temprature") != std::string::npos);
    CHECK(cli({"generate", "--min-pts", "many", "--out", (dir / "b").string()}).code == 1);
    CHECK(cli({"generate", "--no-such-flag", "1"}).code == 1);
    CHECK(cli({"launch"}).code == 1);
    CHECK(cli({}).code == 1);
    CHECK(cli({"train", "--out", (dir / "c").string()}).code == 1);
    const auto help = cli({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("--drift-threshold") != std::string::npos);
}

TEST_CASE("cli: missing or malformed input files exit 2") {
    const auto dir = aml::testing::scratch_dir("cli_data_errors");
    auto r = cli({"train", "--data", (dir / "nope.csv").string(), "--out", (dir / "a").string()});
    CHECK(r.code == 2);
    write(dir / "bad.csv", "id,label,f0\nt1,licit,abc\n");
    CHECK(cli({"train", "--data", (dir / "bad.csv").string(), "--out", (dir / "b").string()}).code == 2);
}

TEST_CASE("cli: generate twice gives byte-identical files") {
    const auto dir = aml::testing::scratch_dir("cli_generate");
    for (const char* sub : {"a", "b"}) {
        REQUIRE(cli({"generate", "--count", "2000", "--anomaly-fraction", "0.05", "--seed", "7", "--out",
                     (dir / sub).string()})
                    .code == 0);
    }
    for (const char* f : {"dataset.csv", "elliptic_features.csv", "elliptic_classes.csv"}) {
        INFO(f);
        CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
        CHECK_FALSE(slurp(dir / "a" / f).empty());
    }
    auto ca = read_json(dir / "a" / "config.json"), cb = read_json(dir / "b" / "config.json");
    ca.erase("out");
    cb.erase("out");
    CHECK(ca == cb);
    const auto other = cli({"generate", "--count", "2000", "--seed", "8", "--out", (dir / "c").string()});
    REQUIRE(other.code == 0);
    CHECK(slurp(dir / "a" / "dataset.csv") != slurp(dir / "c" / "dataset.csv"));
}

TEST_CASE("cli: ingest of generated Elliptic files reproduces the dataset") {
    const auto dir = aml::testing::scratch_dir("cli_ingest");
    REQUIRE(cli({"generate", "--count", "200", "--out", (dir / "gen").string()}).code == 0);
    const auto r = cli({"ingest", "--features", (dir / "gen" / "elliptic_features.csv").string(), "--classes",
                        (dir / "gen" / "elliptic_classes.csv").string(), "--out", (dir / "ing").string()});
    REQUIRE(r.code == 0);
    CHECK(slurp(dir / "ing" / "dataset.csv") == slurp(dir / "gen" / "dataset.csv"));
}

TEST_CASE("cli: every run writes a manifest and the effective config") {
    const auto dir = aml::testing::scratch_dir("cli_manifest");
    REQUIRE(cli({"generate", "--count", "100", "--seed", "3", "--out", (dir / "g").string()}).code == 0);
    const auto m = read_json(dir / "g" / "manifest.json");
    CHECK(m["subcommand"] == "generate");
    CHECK(m["seed"] == 3);
    CHECK(m["outputs"].size() == 3);
    CHECK(m["duration_seconds"].get<double>() >= 0.0);
    CHECK(m["config_hash"].get<std::string>().size() == 16);
    const auto cfg = read_json(dir / "g" / "config.json");
    CHECK(cfg["count"] == 100);
    CHECK(fnv1a_hex(cfg.dump()) == m["config_hash"]);
    // The echoed config reproduces the run.
    REQUIRE(cli({"generate", "--config", (dir / "g" / "config.json").string(), "--out", (dir / "h").string()}).code == 0);
    CHECK(slurp(dir / "g" / "dataset.csv") == slurp(dir / "h" / "dataset.csv"));

    REQUIRE(cli({"ingest", "--data", (dir / "g" / "dataset.csv").string(), "--out", (dir / "i").string()}).code == 0);
    const auto mi = read_json(dir / "i" / "manifest.json");
    REQUIRE(mi["inputs"].size() == 1);
    CHECK(mi["inputs"][0]["fnv1a64"] == fnv1a_hex(slurp(dir / "g" / "dataset.csv")));
}

TEST_CASE("fnv1a reference values") {
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
    CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
    CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("cli: generate, train, cluster, score, evaluate, update-rules and report chain together") {
    const auto dir = aml::testing::scratch_dir("cli_chain");
    const std::string data = (dir / "gen" / "dataset.csv").string();
    const std::string model_dir = (dir / "train").string();
    REQUIRE(cli(small({"generate", "--out", (dir / "gen").string()})).code == 0);

    auto r = cli(small({"train", "--data", data, "--out", model_dir}));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    for (const char* f : {"model.json", "standardizer.json", "loss_curve.csv"}) CHECK(fs::exists(dir / "train" / f));
    CHECK(slurp(dir / "train" / "loss_curve.csv").rfind("epoch,mean_loss\n1,", 0) == 0);

    r = cli(small({"cluster", "--data", data, "--model-dir", model_dir, "--out", (dir / "cluster").string()}));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const RuleSet r0 = load_rules(dir / "cluster" / "rules.json");
    CHECK(r0.tag() == "R0");
    CHECK(r0.dataset_size == 300);

    r = cli(small({"score", "--data", data, "--model-dir", model_dir, "--rules", (dir / "cluster" / "rules.json").string(),
                   "--out", (dir / "score").string()}));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto scores = slurp(dir / "score" / "scores.csv");
    CHECK(scores.rfind("id,score,verdict,rule_id\n", 0) == 0);
    CHECK(std::count(scores.begin(), scores.end(), '\n') == 301);

    r = cli(small({"evaluate", "--data", data, "--scores", (dir / "score" / "scores.csv").string(), "--out",
                   (dir / "eval").string()}));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto report = read_report_csv(dir / "eval" / "report.csv");
    REQUIRE(report.rows.size() == 1);
    CHECK(report.rows[0].model == "Ours(CRNIM)");
    CHECK(report.rows[0].auroc >= 0.0);
    CHECK(report.rows[0].auroc <= 1.0);

    // Same rules against the same data: no drift, nothing adopted.
    const std::string audit = (dir / "audit.csv").string();
    r = cli(small({"update-rules", "--data", data, "--model-dir", model_dir, "--rules",
                   (dir / "cluster" / "rules.json").string(), "--audit-log", audit, "--out", (dir / "upd").string()}));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(load_rules(dir / "upd" / "rules.json").version == 0);
    CHECK(load_rules(dir / "upd" / "candidate_rules.json").version == 1);

    // A threshold of 0 adopts any candidate that differs at all; a shifted
    // cohort forces a difference.
    r = cli(small({"generate", "--seed", "8", "--anomaly-fraction", "0.3", "--out", (dir / "gen2").string()}));
    REQUIRE(r.code == 0);
    r = cli(small({"update-rules", "--data", (dir / "gen2" / "dataset.csv").string(), "--model-dir", model_dir,
                   "--rules", (dir / "cluster" / "rules.json").string(), "--drift-threshold", "0", "--audit-log",
                   audit, "--out", (dir / "upd2").string()}));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto log = slurp(audit);
    CHECK(log.rfind("version_from,version_to,drift,theta,adopted,timestamp\nR0,R0,0,0.2,false,", 0) == 0);
    CHECK(log.find("\nR0,R1,") != std::string::npos);
    CHECK(load_rules(dir / "upd2" / "rules.json").version == 1);

    r = cli({"report", "--report", (dir / "eval" / "report.csv").string(), "--out", (dir / "rep").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.rfind("Model, ACC, AUROC\nOurs(CRNIM), ", 0) == 0);
    CHECK(slurp(dir / "rep" / "report.txt") == r.out);
}

TEST_CASE("cli: evaluate with one labeled class exits 2 naming the problem") {
    const auto dir = aml::testing::scratch_dir("cli_single_class");
    write(dir / "data.csv", "id,label,f0\na,licit,0\nb,licit,1\nc,unknown,2\n");
    write(dir / "scores.csv", "id,score,verdict\na,0.5,normal\nb,2,anomalous\nc,1,normal\n");
    const auto r = cli({"evaluate", "--data", (dir / "data.csv").string(), "--scores", (dir / "scores.csv").string(),
                        "--out", (dir / "out").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("single class") != std::string::npos);
}

TEST_CASE("cli: a diverging run exits 3") {
    const auto dir = aml::testing::scratch_dir("cli_numeric");
    REQUIRE(cli(small({"generate", "--out", (dir / "gen").string()})).code == 0);
    const auto r = cli(small({"train", "--data", (dir / "gen" / "dataset.csv").string(), "--learning-rate", "1e300",
                              "--optimizer", "sgd", "--out", (dir / "train").string()}));
    CHECK(r.code == 3);
    CHECK(r.err.find("epoch") != std::string::npos);
}

TEST_CASE("cli: benchmark reports six models in table order, reproducibly") {
    const auto dir = aml::testing::scratch_dir("cli_benchmark");
    for (const char* sub : {"a", "b"}) {
        const auto r = cli(small({"benchmark", "--out", (dir / sub).string()}));
        REQUIRE_MESSAGE(r.code == 0, r.err);
    }
    const auto report = read_report_csv(dir / "a" / "report.csv");
    REQUIRE(report.rows.size() == 6);
    const std::vector<std::string> order{"Simple CNN", "Deep CNN", "CNN-LSTM", "ABAD", "Hybrid CNN-GRU", "Ours(CRNIM)"};
    for (std::size_t i = 0; i < 6; ++i) CHECK(report.rows[i].model == order[i]);
    CHECK(slurp(dir / "a" / "report.csv") == slurp(dir / "b" / "report.csv"));
    for (Architecture arch : kModelZoo) {
        const std::string tag(architecture_tag(arch));
        CHECK(fs::exists(dir / "a" / ("loss_" + tag + ".csv")));
        CHECK(fs::exists(dir / "a" / ("rules_" + tag + ".json")));
    }
}

TEST_CASE("the installed binary reports exit codes") {
    const char* bin = std::getenv("AMLRULES_BIN");
    if (bin == nullptr) {
        MESSAGE("AMLRULES_BIN not set; skipped");
        return;
    }
    const auto dir = aml::testing::scratch_dir("cli_binary");
    auto status = [](const std::string& cmd) {
        const int raw = std::system((cmd + " >/dev/null 2>&1").c_str());
        return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    };
    const std::string b = std::string("'") + bin + "'";
    CHECK(status(b + " --help") == 0);
    CHECK(status(b + " generate --count 50 --out '" + (dir / "ok").string() + "'") == 0);
    CHECK(status(b + " generate --temprature 1") == 1);
    CHECK(status(b + " train --data '" + (dir / "none.csv").string() + "' --out '" + (dir / "x").string() + "'") == 2);
}
