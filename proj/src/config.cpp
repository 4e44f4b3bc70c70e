#include "aml/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>

#include "aml/error.hpp"
#include "aml/models.hpp"

namespace aml {

namespace {

enum class Kind { Int, UInt, Double, String, Epsilon };

const std::vector<std::pair<std::string, Kind>>& schema() {
    static const std::vector<std::pair<std::string, Kind>> s = {
        {"format_version", Kind::Int},
        {"seed", Kind::UInt},
        {"count", Kind::UInt},
        {"dim", Kind::UInt},
        {"anomaly_fraction", Kind::Double},
        {"base_clusters", Kind::UInt},
        {"anomaly_offset", Kind::Double},
        {"model", Kind::String},
        {"embedding_dim", Kind::UInt},
        {"temperature", Kind::Double},
        {"negatives", Kind::UInt},
        {"epochs", Kind::UInt},
        {"learning_rate", Kind::Double},
        {"batch_size", Kind::UInt},
        {"anchors_per_epoch", Kind::UInt},
        {"optimizer", Kind::String},
        {"abad_objective", Kind::String},
        {"knn", Kind::UInt},
        {"negative_percentile", Kind::Double},
        {"epsilon", Kind::Epsilon},
        {"min_pts", Kind::UInt},
        {"radius_percentile", Kind::Double},
        {"drift_threshold", Kind::Double},
        {"acc_threshold", Kind::Double},
        {"acc_threshold_mode", Kind::String},
        {"data", Kind::String},
        {"features", Kind::String},
        {"classes", Kind::String},
        {"edges", Kind::String},
        {"model_dir", Kind::String},
        {"rules", Kind::String},
        {"scores", Kind::String},
        {"report", Kind::String},
        {"audit_log", Kind::String},
        {"out", Kind::String},
    };
    return s;
}

Kind kind_of(const std::string& key) {
    for (const auto& [k, kind] : schema()) {
        if (k == key) return kind;
    }
    throw ConfigError("unknown config key '" + key + "'");
}

const char* kind_name(Kind k) {
    switch (k) {
        case Kind::Int: return "integer";
        case Kind::UInt: return "non-negative integer";
        case Kind::Double: return "number";
        case Kind::String: return "string";
        case Kind::Epsilon: return "positive number or \"auto\"";
    }
    return "value";
}

void check_type(const std::string& key, const nlohmann::json& v) {
    const Kind k = kind_of(key);
    bool ok = false;
    switch (k) {
        case Kind::Int: ok = v.is_number_integer(); break;
        case Kind::UInt: ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0); break;
        case Kind::Double: ok = v.is_number(); break;
        case Kind::String: ok = v.is_string(); break;
        case Kind::Epsilon: ok = v.is_number() || (v.is_string() && v.get<std::string>() == "auto"); break;
    }
    if (!ok) {
        throw ConfigError("config key '" + key + "' expects " + kind_name(k) + ", got " + v.dump());
    }
}

nlohmann::json parse_flag_value(const std::string& key, const std::string& text) {
    const Kind k = kind_of(key);
    auto fail = [&]() -> nlohmann::json {
        throw ConfigError("flag --" + flag_name(key) + " expects " + kind_name(k) + ", got '" + text + "'");
    };
    switch (k) {
        case Kind::String:
            return text;
        case Kind::Int: {
            long long v = 0;
            auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
            if (ec != std::errc{} || p != text.data() + text.size()) return fail();
            return v;
        }
        case Kind::UInt: {
            unsigned long long v = 0;
            auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
            if (ec != std::errc{} || p != text.data() + text.size()) return fail();
            return v;
        }
        case Kind::Epsilon:
            if (text == "auto") return text;
            [[fallthrough]];
        case Kind::Double: {
            double v = 0;
            auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
            if (ec != std::errc{} || p != text.data() + text.size()) return fail();
            return v;
        }
    }
    return fail();
}

}  // namespace

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [key, kind] : schema()) k.push_back(key);
        return k;
    }();
    return keys;
}

std::string flag_name(const std::string& key) {
    std::string s = key;
    for (char& c : s) {
        if (c == '_') c = '-';
    }
    return s;
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["format_version"] = format_version;
    j["seed"] = seed;
    j["count"] = count;
    j["dim"] = dim;
    j["anomaly_fraction"] = anomaly_fraction;
    j["base_clusters"] = base_clusters;
    j["anomaly_offset"] = anomaly_offset;
    j["model"] = model;
    j["embedding_dim"] = embedding_dim;
    j["temperature"] = temperature;
    j["negatives"] = negatives;
    j["epochs"] = epochs;
    j["learning_rate"] = learning_rate;
    j["batch_size"] = batch_size;
    j["anchors_per_epoch"] = anchors_per_epoch;
    j["optimizer"] = optimizer;
    j["abad_objective"] = abad_objective;
    j["knn"] = knn;
    j["negative_percentile"] = negative_percentile;
    j["epsilon"] = epsilon ? nlohmann::json(*epsilon) : nlohmann::json("auto");
    j["min_pts"] = min_pts;
    j["radius_percentile"] = radius_percentile;
    j["drift_threshold"] = drift_threshold;
    j["acc_threshold"] = acc_threshold;
    j["acc_threshold_mode"] = acc_threshold_mode;
    j["data"] = data;
    j["features"] = features;
    j["classes"] = classes;
    j["edges"] = edges;
    j["model_dir"] = model_dir;
    j["rules"] = rules;
    j["scores"] = scores;
    j["report"] = report;
    j["audit_log"] = audit_log;
    j["out"] = out;
    return j;
}

RunConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    for (const auto& [key, value] : j.items()) check_type(key, value);

    RunConfig c;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("format_version", c.format_version);
    get("seed", c.seed);
    get("count", c.count);
    get("dim", c.dim);
    get("anomaly_fraction", c.anomaly_fraction);
    get("base_clusters", c.base_clusters);
    get("anomaly_offset", c.anomaly_offset);
    get("model", c.model);
    get("embedding_dim", c.embedding_dim);
    get("temperature", c.temperature);
    get("negatives", c.negatives);
    get("epochs", c.epochs);
    get("learning_rate", c.learning_rate);
    get("batch_size", c.batch_size);
    get("anchors_per_epoch", c.anchors_per_epoch);
    get("optimizer", c.optimizer);
    get("abad_objective", c.abad_objective);
    get("knn", c.knn);
    get("negative_percentile", c.negative_percentile);
    if (j.contains("epsilon")) {
        const auto& e = j.at("epsilon");
        c.epsilon = e.is_string() ? std::nullopt : std::optional<double>(e.get<double>());
    }
    get("min_pts", c.min_pts);
    get("radius_percentile", c.radius_percentile);
    get("drift_threshold", c.drift_threshold);
    get("acc_threshold", c.acc_threshold);
    get("acc_threshold_mode", c.acc_threshold_mode);
    get("data", c.data);
    get("features", c.features);
    get("classes", c.classes);
    get("edges", c.edges);
    get("model_dir", c.model_dir);
    get("rules", c.rules);
    get("scores", c.scores);
    get("report", c.report);
    get("audit_log", c.audit_log);
    get("out", c.out);
    c.validate();
    return c;
}

void RunConfig::validate() const {
    auto bad = [](const std::string& key, const std::string& why) {
        throw ConfigError("config key '" + key + "': " + why);
    };
    if (format_version != kConfigFormatVersion) bad("format_version", "unsupported version " + std::to_string(format_version));
    if (dim < 2) bad("dim", "must be at least 2");
    if (count == 0) bad("count", "must be positive");
    if (!(anomaly_fraction >= 0.0 && anomaly_fraction <= 1.0)) bad("anomaly_fraction", "must lie in [0, 1]");
    if (base_clusters == 0) bad("base_clusters", "must be positive");
    if (!(anomaly_offset >= 0.0)) bad("anomaly_offset", "must be non-negative");
    try {
        parse_architecture(model);
    } catch (const ConfigError& e) {
        bad("model", e.what());
    }
    if (embedding_dim < 2) bad("embedding_dim", "must be at least 2");
    if (!(temperature > 0.0)) bad("temperature", "must be positive");
    if (negatives < 1) bad("negatives", "must be at least 1");
    if (!(learning_rate > 0.0)) bad("learning_rate", "must be positive");
    if (batch_size < 1) bad("batch_size", "must be at least 1");
    if (optimizer != "adam" && optimizer != "sgd") bad("optimizer", "expected \"adam\" or \"sgd\"");
    if (abad_objective != "joint" && abad_objective != "reconstruction") {
        bad("abad_objective", "expected \"joint\" or \"reconstruction\"");
    }
    if (knn < 1) bad("knn", "must be at least 1");
    if (!(negative_percentile >= 0.0 && negative_percentile <= 100.0)) bad("negative_percentile", "must lie in [0, 100]");
    if (epsilon && !(*epsilon > 0.0)) bad("epsilon", "must be positive or \"auto\"");
    if (min_pts < 2) bad("min_pts", "must be at least 2");
    if (!(radius_percentile > 0.0 && radius_percentile <= 100.0)) bad("radius_percentile", "must lie in (0, 100]");
    if (!(drift_threshold >= 0.0 && drift_threshold <= 1.0)) bad("drift_threshold", "must lie in [0, 1]");
    if (acc_threshold_mode != "fixed" && acc_threshold_mode != "best") {
        bad("acc_threshold_mode", "expected \"fixed\" or \"best\"");
    }
    if (out.empty()) bad("out", "must name an output directory");
}

SyntheticSpec RunConfig::synthetic_spec() const {
    SyntheticSpec s;
    s.count = count;
    s.dim = dim;
    s.anomaly_fraction = anomaly_fraction;
    s.base_clusters = base_clusters;
    s.anomaly_offset = anomaly_offset;
    s.seed = seed;
    return s;
}

TrainingConfig RunConfig::training_config() const {
    TrainingConfig t;
    t.temperature = temperature;
    t.negatives = negatives;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.anchors_per_epoch = anchors_per_epoch;
    t.learning_rate = learning_rate;
    t.optimizer = parse_optimizer_mode(optimizer);
    t.abad_objective = abad_objective == "reconstruction" ? AbadObjective::ReconstructionOnly : AbadObjective::Joint;
    t.seed = seed;
    return t;
}

PairSamplerConfig RunConfig::sampler_config() const {
    PairSamplerConfig p;
    p.knn = knn;
    p.negatives = negatives;
    p.negative_percentile = negative_percentile;
    return p;
}

RunConfig load_config(const std::optional<std::filesystem::path>& path,
                      const std::vector<std::pair<std::string, std::string>>& overrides) {
    nlohmann::json j = nlohmann::json::object();
    if (path) {
        std::ifstream in(*path, std::ios::binary);
        if (!in) {
            throw ConfigError("cannot open config '" + path->string() + "'");
        }
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        bool blank = true;
        for (char c : text) {
            if (!std::isspace(static_cast<unsigned char>(c))) blank = false;
        }
        if (!blank) {
            try {
                j = nlohmann::json::parse(text);
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError("config '" + path->string() + "': " + e.what());
            }
        }
        if (!j.is_object()) {
            throw ConfigError("config '" + path->string() + "' must hold a JSON object");
        }
        for (const auto& [key, value] : j.items()) check_type(key, value);
    }
    for (const auto& [key, text] : overrides) {
        j[key] = parse_flag_value(key, text);
    }
    return config_from_json(j);
}

}  // namespace aml
