#pragma once

/// @file config.hpp
/// @brief Run configuration: documented defaults, JSON file, flag overrides.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "aml/dataio.hpp"
#include "aml/rules.hpp"
#include "aml/training.hpp"

namespace aml {

inline constexpr int kConfigFormatVersion = 1;

struct RunConfig {
    int format_version = kConfigFormatVersion;
    std::uint64_t seed = 7;

    // synthetic data
    std::size_t count = 2000;
    std::size_t dim = 16;
    double anomaly_fraction = 0.05;
    std::size_t base_clusters = 2;
    double anomaly_offset = 6.0;

    // model + training
    std::string model = "CRNIM";
    std::size_t embedding_dim = 32;
    double temperature = 0.1;
    std::size_t negatives = 8;
    std::size_t epochs = 30;
    double learning_rate = 1e-3;
    std::size_t batch_size = 64;
    std::size_t anchors_per_epoch = 512;
    std::string optimizer = "adam";
    std::string abad_objective = "joint";
    std::size_t knn = 5;
    double negative_percentile = 50.0;

    // clustering + rules
    std::optional<double> epsilon;  ///< nullopt = "auto"
    std::size_t min_pts = 5;
    double radius_percentile = 95.0;
    double drift_threshold = 0.2;

    // evaluation
    double acc_threshold = 1.0;
    std::string acc_threshold_mode = "fixed";

    // paths
    std::string data;
    std::string features;
    std::string classes;
    std::string edges;
    std::string model_dir;
    std::string rules;
    std::string scores;
    std::string report;
    std::string audit_log;
    std::string out = "run";

    nlohmann::json to_json() const;
    void validate() const;

    SyntheticSpec synthetic_spec() const;
    TrainingConfig training_config() const;
    PairSamplerConfig sampler_config() const;
};

/// Every accepted key, in documentation order.
const std::vector<std::string>& config_keys();

/// snake_case key -> kebab-case flag name (without the leading dashes).
std::string flag_name(const std::string& key);

/// Defaults, then the JSON file (if any), then flag overrides given as raw
/// text. Throws ConfigError naming the key on unknown keys, type mismatches or
/// out-of-range values.
RunConfig load_config(const std::optional<std::filesystem::path>& path,
                      const std::vector<std::pair<std::string, std::string>>& overrides = {});

RunConfig config_from_json(const nlohmann::json& j);

}  // namespace aml
