#pragma once

/// @file dataio.hpp
/// @brief Transaction records, CSV layouts, standardization and contrastive
/// pair sampling.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "aml/rng.hpp"

namespace aml {

enum class Label { Illicit, Licit, Unknown };

std::string_view label_name(Label label) noexcept;
Label parse_label(std::string_view text);

struct TransactionRecord {
    std::string id;
    std::vector<double> features;
    Label label = Label::Unknown;

    bool operator==(const TransactionRecord&) const = default;
};

/// Records sharing one feature dimension. Immutable once loaded.
struct Dataset {
    std::vector<TransactionRecord> records;
    std::size_t dim = 0;
    /// Number of edges read from an Elliptic edge list, if one was supplied.
    std::optional<std::size_t> edge_count;

    std::size_t size() const noexcept { return records.size(); }
    bool empty() const noexcept { return records.empty(); }

    /// Checks equal dimensions, finite features and unique ids.
    void validate() const;

    /// Row-major [size, dim] copy of the features.
    std::vector<double> feature_matrix() const;
    std::size_t count(Label label) const;
};

// --- Elliptic layout ------------------------------------------------------

/// Reads the Elliptic layout: a header-less features CSV (id, then features),
/// a classes CSV with header mapping id to "1" (illicit), "2" (licit) or
/// "unknown", and an optional edge list whose rows are only counted.
Dataset ingest_elliptic(const std::filesystem::path& features_path,
                        const std::filesystem::path& classes_path,
                        const std::optional<std::filesystem::path>& edges_path = std::nullopt);

void write_elliptic(const Dataset& data, const std::filesystem::path& features_path,
                    const std::filesystem::path& classes_path);

// --- Dataset CSV (id,label,f0..f{d-1}) -------------------------------------

void write_dataset_csv(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset_csv(const std::filesystem::path& path);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

// --- Standardization --------------------------------------------------------

struct StandardizationParams {
    std::vector<double> mean;
    /// Population standard deviation; 0 marks a constant feature.
    std::vector<double> stddev;

    bool is_constant(std::size_t j) const { return stddev.at(j) == 0.0; }
};

StandardizationParams fit_standardizer(const Dataset& data);
Dataset apply_standardizer(const StandardizationParams& params, const Dataset& data);

nlohmann::json to_json(const StandardizationParams& params);
StandardizationParams standardizer_from_json(const nlohmann::json& j);

// --- Contrastive pairs ------------------------------------------------------

struct PairSamplerConfig {
    std::size_t knn = 5;               ///< positive pool size k
    std::size_t negatives = 8;         ///< N negatives per anchor
    double negative_percentile = 50.0; ///< p: negatives lie beyond this percentile
};

struct PairBatch {
    std::vector<std::size_t> anchors;
    std::vector<std::size_t> positives;
    /// negatives[i] holds N indices for anchors[i].
    std::vector<std::vector<std::size_t>> negatives;
};

/// Per-anchor neighbourhoods precomputed once over a fixed feature matrix.
/// Positives come uniformly from the k nearest neighbours (Euclidean, ties by
/// index); negatives uniformly from records strictly farther than the anchor's
/// p-th distance percentile (linear interpolation over the other records).
class PairSampler {
public:
    PairSampler(std::span<const double> features, std::size_t rows, std::size_t dim,
                PairSamplerConfig config);
    explicit PairSampler(const Dataset& data, PairSamplerConfig config);

    PairBatch sample(std::span<const std::size_t> anchors, SeededRng& rng) const;

    std::size_t rows() const noexcept { return rows_; }
    const std::vector<std::size_t>& nearest(std::size_t anchor) const { return knn_[anchor]; }
    double negative_threshold(std::size_t anchor) const { return threshold_[anchor]; }
    const PairSamplerConfig& config() const noexcept { return config_; }

private:
    double distance(std::size_t a, std::size_t b) const;

    std::vector<double> features_;
    std::size_t rows_;
    std::size_t dim_;
    PairSamplerConfig config_;
    std::vector<std::vector<std::size_t>> knn_;
    std::vector<double> threshold_;
};

/// One PairBatch with every record as an anchor, in index order.
PairBatch sample_pairs(const Dataset& data, const PairSamplerConfig& config, SeededRng& rng);

// --- Synthetic data ---------------------------------------------------------

struct SyntheticSpec {
    std::size_t count = 2000;
    double anomaly_fraction = 0.05;
    std::size_t base_clusters = 2;
    double anomaly_offset = 6.0;  ///< in per-feature sigma units
    std::size_t dim = 16;
    std::uint64_t seed = 7;
};

/// Index of the "amount" and "frequency" features shifted by injected anomalies.
inline constexpr std::size_t kAmountFeature = 0;
inline constexpr std::size_t kFrequencyFeature = 1;

std::size_t anomaly_count(const SyntheticSpec& spec);

/// Gaussian base clusters (unit sigma) for normal records; anomalies start from
/// a base-cluster draw and are pushed +offset sigma along amount and frequency,
/// plus uniform jitter in [0, offset/2] sigma on each of the two.
Dataset generate_synthetic(const SyntheticSpec& spec);

}  // namespace aml
