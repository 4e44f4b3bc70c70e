#pragma once

/// @file rules.hpp
/// @brief Density clustering of embeddings into normal-transaction rules,
/// anomaly scoring against a rule set, and drift-gated rule updates.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace aml {

/// Read-only view of row-major points.
struct Points {
    std::span<const double> data;
    std::size_t dim = 0;

    std::size_t rows() const noexcept { return dim == 0 ? 0 : data.size() / dim; }
    std::span<const double> row(std::size_t i) const { return data.subspan(i * dim, dim); }
};

double euclidean_distance(std::span<const double> a, std::span<const double> b);

struct ClusterConfig {
    double epsilon = 0.0;
    std::size_t min_pts = 5;
    double radius_percentile = 95.0;

    void validate() const;
    bool operator==(const ClusterConfig&) const = default;
};

inline constexpr int kNoise = -1;

/// k-distance heuristic: median over points of the distance to their
/// min_pts-th nearest other point.
double auto_epsilon(Points points, std::size_t min_pts);

/// DBSCAN. Two points are neighbours when their distance is strictly below
/// epsilon; a core point has at least min_pts neighbours counting itself.
/// Points are visited in index order and clusters are numbered in order of
/// discovery; a border point reachable from several clusters keeps the first.
std::vector<int> cluster(Points points, const ClusterConfig& config);

struct Rule {
    int id = 0;
    std::vector<double> centroid;
    double radius = 0.0;
    std::size_t members = 0;

    bool operator==(const Rule&) const = default;
};

struct RuleSet {
    std::uint64_t version = 0;
    std::vector<Rule> rules;
    std::size_t dataset_size = 0;
    ClusterConfig config;
    std::string created;
    /// Set when clustering produced no clusters; every point then scores anomalous.
    bool no_clusters = false;

    /// "R0", "R1", ...
    std::string tag() const { return "R" + std::to_string(version); }
    bool empty() const noexcept { return rules.empty(); }
    bool operator==(const RuleSet&) const = default;
};

/// One rule per cluster: centroid is the member mean, radius the q-th
/// percentile (linear interpolation) of member-to-centroid distances, floored
/// at epsilon/10.
RuleSet derive_rules(Points points, std::span<const int> assignment, const ClusterConfig& config,
                     std::uint64_t version, std::string created = {});

struct RuleScore {
    /// min over rules of distance/radius; max double when the set is empty.
    double score = 0.0;
    std::optional<int> rule_id;

    bool anomalous() const noexcept { return score > 1.0; }
};

RuleScore score(const RuleSet& rules, std::span<const double> embedding);

struct RuleMatch {
    int from_id;
    std::optional<int> to_id;
};

struct DriftReport {
    /// Fraction of reference points whose verdict or matched nearest rule changed.
    double drift = 0.0;
    double verdict_change_fraction = 0.0;
    double assignment_change_fraction = 0.0;
    /// One entry per rule of the older set.
    std::vector<RuleMatch> matches;
    std::vector<int> unmatched_to;
    double unmatched_from_fraction = 0.0;
    double unmatched_to_fraction = 0.0;
};

/// Greedy centroid matching (globally closest pair first, ties by index)
/// followed by a verdict/assignment comparison over the reference cohort.
DriftReport rule_drift(const RuleSet& from, const RuleSet& to, Points reference);

struct UpdateDecision {
    RuleSet active;
    bool adopted = false;
    double drift = 0.0;
    double threshold = 0.0;
    std::string from_tag;
    std::string to_tag;
};

/// Adopts the candidate (as version active.version + 1) iff drift > threshold.
UpdateDecision maybe_update(const RuleSet& active, const RuleSet& candidate, double threshold,
                            Points reference);

/// Appends `version_from,version_to,drift,theta,adopted,timestamp`, writing
/// the header first when the file is new.
void append_audit_log(const std::filesystem::path& path, const UpdateDecision& decision,
                      const std::string& timestamp);

nlohmann::json to_json(const RuleSet& rules);
RuleSet ruleset_from_json(const nlohmann::json& j);
void save_rules(const RuleSet& rules, const std::filesystem::path& path);
RuleSet load_rules(const std::filesystem::path& path);

/// Current rule version shared between scorers and the updater. Readers get
/// an immutable snapshot; publish swaps the whole set at once.
class ActiveRules {
public:
    explicit ActiveRules(RuleSet initial)
        : current_(std::make_shared<const RuleSet>(std::move(initial))) {}

    std::shared_ptr<const RuleSet> snapshot() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return current_;
    }

    void publish(RuleSet next) {
        auto ptr = std::make_shared<const RuleSet>(std::move(next));
        std::lock_guard<std::mutex> lock(mutex_);
        current_ = std::move(ptr);
    }

private:
    mutable std::mutex mutex_;
    std::shared_ptr<const RuleSet> current_;
};

}  // namespace aml
