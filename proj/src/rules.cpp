#include "aml/rules.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <tuple>

#include "aml/dataio.hpp"
#include "aml/error.hpp"

namespace aml {

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("euclidean_distance: length mismatch " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

void ClusterConfig::validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
        throw ConfigError("cluster: epsilon must be positive, got " + format_double(epsilon));
    }
    if (min_pts < 2) {
        throw ConfigError("cluster: min_pts must be at least 2, got " + std::to_string(min_pts));
    }
    if (!(radius_percentile > 0.0 && radius_percentile <= 100.0)) {
        throw ConfigError("cluster: radius percentile must lie in (0, 100], got " +
                          format_double(radius_percentile));
    }
}

double auto_epsilon(Points points, std::size_t min_pts) {
    const std::size_t n = points.rows();
    if (n < 2) {
        throw DataError("auto_epsilon: need at least two points");
    }
    const std::size_t k = std::min(min_pts, n - 1);
    std::vector<double> kdist(n);
    std::vector<double> dist(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t m = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) dist[m++] = euclidean_distance(points.row(i), points.row(j));
        }
        std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
        kdist[i] = dist[k - 1];
    }
    std::sort(kdist.begin(), kdist.end());
    const double median = n % 2 == 1 ? kdist[n / 2] : 0.5 * (kdist[n / 2 - 1] + kdist[n / 2]);
    // All-duplicate data gives a zero median; any positive radius then works.
    return median > 0.0 ? median : 1e-9;
}

namespace {

std::vector<std::size_t> region(Points points, std::size_t i, double eps) {
    std::vector<std::size_t> out;
    const auto p = points.row(i);
    for (std::size_t j = 0; j < points.rows(); ++j) {
        if (euclidean_distance(p, points.row(j)) < eps) out.push_back(j);
    }
    return out;
}

double percentile_linear(std::vector<double> values, double q) {
    std::sort(values.begin(), values.end());
    const double rank = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (rank - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace

std::vector<int> cluster(Points points, const ClusterConfig& config) {
    config.validate();
    constexpr int kUnvisited = -2;
    const std::size_t n = points.rows();
    std::vector<int> label(n, kUnvisited);
    int next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (label[i] != kUnvisited) continue;
        auto seeds = region(points, i, config.epsilon);
        if (seeds.size() < config.min_pts) {
            label[i] = kNoise;
            continue;
        }
        const int id = next++;
        label[i] = id;
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            const std::size_t q = seeds[s];
            if (label[q] == kNoise) label[q] = id;  // border point
            if (label[q] != kUnvisited) continue;
            label[q] = id;
            auto more = region(points, q, config.epsilon);
            if (more.size() >= config.min_pts) {
                seeds.insert(seeds.end(), more.begin(), more.end());
            }
        }
    }
    return label;
}

RuleSet derive_rules(Points points, std::span<const int> assignment, const ClusterConfig& config,
                     std::uint64_t version, std::string created) {
    config.validate();
    if (assignment.size() != points.rows()) {
        throw ShapeError("derive_rules: " + std::to_string(assignment.size()) + " labels for " +
                         std::to_string(points.rows()) + " points");
    }
    RuleSet set;
    set.version = version;
    set.dataset_size = points.rows();
    set.config = config;
    set.created = std::move(created);

    int clusters = 0;
    for (int a : assignment) clusters = std::max(clusters, a + 1);
    for (int c = 0; c < clusters; ++c) {
        Rule rule;
        rule.id = c;
        rule.centroid.assign(points.dim, 0.0);
        for (std::size_t i = 0; i < points.rows(); ++i) {
            if (assignment[i] != c) continue;
            const auto r = points.row(i);
            for (std::size_t j = 0; j < points.dim; ++j) rule.centroid[j] += r[j];
            ++rule.members;
        }
        if (rule.members == 0) continue;
        for (auto& v : rule.centroid) v /= static_cast<double>(rule.members);
        std::vector<double> dist;
        dist.reserve(rule.members);
        for (std::size_t i = 0; i < points.rows(); ++i) {
            if (assignment[i] == c) dist.push_back(euclidean_distance(points.row(i), rule.centroid));
        }
        rule.radius = std::max(percentile_linear(std::move(dist), config.radius_percentile),
                               config.epsilon / 10.0);
        set.rules.push_back(std::move(rule));
    }
    set.no_clusters = set.rules.empty();
    return set;
}

RuleScore score(const RuleSet& rules, std::span<const double> embedding) {
    RuleScore best;
    best.score = std::numeric_limits<double>::max();
    for (const Rule& r : rules.rules) {
        const double s = euclidean_distance(embedding, r.centroid) / r.radius;
        if (!best.rule_id || s < best.score) {
            best.score = s;
            best.rule_id = r.id;
        }
    }
    return best;
}

DriftReport rule_drift(const RuleSet& from, const RuleSet& to, Points reference) {
    const std::size_t nf = from.rules.size();
    const std::size_t nt = to.rules.size();

    // Greedy matching over all centroid pairs, closest first.
    std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
    pairs.reserve(nf * nt);
    for (std::size_t i = 0; i < nf; ++i) {
        for (std::size_t j = 0; j < nt; ++j) {
            pairs.emplace_back(euclidean_distance(from.rules[i].centroid, to.rules[j].centroid), i, j);
        }
    }
    std::sort(pairs.begin(), pairs.end());
    std::vector<std::optional<std::size_t>> match_from(nf);
    std::vector<bool> taken_to(nt, false);
    for (const auto& [d, i, j] : pairs) {
        if (match_from[i] || taken_to[j]) continue;
        match_from[i] = j;
        taken_to[j] = true;
    }

    DriftReport report;
    std::size_t unmatched_from = 0;
    for (std::size_t i = 0; i < nf; ++i) {
        RuleMatch m{from.rules[i].id, std::nullopt};
        if (match_from[i]) {
            m.to_id = to.rules[*match_from[i]].id;
        } else {
            ++unmatched_from;
        }
        report.matches.push_back(m);
    }
    for (std::size_t j = 0; j < nt; ++j) {
        if (!taken_to[j]) report.unmatched_to.push_back(to.rules[j].id);
    }
    report.unmatched_from_fraction = nf == 0 ? 0.0 : static_cast<double>(unmatched_from) / static_cast<double>(nf);
    report.unmatched_to_fraction =
        nt == 0 ? 0.0 : static_cast<double>(report.unmatched_to.size()) / static_cast<double>(nt);

    const std::size_t n = reference.rows();
    if (n == 0) {
        throw DataError("rule_drift: reference cohort is empty");
    }
    auto mapped = [&](std::optional<int> from_id) -> std::optional<int> {
        if (!from_id) return std::nullopt;
        for (const auto& m : report.matches) {
            if (m.from_id == *from_id) return m.to_id;
        }
        return std::nullopt;
    };
    std::size_t verdicts = 0, assignments = 0, changed = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const RuleScore a = score(from, reference.row(i));
        const RuleScore b = score(to, reference.row(i));
        const bool verdict = a.anomalous() != b.anomalous();
        const bool assignment = mapped(a.rule_id) != b.rule_id;
        verdicts += verdict ? 1 : 0;
        assignments += assignment ? 1 : 0;
        changed += (verdict || assignment) ? 1 : 0;
    }
    const double total = static_cast<double>(n);
    report.drift = static_cast<double>(changed) / total;
    report.verdict_change_fraction = static_cast<double>(verdicts) / total;
    report.assignment_change_fraction = static_cast<double>(assignments) / total;
    return report;
}

UpdateDecision maybe_update(const RuleSet& active, const RuleSet& candidate, double threshold,
                            Points reference) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) {
        throw ConfigError("maybe_update: drift threshold must lie in [0, 1], got " + format_double(threshold));
    }
    UpdateDecision d;
    d.threshold = threshold;
    d.drift = rule_drift(active, candidate, reference).drift;
    d.adopted = d.drift > threshold;
    d.from_tag = active.tag();
    if (d.adopted) {
        d.active = candidate;
        d.active.version = active.version + 1;
    } else {
        d.active = active;
    }
    d.to_tag = d.active.tag();
    return d;
}

void append_audit_log(const std::filesystem::path& path, const UpdateDecision& decision,
                      const std::string& timestamp) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) {
        throw DataError("cannot write '" + path.string() + "'");
    }
    if (fresh) {
        out << "version_from,version_to,drift,theta,adopted,timestamp\n";
    }
    out << decision.from_tag << ',' << decision.to_tag << ',' << format_double(decision.drift) << ','
        << format_double(decision.threshold) << ',' << (decision.adopted ? "true" : "false") << ','
        << timestamp << '\n';
}

nlohmann::json to_json(const RuleSet& rules) {
    nlohmann::json list = nlohmann::json::array();
    for (const Rule& r : rules.rules) {
        list.push_back({{"id", r.id}, {"centroid", r.centroid}, {"radius", r.radius}, {"members", r.members}});
    }
    return {{"format_version", 1},
            {"version", rules.version},
            {"version_tag", rules.tag()},
            {"dataset_size", rules.dataset_size},
            {"created", rules.created},
            {"no_clusters", rules.no_clusters},
            {"config",
             {{"epsilon", rules.config.epsilon},
              {"min_pts", rules.config.min_pts},
              {"radius_percentile", rules.config.radius_percentile}}},
            {"rules", std::move(list)}};
}

RuleSet ruleset_from_json(const nlohmann::json& j) {
    try {
        RuleSet set;
        set.version = j.at("version").get<std::uint64_t>();
        set.dataset_size = j.at("dataset_size").get<std::size_t>();
        set.created = j.value("created", std::string{});
        set.no_clusters = j.value("no_clusters", false);
        const auto& c = j.at("config");
        set.config.epsilon = c.at("epsilon").get<double>();
        set.config.min_pts = c.at("min_pts").get<std::size_t>();
        set.config.radius_percentile = c.at("radius_percentile").get<double>();
        for (const auto& r : j.at("rules")) {
            Rule rule;
            rule.id = r.at("id").get<int>();
            rule.centroid = r.at("centroid").get<std::vector<double>>();
            rule.radius = r.at("radius").get<double>();
            rule.members = r.at("members").get<std::size_t>();
            if (!(rule.radius > 0.0)) {
                throw DataError("rules: rule " + std::to_string(rule.id) + " has non-positive radius");
            }
            for (const Rule& prior : set.rules) {
                if (prior.id == rule.id) {
                    throw DataError("rules: duplicate rule id " + std::to_string(rule.id));
                }
            }
            set.rules.push_back(std::move(rule));
        }
        return set;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("rules: ") + e.what());
    }
}

void save_rules(const RuleSet& rules, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write '" + path.string() + "'");
    }
    out << to_json(rules).dump(2) << '\n';
}

RuleSet load_rules(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open '" + path.string() + "'");
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return ruleset_from_json(j);
}

}  // namespace aml
