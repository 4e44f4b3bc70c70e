#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "aml/error.hpp"
#include "aml/rules.hpp"
#include "test_support.hpp"

using namespace aml;

namespace {

Rule make_rule(int id, std::vector<double> centroid, double radius, std::size_t members = 5) {
    return Rule{id, std::move(centroid), radius, members};
}

RuleSet make_set(std::vector<Rule> rules, std::uint64_t version = 0) {
    RuleSet set;
    set.version = version;
    set.rules = std::move(rules);
    set.config.epsilon = 1.0;
    set.no_clusters = set.rules.empty();
    return set;
}

// Five points at distance 0.25 and five at 0.75 from the origin.
std::vector<double> half_cohort() {
    std::vector<double> pts;
    for (int i = 0; i < 10; ++i) {
        const double r = i < 5 ? 0.25 : 0.75;
        const double a = 0.6 * i;
        pts.push_back(r * std::cos(a));
        pts.push_back(r * std::sin(a));
    }
    return pts;
}

}  // namespace

TEST_CASE("euclidean distance examples") {
    CHECK(euclidean_distance(std::vector<double>{0, 0}, std::vector<double>{3, 4}) == 5.0);
    const std::vector<double> z{1.5, -2.0, 7.0};
    CHECK(euclidean_distance(z, z) == 0.0);
    CHECK_THROWS_AS(euclidean_distance(std::vector<double>{0}, std::vector<double>{0, 1}), ShapeError);
}

TEST_CASE("euclidean distance is symmetric and satisfies the triangle inequality") {
    SeededRng rng(1);
    for (int t = 0; t < 1000; ++t) {
        const std::size_t d = 1 + rng.below(8);
        std::vector<double> a(d), b(d), c(d);
        for (std::size_t k = 0; k < d; ++k) {
            a[k] = rng.uniform(-5, 5);
            b[k] = rng.uniform(-5, 5);
            c[k] = rng.uniform(-5, 5);
        }
        CHECK(euclidean_distance(a, b) == euclidean_distance(b, a));
        CHECK(euclidean_distance(a, c) <= euclidean_distance(a, b) + euclidean_distance(b, c) + 1e-12);
    }
}

TEST_CASE("DBSCAN: three close points form a cluster, the far point is noise") {
    const std::vector<double> pts{0, 0, 0, 0.1, 0.1, 0, 10, 10};
    const auto a = cluster(Points{pts, 2}, ClusterConfig{0.2, 3});
    CHECK(a == std::vector<int>{0, 0, 0, kNoise});
}

TEST_CASE("DBSCAN: identical points form one cluster") {
    const std::vector<double> pts(2 * 6, 3.0);
    const auto a = cluster(Points{pts, 2}, ClusterConfig{0.01, 6});
    CHECK(a == std::vector<int>(6, 0));
}

TEST_CASE("DBSCAN: epsilon below every pairwise distance gives all noise") {
    const std::vector<double> pts{0, 0, 1, 0, 0, 1, 5, 5};
    const auto a = cluster(Points{pts, 2}, ClusterConfig{0.5, 2});
    CHECK(a == std::vector<int>(4, kNoise));
}

TEST_CASE("DBSCAN: neighbours need distance strictly below epsilon") {
    const std::vector<double> pts{0, 1, 2};
    CHECK(cluster(Points{pts, 1}, ClusterConfig{1.0, 2}) == std::vector<int>(3, kNoise));
    CHECK(cluster(Points{pts, 1}, ClusterConfig{1.0 + 1e-9, 2}) == std::vector<int>(3, 0));
}

TEST_CASE("DBSCAN: a contested border point joins the first cluster discovered") {
    // Two dense groups of four; 1.0 has only three neighbours (itself, 0.3, 1.7)
    // so it is a border point of both.
    const std::vector<double> pts{0.0, 0.1, 0.2, 0.3, 1.0, 1.7, 1.8, 1.9, 2.0};
    const auto a = cluster(Points{pts, 1}, ClusterConfig{0.75, 4});
    CHECK(a == std::vector<int>{0, 0, 0, 0, 0, 1, 1, 1, 1});
    std::vector<double> flipped(pts.rbegin(), pts.rend());
    const auto b = cluster(Points{flipped, 1}, ClusterConfig{0.75, 4});
    CHECK(b == std::vector<int>{0, 0, 0, 0, 0, 1, 1, 1, 1});
}

TEST_CASE("DBSCAN matches the brute-force density-reachability oracle") {
    SeededRng rng(2024);
    for (int t = 0; t < 150; ++t) {
        const auto inst = aml::testing::random_dbscan_instance(rng, 200);
        const auto got = cluster(inst.points(), ClusterConfig{inst.eps, inst.min_pts});
        const auto why = aml::testing::dbscan_mismatch(inst.points(), inst.eps, inst.min_pts, got);
        INFO("instance " << t << " n=" << inst.rows() << " eps=" << inst.eps << " min_pts=" << inst.min_pts);
        CHECK(why == "");
    }
}

TEST_CASE("DBSCAN noise set is invariant under permutation") {
    SeededRng rng(77);
    for (int t = 0; t < 60; ++t) {
        const auto inst = aml::testing::random_dbscan_instance(rng, 150);
        const std::size_t n = inst.rows(), d = inst.dim;
        const auto base = cluster(inst.points(), ClusterConfig{inst.eps, inst.min_pts});
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        std::vector<double> shuffled(n * d);
        for (std::size_t i = 0; i < n; ++i) {
            std::copy_n(inst.data.begin() + static_cast<std::ptrdiff_t>(perm[i] * d), d,
                        shuffled.begin() + static_cast<std::ptrdiff_t>(i * d));
        }
        const auto moved = cluster(Points{shuffled, d}, ClusterConfig{inst.eps, inst.min_pts});
        for (std::size_t i = 0; i < n; ++i) CHECK((moved[i] == kNoise) == (base[perm[i]] == kNoise));
    }
}

TEST_CASE("cluster config validation") {
    CHECK_THROWS_AS(ClusterConfig({0.0, 3}).validate(), ConfigError);
    CHECK_THROWS_AS(ClusterConfig({1.0, 1}).validate(), ConfigError);
    ClusterConfig c{1.0, 3};
    c.radius_percentile = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.radius_percentile = 100.0;
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("auto epsilon is the median distance to the min_pts-th nearest other point") {
    const std::vector<double> pts{0, 1, 3, 7, 15};
    std::vector<double> kth;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        std::vector<double> d;
        for (std::size_t j = 0; j < pts.size(); ++j) {
            if (i != j) d.push_back(std::abs(pts[i] - pts[j]));
        }
        std::sort(d.begin(), d.end());
        kth.push_back(d[1]);
    }
    CHECK(auto_epsilon(Points{pts, 1}, 2) == doctest::Approx(aml::testing::sorted_percentile(kth, 50.0)));
    CHECK_THROWS_AS(auto_epsilon(Points{std::vector<double>{1.0}, 1}, 2), DataError);
}

TEST_CASE("derive_rules: identical points get the epsilon/10 radius floor") {
    const std::vector<double> pts(2 * 5, 1.0);
    const ClusterConfig cfg{0.5, 3};
    const auto rules = derive_rules(Points{pts, 2}, std::vector<int>(5, 0), cfg, 0);
    REQUIRE(rules.rules.size() == 1);
    CHECK(rules.rules[0].radius == 0.05);
    CHECK(rules.rules[0].centroid == std::vector<double>{1.0, 1.0});
    CHECK(rules.rules[0].members == 5);
}

TEST_CASE("derive_rules: centroid is the member mean") {
    const std::vector<double> pts{0, 0, 2, 0, 50, 50};
    const auto rules = derive_rules(Points{pts, 2}, std::vector<int>{0, 0, kNoise}, ClusterConfig{3.0, 2}, 4);
    REQUIRE(rules.rules.size() == 1);
    CHECK(rules.rules[0].centroid == std::vector<double>{1.0, 0.0});
    CHECK(rules.rules[0].radius == doctest::Approx(1.0));
    CHECK(rules.version == 4);
    CHECK(rules.tag() == "R4");
    CHECK(rules.dataset_size == 3);
}

TEST_CASE("derive_rules radius matches a sort-based percentile oracle") {
    SeededRng rng(9);
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = 100, d = 3;
        std::vector<double> pts(n * d);
        for (auto& v : pts) v = rng.normal() * 2.0;
        ClusterConfig cfg{0.01, 2};
        cfg.radius_percentile = t == 0 ? 95.0 : rng.uniform(1.0, 100.0);
        const auto rules = derive_rules(Points{pts, d}, std::vector<int>(n, 0), cfg, 0);
        std::vector<double> centroid(d, 0.0), dist;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < d; ++k) centroid[k] += pts[i * d + k] / static_cast<double>(n);
        }
        for (std::size_t i = 0; i < n; ++i) {
            dist.push_back(euclidean_distance(std::span<const double>(pts).subspan(i * d, d), centroid));
        }
        const double want = std::max(aml::testing::sorted_percentile(dist, cfg.radius_percentile), cfg.epsilon / 10.0);
        CHECK(std::abs(rules.rules[0].radius - want) < 1e-12);
    }
}

TEST_CASE("derive_rules with no clusters flags an empty set") {
    const std::vector<double> pts{0, 5, 10};
    const auto rules = derive_rules(Points{pts, 1}, std::vector<int>(3, kNoise), ClusterConfig{1.0, 2}, 0);
    CHECK(rules.empty());
    CHECK(rules.no_clusters);
    const auto s = score(rules, std::vector<double>{0.0});
    CHECK(s.score == std::numeric_limits<double>::max());
    CHECK_FALSE(s.rule_id.has_value());
    CHECK(s.anomalous());
}

TEST_CASE("derive_rules keeps one rule per cluster with unique ids") {
    SeededRng rng(4);
    for (int t = 0; t < 30; ++t) {
        const auto inst = aml::testing::random_dbscan_instance(rng, 200);
        const ClusterConfig cfg{inst.eps, inst.min_pts};
        const auto a = cluster(inst.points(), cfg);
        const auto rules = derive_rules(inst.points(), a, cfg, 0);
        const int clusters = a.empty() ? 0 : *std::max_element(a.begin(), a.end()) + 1;
        CHECK(rules.rules.size() == static_cast<std::size_t>(clusters));
        for (std::size_t i = 0; i < rules.rules.size(); ++i) {
            CHECK(rules.rules[i].id == static_cast<int>(i));
            CHECK(rules.rules[i].radius > 0.0);
            CHECK(rules.rules[i].members >= 1);
        }
    }
}

TEST_CASE("score examples") {
    const auto set = make_set({make_rule(0, {0, 0}, 2.0), make_rule(1, {10, 0}, 1.0)});
    CHECK(score(set, std::vector<double>{0, 0}).score == 0.0);
    const auto edge = score(set, std::vector<double>{0, 2});
    CHECK(edge.score == 1.0);
    CHECK_FALSE(edge.anomalous());
    // Ratio 4/2 = 2 for rule 0, 1/1 = 1 for rule 1.
    const auto near_b = score(set, std::vector<double>{4, 0});
    CHECK(near_b.score == doctest::Approx(2.0));
    const auto b = score(set, std::vector<double>{9, 0});
    CHECK(b.rule_id == 1);
    CHECK(b.score == 1.0);
    // Ratios 6 and 2.
    const auto outside = score(set, std::vector<double>{12, 0});
    CHECK(outside.anomalous());
    CHECK(outside.rule_id == 1);
    CHECK(outside.score == 2.0);
}

TEST_CASE("score never decreases along rays from the centroid of a single rule") {
    SeededRng rng(12);
    for (int t = 0; t < 200; ++t) {
        const std::vector<double> c{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
        const auto set = make_set({make_rule(0, c, rng.uniform(0.2, 3))});
        std::vector<double> dir{rng.normal(), rng.normal(), rng.normal()};
        double prev = 0.0;
        for (int step = 0; step <= 20; ++step) {
            const double f = 0.25 * step;
            const std::vector<double> q{c[0] + f * dir[0], c[1] + f * dir[1], c[2] + f * dir[2]};
            const double s = score(set, q).score;
            CHECK(s >= prev);
            prev = s;
        }
    }
}

TEST_CASE("with several rules the score is monotone while the nearest rule stays the same") {
    // Moving away from one centroid can bring a point closer to another rule,
    // so the minimum is only monotone along the stretch where the argmin holds.
    SeededRng rng(13);
    for (int t = 0; t < 200; ++t) {
        std::vector<Rule> rules;
        const std::size_t k = 2 + rng.below(3);
        for (std::size_t r = 0; r < k; ++r) {
            rules.push_back(make_rule(static_cast<int>(r), {rng.uniform(-5, 5), rng.uniform(-5, 5)}, rng.uniform(0.2, 3)));
        }
        const auto set = make_set(rules);
        const std::vector<double> p{rng.uniform(-8, 8), rng.uniform(-8, 8)};
        const auto first = score(set, p);
        const auto& c = set.rules[static_cast<std::size_t>(*first.rule_id)].centroid;
        double prev = first.score;
        for (int step = 1; step <= 10; ++step) {
            const double f = 1.0 + 0.3 * step;
            const std::vector<double> q{c[0] + f * (p[0] - c[0]), c[1] + f * (p[1] - c[1])};
            const auto s = score(set, q);
            if (s.rule_id != first.rule_id) break;
            CHECK(s.score >= prev);
            prev = s.score;
        }
    }
}

TEST_CASE("drift of a rule set against itself is exactly zero") {
    SeededRng rng(5);
    std::vector<double> pts(60 * 2);
    for (auto& v : pts) v = rng.uniform(-5, 5);
    const auto set = make_set({make_rule(0, {0, 0}, 1.5), make_rule(1, {3, 3}, 1.0)});
    const auto r = rule_drift(set, set, Points{pts, 2});
    CHECK(r.drift == 0.0);
    CHECK(r.unmatched_from_fraction == 0.0);
    CHECK(r.unmatched_to.empty());
}

TEST_CASE("drift to an empty set is 1 when every point was normal") {
    const auto pts = half_cohort();
    const auto r = rule_drift(make_set({make_rule(0, {0, 0}, 1.0)}), make_set({}), Points{pts, 2});
    CHECK(r.drift == 1.0);
    CHECK(r.verdict_change_fraction == 1.0);
    CHECK(r.unmatched_from_fraction == 1.0);
}

TEST_CASE("drift is one half when exactly half the verdicts flip") {
    const auto pts = half_cohort();
    const auto from = make_set({make_rule(0, {0, 0}, 1.0)});
    const auto to = make_set({make_rule(0, {0, 0}, 0.5)});
    const auto r = rule_drift(from, to, Points{pts, 2});
    CHECK(std::abs(r.drift - 0.5) < 1e-12);
    CHECK(r.assignment_change_fraction == 0.0);
}

TEST_CASE("drift counts nearest-rule changes after greedy matching") {
    // Rules are renumbered but unchanged: matching maps them back, so no drift.
    const std::vector<double> pts{0, 0, 0.2, 0, 5, 5, 5.2, 5};
    const auto from = make_set({make_rule(0, {0, 0}, 1.0), make_rule(1, {5, 5}, 1.0)});
    const auto to = make_set({make_rule(7, {5, 5}, 1.0), make_rule(3, {0, 0}, 1.0)});
    const auto same = rule_drift(from, to, Points{pts, 2});
    CHECK(same.drift == 0.0);
    REQUIRE(same.matches.size() == 2);
    CHECK(same.matches[0].to_id == 3);
    CHECK(same.matches[1].to_id == 7);
    // Merging both groups into one rule changes the assignment of the second group.
    const auto merged = make_set({make_rule(0, {0, 0}, 10.0)});
    const auto r = rule_drift(from, merged, Points{pts, 2});
    CHECK(r.verdict_change_fraction == 0.0);
    CHECK(r.assignment_change_fraction == 0.5);
    CHECK(r.drift == 0.5);
    CHECK(r.unmatched_from_fraction == 0.5);
}

TEST_CASE("drift stays in [0, 1] on random rule sets") {
    SeededRng rng(8);
    for (int t = 0; t < 200; ++t) {
        auto random_set = [&] {
            std::vector<Rule> rules;
            const std::size_t k = rng.below(4);
            for (std::size_t r = 0; r < k; ++r) {
                rules.push_back(make_rule(static_cast<int>(r), {rng.uniform(-3, 3), rng.uniform(-3, 3)}, rng.uniform(0.1, 3)));
            }
            return make_set(rules);
        };
        std::vector<double> pts(2 * (1 + rng.below(30)));
        for (auto& v : pts) v = rng.uniform(-4, 4);
        const auto r = rule_drift(random_set(), random_set(), Points{pts, 2});
        CHECK(r.drift >= 0.0);
        CHECK(r.drift <= 1.0);
    }
    CHECK_THROWS_AS(rule_drift(make_set({}), make_set({}), Points{std::vector<double>{}, 2}), DataError);
}

TEST_CASE("maybe_update adopts only when drift is strictly above the threshold") {
    const auto pts = half_cohort();
    const auto active = make_set({make_rule(0, {0, 0}, 1.0)}, 3);
    const auto candidate = make_set({make_rule(0, {0, 0}, 0.5)}, 0);

    const auto at = maybe_update(active, candidate, 0.5, Points{pts, 2});
    CHECK(at.drift == 0.5);
    CHECK_FALSE(at.adopted);
    CHECK(at.active == active);
    CHECK(at.to_tag == "R3");

    const auto below = maybe_update(active, candidate, std::nextafter(0.5, 0.0), Points{pts, 2});
    CHECK(below.adopted);
    CHECK(below.active.version == 4);
    CHECK(below.active.rules == candidate.rules);
    CHECK(below.from_tag == "R3");
    CHECK(below.to_tag == "R4");

    CHECK_FALSE(maybe_update(active, active, 0.1, Points{pts, 2}).adopted);
    CHECK(maybe_update(active, make_set({}), 0.2, Points{pts, 2}).adopted);
    CHECK_THROWS_AS(maybe_update(active, candidate, 1.5, Points{pts, 2}), ConfigError);
    CHECK_THROWS_AS(maybe_update(active, candidate, -0.1, Points{pts, 2}), ConfigError);
}

TEST_CASE("audit log writes the header once and one line per decision") {
    const auto path = aml::testing::scratch_dir("audit") / "audit_log.csv";
    const auto pts = half_cohort();
    const auto active = make_set({make_rule(0, {0, 0}, 1.0)});
    append_audit_log(path, maybe_update(active, make_set({make_rule(0, {0, 0}, 0.5)}), 0.2, Points{pts, 2}),
                     "2024-01-01T00:00:00Z");
    append_audit_log(path, maybe_update(active, active, 0.2, Points{pts, 2}), "2024-01-02T00:00:00Z");
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(ss.str() ==
          "version_from,version_to,drift,theta,adopted,timestamp\n"
          "R0,R1,0.5,0.2,true,2024-01-01T00:00:00Z\n"
          "R0,R0,0,0.2,false,2024-01-02T00:00:00Z\n");
}

TEST_CASE("rule sets round-trip through JSON") {
    auto set = make_set({make_rule(0, {0.1, -2.5}, 0.3333333333333333, 12), make_rule(1, {1e-300, 7}, 2.0, 5)}, 2);
    set.created = "2024-05-05T10:00:00Z";
    set.dataset_size = 17;
    set.config.min_pts = 4;
    set.config.radius_percentile = 90;
    const auto path = aml::testing::scratch_dir("rules_json") / "rules.json";
    save_rules(set, path);
    const auto back = load_rules(path);
    CHECK(back.version == 2);
    CHECK(back.rules == set.rules);
    CHECK(back.created == set.created);
    CHECK(back.dataset_size == 17);
    CHECK(back.config.min_pts == 4);
    CHECK(back.config.radius_percentile == 90);
    CHECK(back.config.epsilon == 1.0);
}

TEST_CASE("rule set loading rejects bad radii and duplicate ids") {
    auto j = to_json(make_set({make_rule(0, {0, 0}, 1.0), make_rule(1, {1, 1}, 1.0)}));
    auto dup = j;
    dup["rules"][1]["id"] = 0;
    CHECK_THROWS_AS(ruleset_from_json(dup), DataError);
    auto zero = j;
    zero["rules"][0]["radius"] = 0.0;
    CHECK_THROWS_AS(ruleset_from_json(zero), DataError);
    CHECK_THROWS_AS(load_rules("/nonexistent/rules.json"), DataError);
}

TEST_CASE("active rules publish whole versions to concurrent readers") {
    ActiveRules active(make_set({make_rule(0, {0, 0}, 1.0)}, 0));
    std::atomic<bool> torn{false};
    std::thread reader([&] {
        for (int i = 0; i < 20000; ++i) {
            const auto snap = active.snapshot();
            // Every published version v has exactly v + 1 rules.
            if (snap->rules.size() != snap->version + 1) torn = true;
        }
    });
    for (std::uint64_t v = 1; v < 50; ++v) {
        std::vector<Rule> rules;
        for (std::uint64_t r = 0; r <= v; ++r) rules.push_back(make_rule(static_cast<int>(r), {0, 0}, 1.0));
        active.publish(make_set(rules, v));
    }
    reader.join();
    CHECK_FALSE(torn.load());
    CHECK(active.snapshot()->version == 49);
}
