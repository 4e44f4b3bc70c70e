#include "aml/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "aml/error.hpp"

namespace aml {

namespace fs = std::filesystem;

std::string_view label_name(Label label) noexcept {
    switch (label) {
        case Label::Illicit: return "illicit";
        case Label::Licit: return "licit";
        case Label::Unknown: return "unknown";
    }
    return "unknown";
}

Label parse_label(std::string_view text) {
    if (text == "illicit") return Label::Illicit;
    if (text == "licit") return Label::Licit;
    if (text == "unknown") return Label::Unknown;
    throw DataError("unknown label '" + std::string(text) + "'");
}

void Dataset::validate() const {
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (r.features.size() != dim) {
            throw DataError("record '" + r.id + "' has " + std::to_string(r.features.size()) +
                            " features, dataset dimension is " + std::to_string(dim));
        }
        for (double v : r.features) {
            if (!std::isfinite(v)) {
                throw DataError("record '" + r.id + "' has a non-finite feature");
            }
        }
        if (!seen.insert(r.id).second) {
            throw DataError("duplicate transaction id '" + r.id + "'");
        }
    }
}

std::vector<double> Dataset::feature_matrix() const {
    std::vector<double> out;
    out.reserve(records.size() * dim);
    for (const auto& r : records) {
        out.insert(out.end(), r.features.begin(), r.features.end());
    }
    return out;
}

std::size_t Dataset::count(Label label) const {
    return static_cast<std::size_t>(std::count_if(
        records.begin(), records.end(), [label](const auto& r) { return r.label == label; }));
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

bool parse_double(std::string_view text, double& out) {
    text = trim(text);
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    if (text.empty()) return false;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, out);
    return ec == std::errc{} && ptr == end && std::isfinite(out);
}

std::ifstream open_input(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open '" + path.string() + "'");
    }
    return in;
}

std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write '" + path.string() + "'");
    }
    return out;
}

// Reads one line, stripping a trailing CR so LF and CRLF files parse alike.
bool next_line(std::istream& in, std::string& line) {
    if (!std::getline(in, line)) return false;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
}

}  // namespace

Dataset ingest_elliptic(const fs::path& features_path, const fs::path& classes_path,
                        const std::optional<fs::path>& edges_path) {
    Dataset data;
    std::unordered_map<std::string, std::size_t> index;
    {
        auto in = open_input(features_path);
        std::string line;
        std::size_t lineno = 0;
        std::size_t width = 0;
        while (next_line(in, line)) {
            ++lineno;
            if (trim(line).empty()) continue;
            const auto cols = split_commas(line);
            if (width == 0) {
                width = cols.size();
                if (width < 2) {
                    throw DataError(features_path.string() + ":" + std::to_string(lineno) +
                                    ": expected an id column followed by features");
                }
            } else if (cols.size() != width) {
                throw DataError(features_path.string() + ":" + std::to_string(lineno) +
                                ": ragged row with " + std::to_string(cols.size() - 1) +
                                " feature columns, expected " + std::to_string(width - 1));
            }
            TransactionRecord rec;
            rec.id = std::string(trim(cols[0]));
            rec.features.resize(width - 1);
            for (std::size_t c = 1; c < width; ++c) {
                if (!parse_double(cols[c], rec.features[c - 1])) {
                    throw DataError(features_path.string() + ":" + std::to_string(lineno) +
                                    ": column " + std::to_string(c + 1) +
                                    " is not a finite number: '" + std::string(cols[c]) + "'");
                }
            }
            if (!index.emplace(rec.id, data.records.size()).second) {
                throw DataError(features_path.string() + ":" + std::to_string(lineno) +
                                ": duplicate transaction id '" + rec.id + "'");
            }
            data.records.push_back(std::move(rec));
        }
        data.dim = width == 0 ? 0 : width - 1;
    }
    {
        auto in = open_input(classes_path);
        std::string line;
        std::size_t lineno = 0;
        while (next_line(in, line)) {
            ++lineno;
            if (lineno == 1 || trim(line).empty()) continue;  // header
            const auto cols = split_commas(line);
            if (cols.size() != 2) {
                throw DataError(classes_path.string() + ":" + std::to_string(lineno) +
                                ": expected 'id,class'");
            }
            const std::string id(trim(cols[0]));
            const auto cls = trim(cols[1]);
            Label label;
            if (cls == "1") {
                label = Label::Illicit;
            } else if (cls == "2") {
                label = Label::Licit;
            } else if (cls == "unknown") {
                label = Label::Unknown;
            } else {
                throw DataError(classes_path.string() + ":" + std::to_string(lineno) +
                                ": unknown class '" + std::string(cls) + "'");
            }
            if (auto it = index.find(id); it != index.end()) {
                data.records[it->second].label = label;
            }
        }
    }
    if (edges_path) {
        auto in = open_input(*edges_path);
        std::string line;
        std::size_t lineno = 0;
        std::size_t edges = 0;
        while (next_line(in, line)) {
            ++lineno;
            if (lineno == 1 || trim(line).empty()) continue;  // header
            if (split_commas(line).size() != 2) {
                throw DataError(edges_path->string() + ":" + std::to_string(lineno) +
                                ": expected 'id1,id2'");
            }
            ++edges;
        }
        data.edge_count = edges;
    }
    return data;
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

void write_elliptic(const Dataset& data, const fs::path& features_path, const fs::path& classes_path) {
    auto feat = open_output(features_path);
    auto cls = open_output(classes_path);
    cls << "txId,class\n";
    for (const auto& r : data.records) {
        feat << r.id;
        for (double v : r.features) feat << ',' << format_double(v);
        feat << '\n';
        const char* code = r.label == Label::Illicit ? "1" : r.label == Label::Licit ? "2" : "unknown";
        cls << r.id << ',' << code << '\n';
    }
}

void write_dataset_csv(const Dataset& data, const fs::path& path) {
    auto out = open_output(path);
    out << "id,label";
    for (std::size_t j = 0; j < data.dim; ++j) out << ",f" << j;
    out << '\n';
    for (const auto& r : data.records) {
        out << r.id << ',' << label_name(r.label);
        for (double v : r.features) out << ',' << format_double(v);
        out << '\n';
    }
}

Dataset read_dataset_csv(const fs::path& path) {
    auto in = open_input(path);
    std::string line;
    if (!next_line(in, line)) {
        throw DataError(path.string() + ": empty file");
    }
    const auto header = split_commas(line);
    if (header.size() < 2 || trim(header[0]) != "id" || trim(header[1]) != "label") {
        throw DataError(path.string() + ":1: header must start with 'id,label'");
    }
    Dataset data;
    data.dim = header.size() - 2;
    std::size_t lineno = 1;
    std::unordered_set<std::string> seen;
    while (next_line(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto cols = split_commas(line);
        if (cols.size() != header.size()) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": ragged row with " +
                            std::to_string(cols.size()) + " columns, expected " +
                            std::to_string(header.size()));
        }
        TransactionRecord rec;
        rec.id = std::string(trim(cols[0]));
        try {
            rec.label = parse_label(trim(cols[1]));
        } catch (const DataError& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        rec.features.resize(data.dim);
        for (std::size_t c = 2; c < cols.size(); ++c) {
            if (!parse_double(cols[c], rec.features[c - 2])) {
                throw DataError(path.string() + ":" + std::to_string(lineno) + ": column " +
                                std::to_string(c + 1) + " is not a finite number: '" +
                                std::string(cols[c]) + "'");
            }
        }
        if (!seen.insert(rec.id).second) {
            throw DataError(path.string() + ":" + std::to_string(lineno) +
                            ": duplicate transaction id '" + rec.id + "'");
        }
        data.records.push_back(std::move(rec));
    }
    return data;
}

StandardizationParams fit_standardizer(const Dataset& data) {
    if (data.empty()) {
        throw DataError("fit_standardizer: empty dataset");
    }
    const double n = static_cast<double>(data.size());
    StandardizationParams p;
    p.mean.assign(data.dim, 0.0);
    p.stddev.assign(data.dim, 0.0);
    for (const auto& r : data.records) {
        for (std::size_t j = 0; j < data.dim; ++j) p.mean[j] += r.features[j];
    }
    for (auto& m : p.mean) m /= n;
    for (const auto& r : data.records) {
        for (std::size_t j = 0; j < data.dim; ++j) {
            const double dev = r.features[j] - p.mean[j];
            p.stddev[j] += dev * dev;
        }
    }
    for (std::size_t j = 0; j < data.dim; ++j) {
        p.stddev[j] = std::sqrt(p.stddev[j] / n);
        // Round-off on a constant column leaves a tiny positive variance.
        if (p.stddev[j] <= 1e-12 * std::max(1.0, std::abs(p.mean[j]))) p.stddev[j] = 0.0;
    }
    return p;
}

Dataset apply_standardizer(const StandardizationParams& params, const Dataset& data) {
    if (data.empty()) {
        throw DataError("apply_standardizer: empty dataset");
    }
    if (params.mean.size() != data.dim || params.stddev.size() != data.dim) {
        throw DataError("apply_standardizer: parameters fitted for dimension " +
                        std::to_string(params.mean.size()) + ", data has " +
                        std::to_string(data.dim));
    }
    Dataset out = data;
    for (auto& r : out.records) {
        for (std::size_t j = 0; j < out.dim; ++j) {
            r.features[j] = params.stddev[j] == 0.0 ? 0.0
                                                    : (r.features[j] - params.mean[j]) / params.stddev[j];
        }
    }
    return out;
}

nlohmann::json to_json(const StandardizationParams& params) {
    return {{"mean", params.mean}, {"stddev", params.stddev}};
}

StandardizationParams standardizer_from_json(const nlohmann::json& j) {
    StandardizationParams p;
    try {
        p.mean = j.at("mean").get<std::vector<double>>();
        p.stddev = j.at("stddev").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("standardizer: ") + e.what());
    }
    if (p.mean.size() != p.stddev.size()) {
        throw DataError("standardizer: mean and stddev lengths differ");
    }
    return p;
}

// --- PairSampler --------------------------------------------------------------

PairSampler::PairSampler(std::span<const double> features, std::size_t rows, std::size_t dim,
                         PairSamplerConfig config)
    : features_(features.begin(), features.end()), rows_(rows), dim_(dim), config_(config) {
    if (features.size() != rows * dim) {
        throw ShapeError("pair sampler: feature matrix size does not match rows x dim");
    }
    if (config_.knn == 0 || config_.negatives == 0) {
        throw ConfigError("pair sampler: k and N must be positive");
    }
    if (!(config_.negative_percentile >= 0.0 && config_.negative_percentile <= 100.0)) {
        throw ConfigError("pair sampler: negative percentile must lie in [0, 100]");
    }
    const std::size_t required = config_.knn + config_.negatives + 1;
    if (rows_ < required) {
        throw DataError("pair sampler: dataset has " + std::to_string(rows_) +
                        " records, needs at least k + N + 1 = " + std::to_string(required));
    }

    knn_.resize(rows_);
    threshold_.resize(rows_);
    std::vector<std::pair<double, std::size_t>> dist(rows_ - 1);
    std::vector<double> sorted(rows_ - 1);
    for (std::size_t a = 0; a < rows_; ++a) {
        std::size_t n = 0;
        for (std::size_t b = 0; b < rows_; ++b) {
            if (b != a) dist[n++] = {distance(a, b), b};
        }
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(config_.knn),
                          dist.end());
        knn_[a].resize(config_.knn);
        for (std::size_t k = 0; k < config_.knn; ++k) knn_[a][k] = dist[k].second;

        for (std::size_t i = 0; i < n; ++i) sorted[i] = dist[i].first;
        std::sort(sorted.begin(), sorted.end());
        const double rank = config_.negative_percentile / 100.0 * static_cast<double>(n - 1);
        const auto lo = static_cast<std::size_t>(std::floor(rank));
        const std::size_t hi = std::min(lo + 1, n - 1);
        threshold_[a] = sorted[lo] + (rank - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);

        // Eligible negatives exclude the anchor itself; one may also be the positive.
        const auto beyond = static_cast<std::size_t>(
            sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), threshold_[a]));
        if (beyond < config_.negatives + 1) {
            throw DataError("pair sampler: record " + std::to_string(a) + " has only " +
                            std::to_string(beyond) + " records beyond its " +
                            format_double(config_.negative_percentile) +
                            "th distance percentile; need N + 1 = " +
                            std::to_string(config_.negatives + 1));
        }
    }
}

PairSampler::PairSampler(const Dataset& data, PairSamplerConfig config)
    : PairSampler(data.feature_matrix(), data.size(), data.dim, config) {}

double PairSampler::distance(std::size_t a, std::size_t b) const {
    const double* x = features_.data() + a * dim_;
    const double* y = features_.data() + b * dim_;
    double acc = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) {
        const double d = x[j] - y[j];
        acc += d * d;
    }
    return std::sqrt(acc);
}

PairBatch PairSampler::sample(std::span<const std::size_t> anchors, SeededRng& rng) const {
    PairBatch batch;
    batch.anchors.assign(anchors.begin(), anchors.end());
    batch.positives.reserve(anchors.size());
    batch.negatives.reserve(anchors.size());
    for (std::size_t a : anchors) {
        if (a >= rows_) {
            throw ConfigError("pair sampler: anchor index " + std::to_string(a) + " out of range");
        }
        const std::size_t pos = knn_[a][rng.below(knn_[a].size())];
        batch.positives.push_back(pos);

        // Rejection sampling gives a uniform draw over the eligible set.
        std::vector<std::size_t> neg;
        neg.reserve(config_.negatives);
        while (neg.size() < config_.negatives) {
            const std::size_t c = rng.below(rows_);
            if (c == a || c == pos || distance(a, c) <= threshold_[a]) continue;
            if (std::find(neg.begin(), neg.end(), c) != neg.end()) continue;
            neg.push_back(c);
        }
        batch.negatives.push_back(std::move(neg));
    }
    return batch;
}

PairBatch sample_pairs(const Dataset& data, const PairSamplerConfig& config, SeededRng& rng) {
    PairSampler sampler(data, config);
    std::vector<std::size_t> anchors(data.size());
    std::iota(anchors.begin(), anchors.end(), std::size_t{0});
    return sampler.sample(anchors, rng);
}

// --- Synthetic ----------------------------------------------------------------

std::size_t anomaly_count(const SyntheticSpec& spec) {
    return static_cast<std::size_t>(std::llround(spec.anomaly_fraction * static_cast<double>(spec.count)));
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
    if (spec.dim < 2) {
        throw ConfigError("synthetic: dimension must be at least 2 (amount and frequency features)");
    }
    if (spec.count == 0 || spec.base_clusters == 0) {
        throw ConfigError("synthetic: count and base cluster count must be positive");
    }
    if (!(spec.anomaly_fraction >= 0.0 && spec.anomaly_fraction <= 1.0)) {
        throw ConfigError("synthetic: anomaly fraction must lie in [0, 1]");
    }
    if (spec.anomaly_fraction > 0.0 && spec.anomaly_fraction * static_cast<double>(spec.count) < 1.0) {
        throw ConfigError("synthetic: anomaly fraction x count must be at least 1");
    }
    if (!(spec.anomaly_offset >= 0.0) || !std::isfinite(spec.anomaly_offset)) {
        throw ConfigError("synthetic: anomaly offset must be non-negative");
    }

    SeededRng rng(spec.seed);
    std::vector<std::vector<double>> centers(spec.base_clusters, std::vector<double>(spec.dim));
    for (auto& c : centers) {
        for (auto& v : c) v = rng.uniform(-4.0, 4.0);
    }

    // Anomaly positions: first `n_anom` entries of a seeded shuffle.
    const std::size_t n_anom = anomaly_count(spec);
    std::vector<std::size_t> order(spec.count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < n_anom; ++i) {
        const std::size_t j = i + rng.below(spec.count - i);
        std::swap(order[i], order[j]);
    }
    std::vector<bool> is_anomaly(spec.count, false);
    for (std::size_t i = 0; i < n_anom; ++i) is_anomaly[order[i]] = true;

    Dataset data;
    data.dim = spec.dim;
    data.records.reserve(spec.count);
    const std::size_t width = std::to_string(spec.count).size();
    for (std::size_t i = 0; i < spec.count; ++i) {
        TransactionRecord rec;
        std::string num = std::to_string(i);
        rec.id = "tx" + std::string(width - num.size(), '0') + num;
        const auto& center = centers[rng.below(spec.base_clusters)];
        rec.features.resize(spec.dim);
        for (std::size_t j = 0; j < spec.dim; ++j) rec.features[j] = center[j] + rng.normal();
        if (is_anomaly[i]) {
            for (std::size_t j : {kAmountFeature, kFrequencyFeature}) {
                rec.features[j] += spec.anomaly_offset + rng.uniform(0.0, 0.5 * spec.anomaly_offset);
            }
            rec.label = Label::Illicit;
        } else {
            rec.label = Label::Licit;
        }
        data.records.push_back(std::move(rec));
    }
    return data;
}

}  // namespace aml
