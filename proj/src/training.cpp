#include "aml/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>

#include "aml/error.hpp"

namespace aml {

void TrainingConfig::validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw ConfigError("temperature must be positive, got " + format_double(temperature));
    }
    if (negatives < 1) {
        throw ConfigError("negatives must be at least 1");
    }
    if (batch_size < 1) {
        throw ConfigError("batch_size must be at least 1");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("learning_rate must be positive, got " + format_double(learning_rate));
    }
}

namespace {

double norm(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

void check_temperature(double temperature) {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw ConfigError("info_nce: temperature must be positive, got " + format_double(temperature));
    }
}

}  // namespace

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("cosine_similarity: length mismatch " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    }
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) {
        throw NumericError("cosine_similarity: undefined for a zero vector");
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    return dot / (na * nb);
}

double info_nce_loss(std::span<const double> anchor, std::span<const double> positive,
                     std::span<const std::vector<double>> negatives, double temperature) {
    check_temperature(temperature);
    if (negatives.empty()) {
        throw ConfigError("info_nce: need at least one negative");
    }
    const std::size_t e = anchor.size();
    Tape tape;
    Var a = tape.constant(Tensor::vector(anchor).reshaped({1, e}));
    Var p = tape.constant(Tensor::vector(positive).reshaped({1, e}));
    std::vector<double> flat;
    for (const auto& n : negatives) {
        if (n.size() != e) {
            throw ShapeError("info_nce: negative of length " + std::to_string(n.size()) +
                             ", anchor has " + std::to_string(e));
        }
        flat.insert(flat.end(), n.begin(), n.end());
    }
    Var neg = tape.constant(Tensor(Shape{1, negatives.size(), e}, std::move(flat)));
    return info_nce(a, p, neg, temperature).value().item();
}

Var cosine_similarity(Var a, Var b) {
    if (a.shape().size() != 1 || a.shape() != b.shape()) {
        throw ShapeError("cosine_similarity: expected equal 1-D shapes, got " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
    }
    Var na = ad::l2norm(a, 0);
    Var nb = ad::l2norm(b, 0);
    if (na.value().item() == 0.0 || nb.value().item() == 0.0) {
        throw NumericError("cosine_similarity: undefined for a zero vector");
    }
    return ad::div(ad::sum(ad::mul(a, b)), ad::mul(na, nb));
}

namespace {

// x / |x| along the last axis.
Var unit_rows(Var x) {
    const std::size_t last = x.shape().size() - 1;
    Var n = ad::l2norm(x, last);
    for (double v : n.value().values()) {
        if (v == 0.0) {
            throw NumericError("info_nce: zero embedding vector; cosine similarity undefined");
        }
    }
    Shape keep = x.shape();
    keep.back() = 1;
    return ad::div(x, ad::reshape(n, keep));
}

}  // namespace

Var info_nce(Var anchors, Var positives, Var negatives, double temperature) {
    check_temperature(temperature);
    const Shape& sa = anchors.shape();
    const Shape& sn = negatives.shape();
    if (sa.size() != 2 || positives.shape() != sa || sn.size() != 3 || sn[0] != sa[0] || sn[2] != sa[1]) {
        throw ShapeError("info_nce: expected anchors/positives [B,e] and negatives [B,N,e], got " +
                         shape_string(sa) + ", " + shape_string(positives.shape()) + ", " + shape_string(sn));
    }
    if (sn[1] == 0) {
        throw ConfigError("info_nce: need at least one negative");
    }
    const std::size_t batch = sa[0], n_neg = sn[1], e = sa[1];
    Var a = unit_rows(anchors);
    Var p = unit_rows(positives);
    Var n = unit_rows(negatives);

    Var sim_pos = ad::reshape(ad::sum(ad::mul(a, p), 1), {batch, 1});
    Var sim_neg = ad::sum(ad::mul(ad::reshape(a, {batch, 1, e}), n), 2);
    Var logits = ad::scale(ad::concat({sim_pos, sim_neg}, 1), 1.0 / temperature);

    // L = lse(l) - l0 with lse(l) = l* + log1p(sum_{j != *} exp(l_j - l*)), where
    // l* is the row max taken as a differentiable gather. log1p keeps L > 0
    // when the positive dominates and the sum is tiny.
    const std::size_t width = n_neg + 1;
    std::vector<std::size_t> max_idx, rest_idx;
    const auto lv = logits.value().values();
    for (std::size_t b = 0; b < batch; ++b) {
        const auto row = lv.begin() + static_cast<std::ptrdiff_t>(b * width);
        const auto top = static_cast<std::size_t>(std::max_element(row, row + static_cast<std::ptrdiff_t>(width)) - row);
        max_idx.push_back(b * width + top);
        for (std::size_t j = 0; j < width; ++j) {
            if (j != top) rest_idx.push_back(b * width + j);
        }
    }
    Var flat = ad::reshape(logits, {batch * width, 1});
    Var top = ad::gather_rows(flat, max_idx);                                     // [B,1]
    Var rest = ad::reshape(ad::gather_rows(flat, rest_idx), {batch, n_neg});     // [B,N]
    Var tail = ad::log1p(ad::sum(ad::exp(ad::sub(rest, top)), 1));               // [B]
    Var gap = ad::sub(ad::reshape(top, {batch}), ad::reshape(ad::slice(logits, 1, 0, 1), {batch}));
    Var per_anchor = ad::add(gap, tail);
    return ad::mean(per_anchor, 0);
}

LossCurve train(EncoderModel& model, const Dataset& standardized, PairSamplerConfig sampler_config,
                const TrainingConfig& config) {
    config.validate();
    LossCurve curve;
    if (config.epochs == 0) {
        return curve;
    }
    if (standardized.dim != model.input_dim()) {
        throw ConfigError("train: model expects " + std::to_string(model.input_dim()) +
                          " features, dataset has " + std::to_string(standardized.dim));
    }
    if (standardized.empty()) {
        throw DataError("train: empty dataset");
    }
    sampler_config.negatives = config.negatives;
    const std::vector<double> features = standardized.feature_matrix();
    const std::size_t rows = standardized.size();
    const std::size_t d = standardized.dim;
    const bool contrastive =
        !(model.has_decoder() && config.abad_objective == AbadObjective::ReconstructionOnly);
    std::optional<PairSampler> sampler;
    if (contrastive) sampler.emplace(features, rows, d, sampler_config);
    SeededRng rng = SeededRng::derive(config.seed, "train");
    Optimizer optimizer(config.learning_rate, config.optimizer);

    const std::size_t per_epoch =
        config.anchors_per_epoch == 0 ? rows : std::min(rows, config.anchors_per_epoch);
    std::vector<std::size_t> order(rows);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = 0; i < per_epoch; ++i) {
            std::swap(order[i], order[i + rng.below(rows - i)]);
        }
        double loss_sum = 0.0;
        std::size_t step = 0;
        for (std::size_t start = 0; start < per_epoch; start += config.batch_size, ++step) {
            const std::size_t count = std::min(config.batch_size, per_epoch - start);
            const std::span<const std::size_t> anchors(order.data() + start, count);
            PairBatch pairs;
            if (sampler) {
                pairs = sampler->sample(anchors, rng);
            } else {
                pairs.anchors.assign(anchors.begin(), anchors.end());
            }

            // Each distinct record is embedded once per step.
            std::vector<std::size_t> uniq(pairs.anchors);
            uniq.insert(uniq.end(), pairs.positives.begin(), pairs.positives.end());
            for (const auto& row : pairs.negatives) uniq.insert(uniq.end(), row.begin(), row.end());
            std::sort(uniq.begin(), uniq.end());
            uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
            auto slot = [&](std::size_t rec) {
                return static_cast<std::size_t>(std::lower_bound(uniq.begin(), uniq.end(), rec) - uniq.begin());
            };

            Tensor x(Shape{uniq.size(), d});
            for (std::size_t u = 0; u < uniq.size(); ++u) {
                std::copy_n(features.data() + uniq[u] * d, d, x.data() + u * d);
            }

            model.zero_grad();
            Tape tape;
            Var xin = tape.constant(std::move(x));
            Var z = model.forward(tape, xin);
            Var loss;
            if (contrastive) {
                std::vector<std::size_t> ia, ip, in;
                for (std::size_t b = 0; b < count; ++b) {
                    ia.push_back(slot(pairs.anchors[b]));
                    ip.push_back(slot(pairs.positives[b]));
                    for (std::size_t k : pairs.negatives[b]) in.push_back(slot(k));
                }
                const std::size_t e = model.embedding_dim();
                Var neg = ad::reshape(ad::gather_rows(z, in), {count, config.negatives, e});
                try {
                    loss = info_nce(ad::gather_rows(z, ia), ad::gather_rows(z, ip), neg, config.temperature);
                } catch (const NumericError& err) {
                    throw NumericError("training: epoch " + std::to_string(epoch + 1) + ", step " +
                                       std::to_string(step + 1) + ": " + err.what());
                }
            }
            if (model.has_decoder()) {
                Var recon = mse(model.reconstruct(tape, z), xin);
                loss = contrastive ? ad::add(loss, recon) : recon;
            }
            const double value = loss.value().item();
            if (!std::isfinite(value)) {
                throw NumericError("training: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                   ", step " + std::to_string(step + 1));
            }
            tape.backward(loss);
            try {
                optimizer.step(model.parameters());
            } catch (const NumericError& err) {
                throw NumericError("training: epoch " + std::to_string(epoch + 1) + ", step " +
                                   std::to_string(step + 1) + ": " + err.what());
            }
            loss_sum += value * static_cast<double>(count);
        }
        curve.epoch_loss.push_back(loss_sum / static_cast<double>(per_epoch));
    }
    return curve;
}

std::vector<double> embed_rows(const EncoderModel& model, std::span<const double> features, std::size_t rows) {
    constexpr std::size_t kChunk = 256;
    const std::size_t d = model.input_dim();
    if (features.size() != rows * d) {
        throw ShapeError("embed_rows: expected " + std::to_string(rows * d) + " values, got " +
                         std::to_string(features.size()));
    }
    std::vector<double> out;
    out.reserve(rows * model.embedding_dim());
    for (std::size_t start = 0; start < rows; start += kChunk) {
        const std::size_t count = std::min(kChunk, rows - start);
        const auto z = model.embed_batch(features.subspan(start * d, count * d), count);
        out.insert(out.end(), z.begin(), z.end());
    }
    return out;
}

void write_loss_curve_csv(const LossCurve& curve, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write '" + path.string() + "'");
    }
    out << "epoch,mean_loss\n";
    for (std::size_t i = 0; i < curve.size(); ++i) {
        out << (i + 1) << ',' << format_double(curve.epoch_loss[i]) << '\n';
    }
}

}  // namespace aml
