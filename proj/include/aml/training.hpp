#pragma once

/// @file training.hpp
/// @brief Contrastive (InfoNCE) objective and the training loop.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "aml/autodiff.hpp"
#include "aml/dataio.hpp"
#include "aml/models.hpp"
#include "aml/optimizer.hpp"

namespace aml {

enum class AbadObjective { Joint, ReconstructionOnly };

struct TrainingConfig {
    double temperature = 0.1;
    std::size_t negatives = 8;
    std::size_t epochs = 30;
    std::size_t batch_size = 64;
    /// Anchors drawn per epoch; 0 uses every record once.
    std::size_t anchors_per_epoch = 512;
    double learning_rate = 1e-3;
    OptimizerMode optimizer = OptimizerMode::Adam;
    AbadObjective abad_objective = AbadObjective::Joint;
    std::uint64_t seed = 7;

    void validate() const;
};

/// Mean loss per epoch, in epoch order.
struct LossCurve {
    std::vector<double> epoch_loss;

    bool empty() const noexcept { return epoch_loss.empty(); }
    std::size_t size() const noexcept { return epoch_loss.size(); }
    bool operator==(const LossCurve&) const = default;
};

/// (a.b) / (|a| |b|). Throws NumericError on a zero vector, ShapeError on a
/// length mismatch.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// -log( e^{s+/t} / (e^{s+/t} + sum_k e^{s-_k/t}) ) with cosine similarities s,
/// evaluated through a max-shifted log-sum-exp.
double info_nce_loss(std::span<const double> anchor, std::span<const double> positive,
                     std::span<const std::vector<double>> negatives, double temperature);

// Differentiable forms.
/// Cosine similarity of two 1-D vectors as a scalar node.
Var cosine_similarity(Var a, Var b);
/// Mean InfoNCE over a batch: anchors [B,e], positives [B,e], negatives [B,N,e].
/// Inputs need not be normalized.
Var info_nce(Var anchors, Var positives, Var negatives, double temperature);

/// Runs `config.epochs` epochs of optimizer steps over freshly sampled pair
/// batches of the standardized dataset. ABAD adds (or, with
/// ReconstructionOnly, substitutes) the mean squared reconstruction loss with
/// weight 1. Throws NumericError naming epoch and step on a non-finite loss.
/// The sampler's negative count is taken from `config.negatives`.
LossCurve train(EncoderModel& model, const Dataset& standardized, PairSamplerConfig sampler,
                const TrainingConfig& config);

/// Row-major [rows, e] encoder outputs, computed in fixed-size chunks. These
/// are the unnormalized z that clustering and scoring measure distances on;
/// only the contrastive loss normalizes.
std::vector<double> embed_rows(const EncoderModel& model, std::span<const double> features, std::size_t rows);

/// `epoch,mean_loss` with epochs numbered from 1.
void write_loss_curve_csv(const LossCurve& curve, const std::filesystem::path& path);

}  // namespace aml
