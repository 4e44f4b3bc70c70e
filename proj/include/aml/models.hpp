#pragma once

/// @file models.hpp
/// @brief The six encoder architectures compared by the benchmark.
///
/// Every encoder maps a batch of standardized feature vectors [B,d] to
/// embeddings [B,e]. Convolutional encoders read a feature vector as a
/// length-d, single-channel sequence.

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "aml/autodiff.hpp"
#include "aml/rng.hpp"

namespace aml {

enum class Architecture { SimpleCNN, DeepCNN, CNN_LSTM, ABAD, HybridCNN_GRU, CRNIM };

/// Benchmark order: simplest first, CRNIM last.
inline constexpr std::array<Architecture, 6> kModelZoo = {
    Architecture::SimpleCNN, Architecture::DeepCNN,       Architecture::CNN_LSTM,
    Architecture::ABAD,      Architecture::HybridCNN_GRU, Architecture::CRNIM,
};

/// Identifier used in files and on the command line, e.g. "HybridCNN_GRU".
std::string_view architecture_tag(Architecture arch) noexcept;
/// Row label in reports, e.g. "Hybrid CNN-GRU" or "Ours(CRNIM)".
std::string_view display_name(Architecture arch) noexcept;
Architecture parse_architecture(std::string_view tag);

inline constexpr std::size_t kDefaultEmbeddingDim = 32;
inline constexpr int kModelFormatVersion = 1;

class EncoderModel {
public:
    /// Deterministic initialization: weights uniform in +-sqrt(6/(fan_in+fan_out)),
    /// biases zero. Requires d >= 2 and e >= 2.
    static EncoderModel build(Architecture arch, std::size_t input_dim, std::size_t embedding_dim,
                              SeededRng& rng);

    Architecture architecture() const noexcept { return arch_; }
    std::size_t input_dim() const noexcept { return d_; }
    std::size_t embedding_dim() const noexcept { return e_; }
    bool has_decoder() const noexcept { return arch_ == Architecture::ABAD; }

    std::span<Parameter> parameters() noexcept { return params_; }
    std::span<const Parameter> parameters() const noexcept { return params_; }
    std::size_t parameter_count() const noexcept;
    void zero_grad();

    /// x [B,d] -> z [B,e] with parameters recorded on the tape for training.
    Var forward(Tape& tape, Var x);
    /// ABAD decoder: z [B,e] -> reconstruction [B,d].
    Var reconstruct(Tape& tape, Var z);

    /// Inference helpers; parameters enter the tape as constants.
    std::vector<double> embed(std::span<const double> features) const;
    /// Row-major [rows, e] embeddings of a row-major [rows, d] matrix.
    std::vector<double> embed_batch(std::span<const double> features, std::size_t rows) const;
    std::vector<double> reconstruct(std::span<const double> features) const;

    nlohmann::json to_json() const;
    static EncoderModel from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static EncoderModel load(const std::filesystem::path& path);

    bool operator==(const EncoderModel& other) const;

private:
    struct Conv {
        std::size_t w, b;
    };
    struct Dense {
        std::size_t w, b;
    };
    struct Gru {
        std::size_t wx, wh, bx, bh, hidden;
    };
    struct Lstm {
        std::size_t wx, wh, b, hidden;
    };

    EncoderModel(Architecture arch, std::size_t d, std::size_t e) : arch_(arch), d_(d), e_(e) {}

    // Builds the layer table; `rng` null leaves parameters zero (for loading).
    void layout(SeededRng* rng);

    std::size_t add_param(std::string name, Shape shape, double limit, SeededRng* rng);
    Conv add_conv(const std::string& name, std::size_t cin, std::size_t cout, SeededRng* rng);
    Dense add_dense(const std::string& name, std::size_t in, std::size_t out, SeededRng* rng);
    Gru add_gru(const std::string& name, std::size_t in, std::size_t hidden, SeededRng* rng);
    Lstm add_lstm(const std::string& name, std::size_t in, std::size_t hidden, SeededRng* rng);

    using WeightFn = std::function<Var(std::size_t)>;
    Var forward_impl(Tape& tape, Var x, const WeightFn& weight) const;
    Var decode_impl(Tape& tape, Var z, const WeightFn& weight) const;
    void check_input(std::size_t length, std::size_t rows) const;

    Architecture arch_;
    std::size_t d_;
    std::size_t e_;
    std::vector<Parameter> params_;
    std::vector<Conv> convs_;
    std::vector<Dense> dense_;
    std::vector<Gru> grus_;
    std::vector<Lstm> lstms_;
};

/// Mean squared error between features and the ABAD reconstruction; the ABAD
/// anomaly score. Throws ConfigError for any other architecture.
double reconstruction_error(const EncoderModel& model, std::span<const double> features);

/// Mean squared error between two equally shaped tensors on the tape.
Var mse(Var a, Var b);

}  // namespace aml
