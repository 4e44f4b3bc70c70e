#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "aml/autodiff.hpp"

namespace aml {

enum class OptimizerMode { Sgd, Adam };

OptimizerMode parse_optimizer_mode(std::string_view name);
std::string_view optimizer_mode_name(OptimizerMode mode) noexcept;

/// Plain gradient descent or Adam (beta1 0.9, beta2 0.999, eps 1e-8, bias
/// corrected). Moment buffers are bound to parameter positions on the first
/// step, so the same parameter list must be passed every time.
class Optimizer {
public:
    explicit Optimizer(double learning_rate, OptimizerMode mode = OptimizerMode::Adam);

    /// Applies one update from each Parameter::grad. Throws NumericError naming
    /// the first parameter whose gradient holds a non-finite value; nothing is
    /// modified in that case.
    void step(std::span<Parameter> params);

    double learning_rate() const noexcept { return lr_; }
    OptimizerMode mode() const noexcept { return mode_; }
    std::uint64_t step_count() const noexcept { return steps_; }

    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

private:
    double lr_;
    OptimizerMode mode_;
    std::uint64_t steps_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

}  // namespace aml
