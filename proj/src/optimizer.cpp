#include "aml/optimizer.hpp"

#include <cmath>
#include <string>

#include "aml/error.hpp"

namespace aml {

OptimizerMode parse_optimizer_mode(std::string_view name) {
    if (name == "sgd") return OptimizerMode::Sgd;
    if (name == "adam") return OptimizerMode::Adam;
    throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected sgd or adam)");
}

std::string_view optimizer_mode_name(OptimizerMode mode) noexcept {
    return mode == OptimizerMode::Sgd ? "sgd" : "adam";
}

Optimizer::Optimizer(double learning_rate, OptimizerMode mode) : lr_(learning_rate), mode_(mode) {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("optimizer: learning rate must be positive and finite, got " +
                          std::to_string(learning_rate));
    }
}

void Optimizer::step(std::span<Parameter> params) {
    for (const Parameter& p : params) {
        if (p.grad.size() != p.value.size()) {
            throw ShapeError("optimizer: gradient of '" + p.name + "' has shape " +
                             shape_string(p.grad.shape()) + ", value has " +
                             shape_string(p.value.shape()));
        }
        if (!p.grad.all_finite()) {
            throw NumericError("optimizer: non-finite gradient for parameter '" + p.name + "'");
        }
    }

    ++steps_;
    if (mode_ == OptimizerMode::Sgd) {
        for (Parameter& p : params) {
            auto w = p.value.values();
            auto g = p.grad.values();
            for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr_ * g[i];
        }
        return;
    }

    if (m_.empty()) {
        for (const Parameter& p : params) {
            m_.emplace_back(p.value.size(), 0.0);
            v_.emplace_back(p.value.size(), 0.0);
        }
    } else if (m_.size() != params.size()) {
        throw ConfigError("optimizer: parameter list changed between steps");
    }

    const double t = static_cast<double>(steps_);
    const double corr1 = 1.0 - std::pow(kBeta1, t);
    const double corr2 = 1.0 - std::pow(kBeta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto w = params[k].value.values();
        auto g = params[k].grad.values();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
            v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
            const double mhat = m[i] / corr1;
            const double vhat = v[i] / corr2;
            w[i] -= lr_ * mhat / (std::sqrt(vhat) + kEps);
        }
    }
}

}  // namespace aml
