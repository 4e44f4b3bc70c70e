#include "aml/models.hpp"

#include <cmath>
#include <fstream>

#include "aml/error.hpp"

namespace aml {

namespace {

constexpr std::size_t kConvWidth = 3;
constexpr std::size_t kRecurrentHidden = 32;
constexpr std::size_t kAbadHidden = 64;
constexpr std::size_t kFusionWidth = 64;

}  // namespace

std::string_view architecture_tag(Architecture arch) noexcept {
    switch (arch) {
        case Architecture::SimpleCNN: return "SimpleCNN";
        case Architecture::DeepCNN: return "DeepCNN";
        case Architecture::CNN_LSTM: return "CNN_LSTM";
        case Architecture::ABAD: return "ABAD";
        case Architecture::HybridCNN_GRU: return "HybridCNN_GRU";
        case Architecture::CRNIM: return "CRNIM";
    }
    return "unknown";
}

std::string_view display_name(Architecture arch) noexcept {
    switch (arch) {
        case Architecture::SimpleCNN: return "Simple CNN";
        case Architecture::DeepCNN: return "Deep CNN";
        case Architecture::CNN_LSTM: return "CNN-LSTM";
        case Architecture::ABAD: return "ABAD";
        case Architecture::HybridCNN_GRU: return "Hybrid CNN-GRU";
        case Architecture::CRNIM: return "Ours(CRNIM)";
    }
    return "unknown";
}

Architecture parse_architecture(std::string_view tag) {
    for (Architecture a : kModelZoo) {
        if (tag == architecture_tag(a)) return a;
    }
    throw ConfigError("unknown architecture '" + std::string(tag) +
                      "' (expected SimpleCNN, DeepCNN, CNN_LSTM, ABAD, HybridCNN_GRU or CRNIM)");
}

std::size_t EncoderModel::add_param(std::string name, Shape shape, double limit, SeededRng* rng) {
    Tensor value(std::move(shape));
    if (rng != nullptr && limit > 0.0) {
        for (auto& v : value.values()) v = rng->uniform(-limit, limit);
    }
    params_.emplace_back(std::move(name), std::move(value));
    return params_.size() - 1;
}

EncoderModel::Conv EncoderModel::add_conv(const std::string& name, std::size_t cin, std::size_t cout,
                                          SeededRng* rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>((cin + cout) * kConvWidth));
    Conv c{};
    c.w = add_param(name + ".weight", {cout, cin, kConvWidth}, limit, rng);
    c.b = add_param(name + ".bias", {cout, 1}, 0.0, rng);
    convs_.push_back(c);
    return c;
}

EncoderModel::Dense EncoderModel::add_dense(const std::string& name, std::size_t in, std::size_t out,
                                            SeededRng* rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Dense l{};
    l.w = add_param(name + ".weight", {in, out}, limit, rng);
    l.b = add_param(name + ".bias", {out}, 0.0, rng);
    dense_.push_back(l);
    return l;
}

EncoderModel::Gru EncoderModel::add_gru(const std::string& name, std::size_t in, std::size_t hidden,
                                        SeededRng* rng) {
    // Gate blocks are stacked column-wise: reset, update, candidate.
    Gru g{};
    g.hidden = hidden;
    g.wx = add_param(name + ".input_weight", {in, 3 * hidden},
                     std::sqrt(6.0 / static_cast<double>(in + hidden)), rng);
    g.wh = add_param(name + ".hidden_weight", {hidden, 3 * hidden},
                     std::sqrt(6.0 / static_cast<double>(2 * hidden)), rng);
    g.bx = add_param(name + ".input_bias", {3 * hidden}, 0.0, rng);
    g.bh = add_param(name + ".hidden_bias", {3 * hidden}, 0.0, rng);
    grus_.push_back(g);
    return g;
}

EncoderModel::Lstm EncoderModel::add_lstm(const std::string& name, std::size_t in, std::size_t hidden,
                                          SeededRng* rng) {
    // Gate blocks: input, forget, cell candidate, output.
    Lstm l{};
    l.hidden = hidden;
    l.wx = add_param(name + ".input_weight", {in, 4 * hidden},
                     std::sqrt(6.0 / static_cast<double>(in + hidden)), rng);
    l.wh = add_param(name + ".hidden_weight", {hidden, 4 * hidden},
                     std::sqrt(6.0 / static_cast<double>(2 * hidden)), rng);
    l.b = add_param(name + ".bias", {4 * hidden}, 0.0, rng);
    lstms_.push_back(l);
    return l;
}

void EncoderModel::layout(SeededRng* rng) {
    switch (arch_) {
        case Architecture::SimpleCNN:
            add_conv("conv1", 1, 8, rng);
            add_conv("conv2", 8, 16, rng);
            add_dense("head", 16, e_, rng);
            break;
        case Architecture::DeepCNN:
            add_conv("conv1", 1, 8, rng);
            add_conv("conv2", 8, 16, rng);
            add_conv("conv3", 16, 32, rng);
            add_conv("conv4", 32, 32, rng);
            add_dense("head", 32, e_, rng);
            break;
        case Architecture::CNN_LSTM:
            add_conv("conv1", 1, 8, rng);
            add_conv("conv2", 8, 16, rng);
            add_lstm("lstm", 16, kRecurrentHidden, rng);
            add_dense("head", kRecurrentHidden, e_, rng);
            break;
        case Architecture::ABAD:
            add_dense("enc1", d_, kAbadHidden, rng);
            add_dense("enc2", kAbadHidden, e_, rng);
            add_dense("dec1", e_, kAbadHidden, rng);
            add_dense("dec2", kAbadHidden, d_, rng);
            break;
        case Architecture::HybridCNN_GRU:
            add_conv("conv1", 1, 8, rng);
            add_conv("conv2", 8, 16, rng);
            add_gru("gru", 16, kRecurrentHidden, rng);
            add_dense("head", kRecurrentHidden, e_, rng);
            break;
        case Architecture::CRNIM:
            add_conv("conv1", 1, 8, rng);
            add_conv("conv2", 8, 16, rng);
            add_conv("conv3", 16, 32, rng);
            add_conv("conv4", 32, 32, rng);
            add_gru("gru", 1, kRecurrentHidden, rng);
            add_dense("skip", d_, kFusionWidth, rng);
            add_dense("head", kFusionWidth, e_, rng);
            break;
    }
}

EncoderModel EncoderModel::build(Architecture arch, std::size_t input_dim, std::size_t embedding_dim,
                                 SeededRng& rng) {
    if (input_dim < 2 || embedding_dim < 2) {
        throw ConfigError("build: need d >= 2 and e >= 2, got d=" + std::to_string(input_dim) +
                          ", e=" + std::to_string(embedding_dim));
    }
    EncoderModel m(arch, input_dim, embedding_dim);
    m.layout(&rng);
    return m;
}

std::size_t EncoderModel::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

void EncoderModel::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void EncoderModel::check_input(std::size_t length, std::size_t rows) const {
    if (rows == 0 || length != rows * d_) {
        throw ShapeError("embed: expected " + std::to_string(d_) + " features per row, got " +
                         std::to_string(rows == 0 ? length : length / rows) +
                         (rows == 0 ? "" : " (" + std::to_string(length) + " values for " +
                                                std::to_string(rows) + " rows)"));
    }
}

namespace {

Var dense_layer(Var x, Var w, Var b) { return ad::add(ad::matmul(x, w), b); }

Var conv_layer(Var x, Var w, Var b) { return ad::relu(ad::add(ad::conv1d(x, w), b)); }

// Runs a GRU over a [B,T,...] sequence provided step by step; returns last hidden.
template <typename StepInput>
Var run_gru(Tape& tape, std::size_t batch, std::size_t steps, std::size_t hidden, Var wx, Var wh,
            Var bx, Var bh, StepInput&& input_at) {
    Var h = tape.constant(Tensor(Shape{batch, hidden}));
    for (std::size_t t = 0; t < steps; ++t) {
        Var gx = dense_layer(input_at(t), wx, bx);
        Var gh = dense_layer(h, wh, bh);
        Var r = ad::sigmoid(ad::add(ad::slice(gx, 1, 0, hidden), ad::slice(gh, 1, 0, hidden)));
        Var z = ad::sigmoid(ad::add(ad::slice(gx, 1, hidden, hidden), ad::slice(gh, 1, hidden, hidden)));
        Var n = ad::tanh(ad::add(ad::slice(gx, 1, 2 * hidden, hidden),
                                 ad::mul(r, ad::slice(gh, 1, 2 * hidden, hidden))));
        // h' = (1 - z) * n + z * h
        h = ad::add(n, ad::mul(z, ad::sub(h, n)));
    }
    return h;
}

template <typename StepInput>
Var run_lstm(Tape& tape, std::size_t batch, std::size_t steps, std::size_t hidden, Var wx, Var wh,
             Var b, StepInput&& input_at) {
    Var h = tape.constant(Tensor(Shape{batch, hidden}));
    Var c = tape.constant(Tensor(Shape{batch, hidden}));
    for (std::size_t t = 0; t < steps; ++t) {
        Var gates = ad::add(ad::add(ad::matmul(input_at(t), wx), ad::matmul(h, wh)), b);
        Var i = ad::sigmoid(ad::slice(gates, 1, 0, hidden));
        Var f = ad::sigmoid(ad::slice(gates, 1, hidden, hidden));
        Var g = ad::tanh(ad::slice(gates, 1, 2 * hidden, hidden));
        Var o = ad::sigmoid(ad::slice(gates, 1, 3 * hidden, hidden));
        c = ad::add(ad::mul(f, c), ad::mul(i, g));
        h = ad::mul(o, ad::tanh(c));
    }
    return h;
}

}  // namespace

Var EncoderModel::forward_impl(Tape& tape, Var x, const WeightFn& weight) const {
    const Shape& s = x.shape();
    if (s.size() != 2 || s[1] != d_) {
        throw ShapeError("embed: expected input shape [B," + std::to_string(d_) + "], got " +
                         shape_string(s));
    }
    const std::size_t batch = s[0];
    auto conv = [&](std::size_t k, Var in) {
        return conv_layer(in, weight(convs_[k].w), weight(convs_[k].b));
    };
    auto dense = [&](std::size_t k, Var in) {
        return dense_layer(in, weight(dense_[k].w), weight(dense_[k].b));
    };
    auto seq = [&] { return ad::reshape(x, {batch, 1, d_}); };

    switch (arch_) {
        case Architecture::SimpleCNN: {
            Var h = ad::maxpool2(conv(1, conv(0, seq())));
            return dense(0, ad::mean(h, 2));
        }
        case Architecture::DeepCNN: {
            Var h = ad::maxpool2(conv(1, conv(0, seq())));
            h = ad::maxpool2(conv(3, conv(2, h)));
            return dense(0, ad::mean(h, 2));
        }
        case Architecture::CNN_LSTM: {
            Var h = ad::maxpool2(conv(1, conv(0, seq())));
            const Lstm& l = lstms_[0];
            Var last = run_lstm(tape, batch, h.shape()[2], l.hidden, weight(l.wx), weight(l.wh),
                                weight(l.b), [&](std::size_t t) { return ad::select(h, 2, t); });
            return dense(0, last);
        }
        case Architecture::ABAD:
            return dense(1, ad::relu(dense(0, x)));
        case Architecture::HybridCNN_GRU: {
            Var h = ad::maxpool2(conv(1, conv(0, seq())));
            const Gru& g = grus_[0];
            Var last = run_gru(tape, batch, h.shape()[2], g.hidden, weight(g.wx), weight(g.wh),
                               weight(g.bx), weight(g.bh),
                               [&](std::size_t t) { return ad::select(h, 2, t); });
            return dense(0, last);
        }
        case Architecture::CRNIM: {
            Var c = ad::maxpool2(conv(1, conv(0, seq())));
            c = ad::maxpool2(conv(3, conv(2, c)));
            Var conv_branch = ad::mean(c, 2);
            const Gru& g = grus_[0];
            Var rec_branch = run_gru(tape, batch, d_, g.hidden, weight(g.wx), weight(g.wh),
                                     weight(g.bx), weight(g.bh), [&](std::size_t t) {
                                         return ad::slice(x, 1, t, 1);
                                     });
            Var fused = ad::add(ad::concat({conv_branch, rec_branch}, 1), dense(0, x));
            return dense(1, fused);
        }
    }
    throw ConfigError("unknown architecture");
}

Var EncoderModel::decode_impl(Tape&, Var z, const WeightFn& weight) const {
    if (!has_decoder()) {
        throw ConfigError("reconstruct: architecture " + std::string(architecture_tag(arch_)) +
                          " has no decoder (ABAD only)");
    }
    if (z.shape().size() != 2 || z.shape()[1] != e_) {
        throw ShapeError("reconstruct: expected embedding shape [B," + std::to_string(e_) + "], got " +
                         shape_string(z.shape()));
    }
    Var h = ad::relu(dense_layer(z, weight(dense_[2].w), weight(dense_[2].b)));
    return dense_layer(h, weight(dense_[3].w), weight(dense_[3].b));
}

Var EncoderModel::forward(Tape& tape, Var x) {
    // One tape node per parameter, shared by every timestep that uses it.
    std::vector<Var> cache(params_.size());
    std::vector<bool> made(params_.size(), false);
    return forward_impl(tape, x, [&](std::size_t i) {
        if (!made[i]) {
            cache[i] = tape.param(params_[i]);
            made[i] = true;
        }
        return cache[i];
    });
}

Var EncoderModel::reconstruct(Tape& tape, Var z) {
    return decode_impl(tape, z, [&](std::size_t i) { return tape.param(params_[i]); });
}

std::vector<double> EncoderModel::embed_batch(std::span<const double> features, std::size_t rows) const {
    check_input(features.size(), rows);
    Tape tape;
    std::vector<Var> cache(params_.size());
    std::vector<bool> made(params_.size(), false);
    auto weight = [&](std::size_t i) {
        if (!made[i]) {
            cache[i] = tape.constant(params_[i].value);
            made[i] = true;
        }
        return cache[i];
    };
    Var x = tape.constant(Tensor(Shape{rows, d_}, std::vector<double>(features.begin(), features.end())));
    Var z = forward_impl(tape, x, weight);
    const auto v = z.value().values();
    return {v.begin(), v.end()};
}

std::vector<double> EncoderModel::embed(std::span<const double> features) const {
    if (features.size() != d_) {
        throw ShapeError("embed: expected " + std::to_string(d_) + " features, got " +
                         std::to_string(features.size()));
    }
    return embed_batch(features, 1);
}

std::vector<double> EncoderModel::reconstruct(std::span<const double> features) const {
    if (!has_decoder()) {
        throw ConfigError("reconstruct: architecture " + std::string(architecture_tag(arch_)) +
                          " has no decoder (ABAD only)");
    }
    if (features.size() != d_) {
        throw ShapeError("reconstruct: expected " + std::to_string(d_) + " features, got " +
                         std::to_string(features.size()));
    }
    Tape tape;
    auto weight = [&](std::size_t i) { return tape.constant(params_[i].value); };
    Var x = tape.constant(Tensor::vector(features).reshaped({1, d_}));
    Var out = decode_impl(tape, forward_impl(tape, x, weight), weight);
    const auto v = out.value().values();
    return {v.begin(), v.end()};
}

double reconstruction_error(const EncoderModel& model, std::span<const double> features) {
    const auto recon = model.reconstruct(features);
    double acc = 0.0;
    for (std::size_t i = 0; i < recon.size(); ++i) {
        const double d = recon[i] - features[i];
        acc += d * d;
    }
    return acc / static_cast<double>(recon.size());
}

Var mse(Var a, Var b) {
    Var diff = ad::sub(a, b);
    return ad::scale(ad::sum(ad::mul(diff, diff)), 1.0 / static_cast<double>(diff.value().size()));
}

nlohmann::json EncoderModel::to_json() const {
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : params_) {
        params.push_back({{"name", p.name},
                          {"shape", p.value.shape()},
                          {"values", std::vector<double>(p.value.values().begin(), p.value.values().end())}});
    }
    return {{"format_version", kModelFormatVersion},
            {"architecture", architecture_tag(arch_)},
            {"d", d_},
            {"e", e_},
            {"parameters", std::move(params)}};
}

EncoderModel EncoderModel::from_json(const nlohmann::json& j) {
    try {
        const int version = j.at("format_version").get<int>();
        if (version != kModelFormatVersion) {
            throw DataError("model: unsupported format_version " + std::to_string(version));
        }
        const auto arch = parse_architecture(j.at("architecture").get<std::string>());
        const auto d = j.at("d").get<std::size_t>();
        const auto e = j.at("e").get<std::size_t>();
        if (d < 2 || e < 2) {
            throw DataError("model: invalid dimensions d=" + std::to_string(d) + ", e=" + std::to_string(e));
        }
        EncoderModel m(arch, d, e);
        m.layout(nullptr);
        const auto& params = j.at("parameters");
        if (params.size() != m.params_.size()) {
            throw DataError("model: expected " + std::to_string(m.params_.size()) + " parameter tensors, got " +
                            std::to_string(params.size()));
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            Parameter& p = m.params_[i];
            const auto name = params[i].at("name").get<std::string>();
            const auto shape = params[i].at("shape").get<Shape>();
            if (name != p.name || shape != p.value.shape()) {
                throw DataError("model: parameter " + std::to_string(i) + " is '" + name + "' " +
                                shape_string(shape) + ", expected '" + p.name + "' " +
                                shape_string(p.value.shape()));
            }
            p.value = Tensor(shape, params[i].at("values").get<std::vector<double>>());
            p.zero_grad();
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("model: ") + e.what());
    } catch (const ShapeError& e) {
        throw DataError(std::string("model: ") + e.what());
    } catch (const ConfigError& e) {
        throw DataError(std::string("model: ") + e.what());
    }
}

void EncoderModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write '" + path.string() + "'");
    }
    out << to_json().dump() << '\n';
}

EncoderModel EncoderModel::load(const std::filesystem::path& path) {
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
    return from_json(j);
}

bool EncoderModel::operator==(const EncoderModel& other) const {
    if (arch_ != other.arch_ || d_ != other.d_ || e_ != other.e_ || params_.size() != other.params_.size()) {
        return false;
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].name != other.params_[i].name || params_[i].value != other.params_[i].value) {
            return false;
        }
    }
    return true;
}

}  // namespace aml
