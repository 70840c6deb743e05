#pragma once

#include "psfv/nn/ops.hpp"
#include "psfv/psf.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace psfv {

enum class ModelKind : std::uint8_t { cnn_fixed, rnn_points, cnn_lstm };

std::string_view to_string(ModelKind k);
/// Accepts both the config spelling (cnn_fixed, rnn_points, cnn_lstm) and the
/// CLI spelling (cnn, rnn, cnn-lstm).
std::optional<ModelKind> parse_model_kind(std::string_view s);

enum class ModelErrorKind { config_mismatch, width_not_multiple_of_16, input_shape };

class ModelError : public std::invalid_argument
{
public:
    ModelError(ModelErrorKind kind, const std::string& what) : std::invalid_argument(what), kind_(kind) {}
    ModelErrorKind kind() const noexcept { return kind_; }

private:
    ModelErrorKind kind_;
};

struct ModelConfig
{
    ModelKind kind = ModelKind::cnn_lstm;
    FeatureVariant variant = FeatureVariant::original;
    int input_channels = 7;
    std::optional<int> resample_n;
    bool dropout_fc1 = false;
    double dropout_p = 0.5;

    // LeNet-5 sizing for the fixed-width CNN.
    std::array<int, 3> lenet_channels{6, 16, 120};
    int lenet_fc = 84;
    // Recurrent point model.
    int rnn_embed = 64;
    int rnn_hidden = 128;

    /// Consistent defaults for a kind/variant pair: 14 channels for stacked
    /// input, resample count 128 for the point model, FC1 dropout for the
    /// stacked CNN-LSTM.
    static ModelConfig make(ModelKind kind, FeatureVariant variant);

    /// Throws ModelError(config_mismatch) when fields disagree.
    void validate() const;

    std::map<std::string, std::string> to_map() const;
    static ModelConfig from_map(const std::map<std::string, std::string>& kv);
};

std::string to_key_value_text(const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> parse_key_value_text(std::string_view text);

struct LayerTrace
{
    std::string name;
    nn::Shape shape; // C x H x W for maps, (n) for vectors
};

struct ForwardOptions
{
    bool training = false;
    std::mt19937_64* rng = nullptr;
    std::vector<LayerTrace>* trace = nullptr;
    int* lstm_steps = nullptr;
};

/// A binary classifier emitting P(genuine) as a single-element tensor.
template <class Scalar>
class Model
{
public:
    explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {}
    virtual ~Model() = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const { return cfg_; }
    nn::ParameterSet<Scalar>& parameters() { return params_; }
    const nn::ParameterSet<Scalar>& parameters() const { return params_; }

    virtual nn::Var<Scalar> forward(nn::Tape<Scalar>& tape, const nn::Tensor<Scalar>& input,
                                    const ForwardOptions& opt = {}) = 0;

    /// Inference-mode probability.
    Scalar predict(const nn::Tensor<Scalar>& input)
    {
        nn::Tape<Scalar> tape;
        return forward(tape, input).value()[0];
    }

protected:
    ModelConfig cfg_;
    nn::ParameterSet<Scalar> params_;
};

template <class Scalar>
std::unique_ptr<Model<Scalar>> build_cnn_fixed(const ModelConfig& cfg, std::uint64_t seed);
template <class Scalar>
std::unique_ptr<Model<Scalar>> build_rnn_points(const ModelConfig& cfg, std::uint64_t seed);
template <class Scalar>
std::unique_ptr<Model<Scalar>> build_cnn_lstm(const ModelConfig& cfg, std::uint64_t seed);

/// Dispatches on cfg.kind.
template <class Scalar>
std::unique_ptr<Model<Scalar>> build_model(const ModelConfig& cfg, std::uint64_t seed);

/// Decision rule: genuine only when the probability is strictly above the
/// threshold, so an exact tie rejects.
inline bool classify_genuine(double probability, double threshold = 0.5)
{
    return probability > threshold;
}

/// Glorot-uniform fill with limit sqrt(6 / (fan_in + fan_out)).
template <class Scalar>
nn::Tensor<Scalar> glorot_uniform(nn::Shape shape, double fan_in, double fan_out, std::mt19937_64& rng)
{
    nn::Tensor<Scalar> t(std::move(shape));
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (nn::Index i = 0; i < t.size(); ++i) t[i] = Scalar(dist(rng));
    return t;
}

extern template std::unique_ptr<Model<float>> build_model<float>(const ModelConfig&, std::uint64_t);
extern template std::unique_ptr<Model<double>> build_model<double>(const ModelConfig&, std::uint64_t);

} // namespace psfv
