#include "psfv/models.hpp"

#include <sstream>

namespace psfv {

std::string_view to_string(ModelKind k)
{
    switch (k) {
    case ModelKind::cnn_fixed: return "cnn_fixed";
    case ModelKind::rnn_points: return "rnn_points";
    case ModelKind::cnn_lstm: return "cnn_lstm";
    }
    return "unknown";
}

std::optional<ModelKind> parse_model_kind(std::string_view s)
{
    if (s == "cnn_fixed" || s == "cnn") return ModelKind::cnn_fixed;
    if (s == "rnn_points" || s == "rnn") return ModelKind::rnn_points;
    if (s == "cnn_lstm" || s == "cnn-lstm") return ModelKind::cnn_lstm;
    return std::nullopt;
}

ModelConfig ModelConfig::make(ModelKind kind, FeatureVariant variant)
{
    ModelConfig cfg;
    cfg.kind = kind;
    cfg.variant = variant;
    cfg.input_channels = channel_count(variant);
    if (kind == ModelKind::rnn_points) cfg.resample_n = kDefaultResampleCount;
    cfg.dropout_fc1 = kind == ModelKind::cnn_lstm && variant == FeatureVariant::stacked;
    return cfg;
}

void ModelConfig::validate() const
{
    if (input_channels != channel_count(variant)) {
        throw ModelError(ModelErrorKind::config_mismatch,
                         "input_channels " + std::to_string(input_channels) + " does not match variant " +
                             std::string(to_string(variant)));
    }
    if (resample_n.has_value() != (kind == ModelKind::rnn_points)) {
        throw ModelError(ModelErrorKind::config_mismatch, "resample_n must be set exactly for rnn_points");
    }
    if (resample_n && *resample_n < 2) throw ModelError(ModelErrorKind::config_mismatch, "resample_n must be >= 2");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ModelError(ModelErrorKind::config_mismatch, "dropout_p must be in [0,1)");
}

std::map<std::string, std::string> ModelConfig::to_map() const
{
    std::map<std::string, std::string> kv;
    kv["kind"] = to_string(kind);
    kv["variant"] = to_string(variant);
    kv["input_channels"] = std::to_string(input_channels);
    if (resample_n) kv["resample_n"] = std::to_string(*resample_n);
    kv["dropout_fc1"] = dropout_fc1 ? "1" : "0";
    std::ostringstream p;
    p.precision(17);
    p << dropout_p;
    kv["dropout_p"] = p.str();
    kv["lenet_channels"] = std::to_string(lenet_channels[0]) + "," + std::to_string(lenet_channels[1]) + "," +
                           std::to_string(lenet_channels[2]);
    kv["lenet_fc"] = std::to_string(lenet_fc);
    kv["rnn_embed"] = std::to_string(rnn_embed);
    kv["rnn_hidden"] = std::to_string(rnn_hidden);
    return kv;
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv)
{
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw ModelError(ModelErrorKind::config_mismatch, "missing config key " + key);
        return it->second;
    };
    ModelConfig cfg;
    auto kind = parse_model_kind(get("kind"));
    auto variant = parse_variant(get("variant"));
    if (!kind || !variant) throw ModelError(ModelErrorKind::config_mismatch, "unknown kind or variant in config");
    cfg.kind = *kind;
    cfg.variant = *variant;
    cfg.input_channels = std::stoi(get("input_channels"));
    if (kv.count("resample_n")) cfg.resample_n = std::stoi(kv.at("resample_n"));
    cfg.dropout_fc1 = get("dropout_fc1") == "1";
    if (kv.count("dropout_p")) cfg.dropout_p = std::stod(kv.at("dropout_p"));
    if (kv.count("lenet_channels")) {
        std::istringstream is(kv.at("lenet_channels"));
        char comma = 0;
        is >> cfg.lenet_channels[0] >> comma >> cfg.lenet_channels[1] >> comma >> cfg.lenet_channels[2];
    }
    if (kv.count("lenet_fc")) cfg.lenet_fc = std::stoi(kv.at("lenet_fc"));
    if (kv.count("rnn_embed")) cfg.rnn_embed = std::stoi(kv.at("rnn_embed"));
    if (kv.count("rnn_hidden")) cfg.rnn_hidden = std::stoi(kv.at("rnn_hidden"));
    cfg.validate();
    return cfg;
}

std::string to_key_value_text(const std::map<std::string, std::string>& kv)
{
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

std::map<std::string, std::string> parse_key_value_text(std::string_view text)
{
    std::map<std::string, std::string> kv;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(start, end - start);
        start = end + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty() || line.front() == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string_view::npos) continue;
        auto trim = [](std::string_view s) {
            while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
            while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
            return std::string(s);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

namespace {

using nn::Index;
using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

template <class Scalar>
struct ConvLayer
{
    nn::Parameter<Scalar>* kernels = nullptr;
    nn::Parameter<Scalar>* bias = nullptr;
    nn::Stride stride;
    std::string name;

    static ConvLayer make(nn::ParameterSet<Scalar>& ps, std::string name, int in, int out, nn::Stride s,
                          std::mt19937_64& rng)
    {
        ConvLayer l;
        l.name = name;
        l.stride = s;
        l.kernels = &ps.add(name + ".weight", glorot_uniform<Scalar>(Shape{out, in, 3, 3}, in * 9.0, out * 9.0, rng));
        l.bias = &ps.add(name + ".bias", Tensor<Scalar>(Shape{out}));
        return l;
    }

    Var<Scalar> operator()(Tape<Scalar>& t, Var<Scalar> x) const
    {
        return nn::conv2d(x, t.parameter(*kernels), t.parameter(*bias), stride);
    }
};

template <class Scalar>
struct LinearLayer
{
    nn::Parameter<Scalar>* weight = nullptr;
    nn::Parameter<Scalar>* bias = nullptr;

    static LinearLayer make(nn::ParameterSet<Scalar>& ps, const std::string& name, int in, int out,
                            std::mt19937_64& rng)
    {
        LinearLayer l;
        l.weight = &ps.add(name + ".weight", glorot_uniform<Scalar>(Shape{out, in}, in, out, rng));
        l.bias = &ps.add(name + ".bias", Tensor<Scalar>(Shape{out}));
        return l;
    }

    Var<Scalar> operator()(Tape<Scalar>& t, Var<Scalar> x) const
    {
        return nn::linear(x, t.parameter(*weight), t.parameter(*bias));
    }
};

template <class Scalar>
struct LstmLayer
{
    nn::Parameter<Scalar>* weight = nullptr;
    nn::Parameter<Scalar>* bias = nullptr;
    int hidden = 0;

    static LstmLayer make(nn::ParameterSet<Scalar>& ps, const std::string& name, int in, int hidden,
                          std::mt19937_64& rng)
    {
        LstmLayer l;
        l.hidden = hidden;
        l.weight = &ps.add(name + ".weight",
                           glorot_uniform<Scalar>(Shape{4 * hidden, in + hidden}, in + hidden, 4.0 * hidden, rng));
        Tensor<Scalar> b(Shape{4 * hidden});
        b.data().segment(hidden, hidden).setOnes(); // forget gate
        l.bias = &ps.add(name + ".bias", std::move(b));
        return l;
    }

    /// Runs the sequence and returns the final hidden state.
    template <class Step>
    Var<Scalar> run(Tape<Scalar>& t, Index steps, Step&& input_at, int* step_counter) const
    {
        auto w = t.parameter(*weight);
        auto b = t.parameter(*bias);
        nn::LstmState<Scalar> state{t.constant(Tensor<Scalar>(Shape{hidden})), t.constant(Tensor<Scalar>(Shape{hidden}))};
        for (Index s = 0; s < steps; ++s) {
            state = nn::lstm_cell(input_at(s), state.h, state.c, w, b);
            if (step_counter) ++*step_counter;
        }
        return state.h;
    }
};

void trace(const ForwardOptions& opt, std::string name, const nn::Shape& shape)
{
    if (opt.trace) opt.trace->push_back({std::move(name), shape});
}

void require_input(bool ok, const std::string& what)
{
    if (!ok) throw ModelError(ModelErrorKind::input_shape, what);
}

template <class Scalar>
class CnnFixed final : public Model<Scalar>
{
public:
    CnnFixed(const ModelConfig& cfg, std::uint64_t seed) : Model<Scalar>(cfg)
    {
        std::mt19937_64 rng(seed);
        auto& ps = this->params_;
        const auto& ch = cfg.lenet_channels;
        conv_[0] = ConvLayer<Scalar>::make(ps, "conv1", cfg.input_channels, ch[0], {1, 1}, rng);
        conv_[1] = ConvLayer<Scalar>::make(ps, "conv2", ch[0], ch[1], {1, 1}, rng);
        conv_[2] = ConvLayer<Scalar>::make(ps, "conv3", ch[1], ch[2], {1, 1}, rng);
        flat_ = Index(ch[2]) * 16 * 16;
        fc1_ = LinearLayer<Scalar>::make(ps, "fc1", static_cast<int>(flat_), cfg.lenet_fc, rng);
        fc2_ = LinearLayer<Scalar>::make(ps, "fc2", cfg.lenet_fc, 1, rng);
    }

    Var<Scalar> forward(Tape<Scalar>& t, const Tensor<Scalar>& input, const ForwardOptions& opt) override
    {
        require_input(input.rank() == 3 && input.dim(0) == this->cfg_.input_channels && input.dim(1) == 128 &&
                          input.dim(2) == 128,
                      "cnn_fixed expects " + std::to_string(this->cfg_.input_channels) + " x 128 x 128 input, got " +
                          nn::to_string(input.shape()));
        auto x = t.constant(input);
        for (int i = 0; i < 3; ++i) {
            x = nn::relu(conv_[i](t, x));
            trace(opt, conv_[i].name, x.shape());
            x = nn::avgpool2d(x);
            trace(opt, "pool" + std::to_string(i + 1), x.shape());
        }
        x = nn::relu(fc1_(t, nn::reshape(x, Shape{flat_})));
        trace(opt, "fc1", x.shape());
        x = fc2_(t, x);
        return nn::sigmoid(x);
    }

private:
    std::array<ConvLayer<Scalar>, 3> conv_;
    LinearLayer<Scalar> fc1_, fc2_;
    Index flat_ = 0;
};

template <class Scalar>
class RnnPoints final : public Model<Scalar>
{
public:
    RnnPoints(const ModelConfig& cfg, std::uint64_t seed) : Model<Scalar>(cfg)
    {
        std::mt19937_64 rng(seed);
        auto& ps = this->params_;
        embed_ = LinearLayer<Scalar>::make(ps, "embed", 4, cfg.rnn_embed, rng);
        lstm_ = LstmLayer<Scalar>::make(ps, "lstm", cfg.rnn_embed, cfg.rnn_hidden, rng);
        fc_ = LinearLayer<Scalar>::make(ps, "fc", cfg.rnn_hidden, 1, rng);
    }

    Var<Scalar> forward(Tape<Scalar>& t, const Tensor<Scalar>& input, const ForwardOptions& opt) override
    {
        require_input(input.rank() == 2 && input.dim(1) == 4 && input.dim(0) >= 1,
                      "rnn_points expects N x 4 input, got " + nn::to_string(input.shape()));
        const auto rows = input.matrix(input.dim(0), 4);
        auto h = lstm_.run(
            t, input.dim(0),
            [&](Index s) {
                Tensor<Scalar> row(Shape{4}, rows.row(s).transpose());
                return embed_(t, t.constant(std::move(row)));
            },
            opt.lstm_steps);
        trace(opt, "lstm", h.shape());
        return nn::sigmoid(fc_(t, h));
    }

private:
    LinearLayer<Scalar> embed_, fc_;
    LstmLayer<Scalar> lstm_;
};

template <class Scalar>
class CnnLstm final : public Model<Scalar>
{
public:
    CnnLstm(const ModelConfig& cfg, std::uint64_t seed) : Model<Scalar>(cfg)
    {
        std::mt19937_64 rng(seed);
        auto& ps = this->params_;
        conv_[0] = ConvLayer<Scalar>::make(ps, "Conv1", cfg.input_channels, 32, {1, 1}, rng);
        conv_[1] = ConvLayer<Scalar>::make(ps, "Conv2", 32, 64, {1, 1}, rng);
        conv_[2] = ConvLayer<Scalar>::make(ps, "Conv3", 64, 128, {1, 1}, rng);
        conv_[3] = ConvLayer<Scalar>::make(ps, "Conv4", 128, 256, {1, 2}, rng);
        conv_[4] = ConvLayer<Scalar>::make(ps, "Conv5", 256, 128, {1, 2}, rng);
        conv_[5] = ConvLayer<Scalar>::make(ps, "Conv6", 128, 256, {1, 2}, rng);
        lstm_ = LstmLayer<Scalar>::make(ps, "LSTM", 256, 256, rng);
        fc1_ = LinearLayer<Scalar>::make(ps, "FC1", 256, 128, rng);
        fc2_ = LinearLayer<Scalar>::make(ps, "FC2", 128, 1, rng);
    }

    Var<Scalar> forward(Tape<Scalar>& t, const Tensor<Scalar>& input, const ForwardOptions& opt) override
    {
        require_input(input.rank() == 3 && input.dim(0) == this->cfg_.input_channels && input.dim(1) == 128,
                      "cnn_lstm expects " + std::to_string(this->cfg_.input_channels) + " x 128 x W input, got " +
                          nn::to_string(input.shape()));
        if (input.dim(2) <= 0 || input.dim(2) % 16 != 0) {
            throw ModelError(ModelErrorKind::width_not_multiple_of_16,
                             "cnn_lstm input width " + std::to_string(input.dim(2)) + " is not a positive multiple of 16");
        }

        auto x = t.constant(input);
        int pool = 0;
        auto conv = [&](int i) {
            x = nn::relu(conv_[i](t, x));
            trace(opt, conv_[i].name, x.shape());
        };
        auto avg = [&]() {
            x = nn::avgpool2d(x);
            trace(opt, "AvgPool" + std::to_string(++pool), x.shape());
        };
        conv(0);
        avg();
        conv(1);
        avg();
        conv(2);
        conv(3);
        avg();
        conv(4);
        conv(5);
        avg();

        const Index steps = x.shape()[2];
        auto h = lstm_.run(t, steps, [&](Index s) { return nn::column(x, s); }, opt.lstm_steps);
        trace(opt, "LSTM", h.shape());
        auto z = nn::relu(fc1_(t, h));
        if (this->cfg_.dropout_fc1 && opt.training && opt.rng) z = nn::dropout(z, this->cfg_.dropout_p, *opt.rng);
        trace(opt, "FC1", z.shape());
        z = fc2_(t, z);
        trace(opt, "FC2", z.shape());
        return nn::sigmoid(z);
    }

private:
    std::array<ConvLayer<Scalar>, 6> conv_;
    LstmLayer<Scalar> lstm_;
    LinearLayer<Scalar> fc1_, fc2_;
};

void require_kind(const ModelConfig& cfg, ModelKind kind)
{
    cfg.validate();
    if (cfg.kind != kind) {
        throw ModelError(ModelErrorKind::config_mismatch, "config kind " + std::string(to_string(cfg.kind)) +
                                                              " cannot build " + std::string(to_string(kind)));
    }
}

} // namespace

template <class Scalar>
std::unique_ptr<Model<Scalar>> build_cnn_fixed(const ModelConfig& cfg, std::uint64_t seed)
{
    require_kind(cfg, ModelKind::cnn_fixed);
    return std::make_unique<CnnFixed<Scalar>>(cfg, seed);
}

template <class Scalar>
std::unique_ptr<Model<Scalar>> build_rnn_points(const ModelConfig& cfg, std::uint64_t seed)
{
    require_kind(cfg, ModelKind::rnn_points);
    return std::make_unique<RnnPoints<Scalar>>(cfg, seed);
}

template <class Scalar>
std::unique_ptr<Model<Scalar>> build_cnn_lstm(const ModelConfig& cfg, std::uint64_t seed)
{
    require_kind(cfg, ModelKind::cnn_lstm);
    return std::make_unique<CnnLstm<Scalar>>(cfg, seed);
}

template <class Scalar>
std::unique_ptr<Model<Scalar>> build_model(const ModelConfig& cfg, std::uint64_t seed)
{
    switch (cfg.kind) {
    case ModelKind::cnn_fixed: return build_cnn_fixed<Scalar>(cfg, seed);
    case ModelKind::rnn_points: return build_rnn_points<Scalar>(cfg, seed);
    case ModelKind::cnn_lstm: return build_cnn_lstm<Scalar>(cfg, seed);
    }
    throw ModelError(ModelErrorKind::config_mismatch, "unknown model kind");
}

#define PSFV_INSTANTIATE(S)                                                                     \
    template std::unique_ptr<Model<S>> build_cnn_fixed<S>(const ModelConfig&, std::uint64_t);  \
    template std::unique_ptr<Model<S>> build_rnn_points<S>(const ModelConfig&, std::uint64_t); \
    template std::unique_ptr<Model<S>> build_cnn_lstm<S>(const ModelConfig&, std::uint64_t);   \
    template std::unique_ptr<Model<S>> build_model<S>(const ModelConfig&, std::uint64_t);

PSFV_INSTANTIATE(float)
PSFV_INSTANTIATE(double)

#undef PSFV_INSTANTIATE

} // namespace psfv
