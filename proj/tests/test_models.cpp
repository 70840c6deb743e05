#include "psfv/models.hpp"
#include "support/oracles.hpp"
#include "support/cnn_lstm_layout.hpp"

#include <doctest.h>

using namespace psfv;
using nn::Shape;
using nn::Tensor;

namespace {

template <class Scalar>
Tensor<Scalar> random_input(Shape shape, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    return testing::random_tensor(std::move(shape), rng, 0.0, 2.0).cast<Scalar>();
}

/// Central differences on a sample of parameter entries of a double model.
/// The small step leaves ~1e-10 of roundoff, hence the 1e-6 floor.
double model_gradient_error(Model<double>& model, const Tensor<double>& input, int samples, std::uint64_t seed)
{
    auto loss_of = [&](bool backprop) {
        nn::Tape<double> tape;
        auto loss = nn::bce_loss(model.forward(tape, input), 1.0);
        if (backprop) tape.backward(loss);
        return loss.value()[0];
    };
    // Zero-initialized biases put dead ReLU units exactly on the kink, where a
    // central difference straddles two slopes.
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> jitter(0.01, 0.1);
    for (auto& p : model.parameters()) {
        if (p.name.ends_with(".bias")) {
            for (nn::Index j = 0; j < p.value.size(); ++j) p.value[j] += jitter(rng);
        }
    }
    model.parameters().zero_grad();
    loss_of(true);

    double worst = 0.0;
    for (auto& p : model.parameters()) {
        std::uniform_int_distribution<nn::Index> pick(0, p.value.size() - 1);
        for (int s = 0; s < samples; ++s) {
            const auto j = pick(rng);
            const double saved = p.value[j];
            const double h = 1e-6; // tens of thousands of ReLU kinks in range
            p.value[j] = saved + h;
            const double up = loss_of(false);
            p.value[j] = saved - h;
            const double down = loss_of(false);
            p.value[j] = saved;
            const double numeric = (up - down) / (2 * h);
            const double analytic = p.grad[j];
            worst = std::max(worst, std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6}));
        }
    }
    return worst;
}

} // namespace

TEST_CASE("model config invariants")
{
    auto cfg = ModelConfig::make(ModelKind::cnn_lstm, FeatureVariant::stacked);
    CHECK(cfg.input_channels == 14);
    CHECK(cfg.dropout_fc1);
    CHECK_FALSE(cfg.resample_n);
    cfg.validate();

    auto rnn = ModelConfig::make(ModelKind::rnn_points, FeatureVariant::original);
    CHECK(rnn.resample_n == 128);

    auto bad = cfg;
    bad.input_channels = 7;
    CHECK_THROWS_AS(bad.validate(), ModelError);
    bad = cfg;
    bad.resample_n = 64;
    CHECK_THROWS_AS(bad.validate(), ModelError);
    CHECK_THROWS_AS(build_cnn_fixed<float>(cfg, 1), ModelError);

    CHECK(parse_model_kind("cnn") == ModelKind::cnn_fixed);
    CHECK(parse_model_kind("rnn") == ModelKind::rnn_points);
    CHECK(parse_model_kind("cnn-lstm") == ModelKind::cnn_lstm);
    CHECK_FALSE(parse_model_kind("mlp"));
}

TEST_CASE("model config round-trips through key=value text")
{
    for (auto kind : {ModelKind::cnn_fixed, ModelKind::rnn_points, ModelKind::cnn_lstm}) {
        for (auto v : {FeatureVariant::original, FeatureVariant::temporal, FeatureVariant::stacked}) {
            auto cfg = ModelConfig::make(kind, v);
            cfg.lenet_fc = 40;
            auto text = to_key_value_text(cfg.to_map());
            auto back = ModelConfig::from_map(parse_key_value_text(text));
            CHECK(back.to_map() == cfg.to_map());
        }
    }
    auto kv = parse_key_value_text("# comment\r\na = 1\r\n\nb=x=y\n");
    CHECK(kv.at("a") == "1");
    CHECK(kv.at("b") == "x=y");
}

TEST_CASE("cnn_lstm shape trace matches the architecture table")
{
    auto model = build_cnn_lstm<float>(ModelConfig::make(ModelKind::cnn_lstm, FeatureVariant::original), 3);
    for (int wi : {16, 32, 64, 128}) {
        std::vector<LayerTrace> trace;
        int steps = 0;
        nn::Tape<float> tape;
        ForwardOptions opt;
        opt.trace = &trace;
        opt.lstm_steps = &steps;
        auto p = model->forward(tape, random_input<float>({7, 128, wi}, wi), opt);
        CHECK(testing::compare_cnn_lstm_trace(trace, wi) == "");
        CHECK(steps == wi / 16);
        CHECK(p.value()[0] > 0.0f);
        CHECK(p.value()[0] < 1.0f);
    }
}

TEST_CASE("cnn_lstm width checks and width flexibility")
{
    auto model = build_cnn_lstm<float>(ModelConfig::make(ModelKind::cnn_lstm, FeatureVariant::stacked), 3);
    const auto count = model->parameters().scalar_count();
    const auto* first = &model->parameters()[0];
    for (int wi : {0, 8, 24, 100}) {
        nn::Tape<float> tape;
        try {
            model->forward(tape, Tensor<float>(Shape{14, 128, wi}));
            FAIL("width accepted: " << wi);
        } catch (const ModelError& e) {
            CHECK(e.kind() == ModelErrorKind::width_not_multiple_of_16);
        }
    }
    nn::Tape<float> tape;
    CHECK_THROWS_AS(model->forward(tape, Tensor<float>(Shape{7, 128, 16})), ModelError);
    model->predict(random_input<float>({14, 128, 16}, 1));
    model->predict(random_input<float>({14, 128, 48}, 2));
    CHECK(model->parameters().scalar_count() == count);
    CHECK(&model->parameters()[0] == first);
}

TEST_CASE("cnn_fixed: parameter count, range and purity")
{
    auto cfg = ModelConfig::make(ModelKind::cnn_fixed, FeatureVariant::original);
    auto model = build_cnn_fixed<float>(cfg, 5);
    const nn::Index expected = (7 * 6 * 9 + 6) + (6 * 16 * 9 + 16) + (16 * 120 * 9 + 120) + (120 * 16 * 16 * 84 + 84) + (84 + 1);
    CHECK(model->parameters().scalar_count() == expected);

    const float p0 = model->predict(Tensor<float>(Shape{7, 128, 128}));
    CHECK(p0 > 0.0f);
    CHECK(p0 < 1.0f);
    auto a = random_input<float>({7, 128, 128}, 1);
    auto b = random_input<float>({7, 128, 128}, 2);
    const float pa = model->predict(a);
    CHECK(model->predict(a) == pa);
    CHECK(model->predict(b) != pa);

    nn::Tape<float> tape;
    CHECK_THROWS_AS(model->forward(tape, Tensor<float>(Shape{7, 128, 64})), ModelError);

    auto stacked = build_cnn_fixed<float>(ModelConfig::make(ModelKind::cnn_fixed, FeatureVariant::stacked), 5);
    CHECK(stacked->parameters().scalar_count() == expected + 7 * 6 * 9);
}

TEST_CASE("rnn_points: steps, range and sequence dependence")
{
    auto cfg = ModelConfig::make(ModelKind::rnn_points, FeatureVariant::original);
    auto model = build_rnn_points<float>(cfg, 5);
    const nn::Index expected = (4 * 64 + 64) + (4 * 128 * (64 + 128) + 4 * 128) + (128 + 1);
    CHECK(model->parameters().scalar_count() == expected);

    Tensor<float> same(Shape{128, 4});
    for (nn::Index r = 0; r < 128; ++r) same.matrix(128, 4).row(r) << 0.3f, 0.6f, 0.1f, 1.0f;
    int steps = 0;
    nn::Tape<float> tape;
    ForwardOptions opt;
    opt.lstm_steps = &steps;
    const float p = model->forward(tape, same, opt).value()[0];
    CHECK(steps == 128);
    CHECK(p > 0.0f);
    CHECK(p < 1.0f);

    auto seq = random_input<float>({128, 4}, 9);
    auto shorter = Tensor<float>(Shape{100, 4}, seq.data().head(400));
    CHECK(model->predict(seq) != model->predict(shorter));
}

TEST_CASE("every model stays strictly inside (0,1)")
{
    for (auto kind : {ModelKind::cnn_fixed, ModelKind::rnn_points, ModelKind::cnn_lstm}) {
        auto model = build_model<float>(ModelConfig::make(kind, FeatureVariant::original), 11);
        const Shape shape = kind == ModelKind::rnn_points ? Shape{128, 4} : Shape{7, 128, kind == ModelKind::cnn_fixed ? 128 : 32};
        for (double scale : {0.0, 1.0, 100.0}) {
            auto x = random_input<float>(shape, 4);
            x.data() *= static_cast<float>(scale);
            const float p = model->predict(x);
            CHECK(p > 0.0f);
            CHECK(p < 1.0f);
        }
    }
}

TEST_CASE("initialization")
{
    auto model = build_cnn_lstm<double>(ModelConfig::make(ModelKind::cnn_lstm, FeatureVariant::original), 1);
    for (const auto& p : model->parameters()) {
        if (p.name == "LSTM.bias") {
            CHECK(p.value.data().segment(0, 256).isZero(0.0));
            CHECK(p.value.data().segment(256, 256).isOnes(0.0));
            CHECK(p.value.data().segment(512, 512).isZero(0.0));
        } else if (p.name == "Conv1.weight") {
            const double limit = std::sqrt(6.0 / (7 * 9 + 32 * 9));
            CHECK(p.value.data().cwiseAbs().maxCoeff() <= limit);
            CHECK(p.value.data().cwiseAbs().maxCoeff() > 0.9 * limit);
        }
    }
    auto again = build_cnn_lstm<double>(ModelConfig::make(ModelKind::cnn_lstm, FeatureVariant::original), 1);
    CHECK(again->parameters()[0].value.data() == model->parameters()[0].value.data());

    CHECK_FALSE(classify_genuine(0.5));
    CHECK(classify_genuine(0.5000001));
    CHECK_FALSE(classify_genuine(0.2));
}

TEST_CASE("whole-model gradients agree with finite differences")
{
    SUBCASE("rnn_points, small")
    {
        auto cfg = ModelConfig::make(ModelKind::rnn_points, FeatureVariant::original);
        cfg.rnn_embed = 5;
        cfg.rnn_hidden = 6;
        auto model = build_rnn_points<double>(cfg, 2);
        CHECK(model_gradient_error(*model, random_input<double>({7, 4}, 3), 6, 1) < 1e-4);
    }
    SUBCASE("cnn_fixed, narrow")
    {
        auto cfg = ModelConfig::make(ModelKind::cnn_fixed, FeatureVariant::original);
        cfg.lenet_channels = {2, 2, 2};
        cfg.lenet_fc = 4;
        auto model = build_cnn_fixed<double>(cfg, 2);
        CHECK(model_gradient_error(*model, random_input<double>({7, 128, 128}, 3), 4, 1) < 1e-4);
    }
    SUBCASE("cnn_lstm, width 32")
    {
        auto model = build_cnn_lstm<double>(ModelConfig::make(ModelKind::cnn_lstm, FeatureVariant::original), 2);
        CHECK(model_gradient_error(*model, random_input<double>({7, 128, 32}, 3), 2, 1) < 1e-4);
    }
}
