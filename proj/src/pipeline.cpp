#include "psfv/pipeline.hpp"

#include "psfv/nn/adam.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace psfv {

void TrainConfig::validate() const
{
    if (!(split_fraction_train > 0.0 && split_fraction_train < 1.0)) {
        throw PipelineError("split fraction must lie strictly between 0 and 1");
    }
    if (batch_size < 1) throw PipelineError("batch size must be at least 1");
    if (!(lr_initial > 0.0)) throw PipelineError("initial learning rate must be positive");
    if (epochs < 0) throw PipelineError("epoch count must be non-negative");
}

double TrainConfig::lr_at(int epoch) const
{
    return lr_initial * std::pow(lr_decay_per_epoch, epoch);
}

Metrics Metrics::from_counts(std::int64_t tp, std::int64_t fp, std::int64_t tn, std::int64_t fn)
{
    auto ratio = [](double num, double den) { return den > 0.0 ? num / den : 0.0; };
    Metrics m;
    m.tp = tp;
    m.fp = fp;
    m.tn = tn;
    m.fn = fn;
    m.accuracy = ratio(double(tp + tn), double(m.total()));
    m.precision = ratio(double(tp), double(tp + fp));
    m.recall = ratio(double(tp), double(tp + fn));
    m.f1 = ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
    return m;
}

std::string metrics_json(const Metrics& m, double threshold, std::uint64_t seed)
{
    nlohmann::ordered_json j;
    j["tp"] = m.tp;
    j["fp"] = m.fp;
    j["tn"] = m.tn;
    j["fn"] = m.fn;
    j["accuracy"] = m.accuracy;
    j["precision"] = m.precision;
    j["recall"] = m.recall;
    j["f1"] = m.f1;
    j["threshold"] = threshold;
    j["seed"] = seed;
    return j.dump(2) + "\n";
}

SplitIndices split_indices(std::span<const Label> labels, std::span<const int> writers, double fraction,
                           std::uint64_t seed, SplitMode mode)
{
    if (labels.empty()) throw PipelineError("cannot split an empty corpus");
    if (!(fraction > 0.0 && fraction < 1.0)) throw PipelineError("split fraction must lie strictly between 0 and 1");
    std::mt19937_64 rng(seed);
    SplitIndices out;

    if (mode == SplitMode::stratified_instance) {
        for (Label label : {Label::genuine, Label::forgery}) {
            std::vector<std::size_t> group;
            for (std::size_t i = 0; i < labels.size(); ++i) {
                if (labels[i] == label) group.push_back(i);
            }
            std::shuffle(group.begin(), group.end(), rng);
            const auto n_train = static_cast<std::size_t>(std::llround(group.size() * fraction));
            out.train.insert(out.train.end(), group.begin(), group.begin() + n_train);
            out.test.insert(out.test.end(), group.begin() + n_train, group.end());
        }
    } else {
        if (writers.size() != labels.size()) throw PipelineError("writer ids must accompany every label");
        const std::set<int> uniq(writers.begin(), writers.end());
        std::vector<int> ids(uniq.begin(), uniq.end());
        std::shuffle(ids.begin(), ids.end(), rng);
        const auto n_train = static_cast<std::size_t>(std::llround(ids.size() * fraction));
        std::set<int> train_writers(ids.begin(), ids.begin() + n_train);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            (train_writers.count(writers[i]) ? out.train : out.test).push_back(i);
        }
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

std::pair<Corpus, Corpus> split_dataset(const Corpus& corpus, double fraction, std::uint64_t seed, SplitMode mode)
{
    std::vector<Label> labels;
    std::vector<int> writers;
    for (const auto& inst : corpus.instances) {
        labels.push_back(inst.label);
        writers.push_back(inst.writer_id);
    }
    const auto idx = split_indices(labels, writers, fraction, seed, mode);
    Corpus train, test;
    train.source_task = test.source_task = corpus.source_task;
    for (auto i : idx.train) train.instances.push_back(corpus.instances[i]);
    for (auto i : idx.test) test.instances.push_back(corpus.instances[i]);
    return {std::move(train), std::move(test)};
}

namespace {

nn::Tensor<float> raster_to_tensor(const FeatureTensor& t)
{
    return nn::Tensor<float>(nn::Shape{t.channels, t.height, t.width}, t.data.matrix());
}

} // namespace

nn::Tensor<float> prepare_input(const ModelConfig& cfg, const NormalizedSignature& sig)
{
    if (cfg.kind == ModelKind::rnn_points) {
        const auto seq = resample_uniform(sig, cfg.resample_n.value_or(kDefaultResampleCount));
        nn::Tensor<float> t(nn::Shape{static_cast<nn::Index>(seq.points.size()), 4});
        for (std::size_t i = 0; i < seq.points.size(); ++i) {
            const auto& r = seq.points[i];
            const auto base = static_cast<nn::Index>(4 * i);
            t[base + 0] = static_cast<float>(r[0] / kRasterHeight);
            t[base + 1] = static_cast<float>(r[1] / kRasterHeight);
            t[base + 2] = static_cast<float>(r[2] / 1000.0);
            t[base + 3] = static_cast<float>(r[3]);
        }
        return t;
    }
    return prepare_input(cfg, rasterize(sig, cfg.variant));
}

nn::Tensor<float> prepare_input(const ModelConfig& cfg, const FeatureTensor& t)
{
    if (cfg.kind == ModelKind::rnn_points) throw PipelineError("the point model needs stroke data, not rasters");
    if (t.channels != cfg.input_channels) {
        throw PipelineError("feature tensor has " + std::to_string(t.channels) + " channels, model expects " +
                            std::to_string(cfg.input_channels));
    }
    return raster_to_tensor(cfg.kind == ModelKind::cnn_fixed ? scale_to_square(t) : t);
}

std::vector<Example> make_examples(const std::vector<SignatureInstance>& instances, const ModelConfig& cfg)
{
    std::vector<Example> out;
    out.reserve(instances.size());
    for (const auto& inst : instances) {
        auto sig = std::make_shared<const NormalizedSignature>(normalize(inst));
        out.push_back(Example{inst.writer_id, inst.sample_index, inst.label,
                              [sig, cfg] { return prepare_input(cfg, *sig); }});
    }
    return out;
}

std::vector<Example> cache_examples(const std::vector<Example>& examples)
{
    std::vector<Example> out;
    out.reserve(examples.size());
    for (const auto& e : examples) {
        auto t = std::make_shared<const nn::Tensor<float>>(e.input());
        out.push_back(Example{e.writer, e.sample, e.label, [t] { return *t; }});
    }
    return out;
}

namespace {

double label_value(Label l)
{
    return l == Label::genuine ? 1.0 : 0.0;
}

/// Forward/backward over one mini-batch; gradients are averaged over the
/// batch and left in the parameters. Returns the summed loss.
double accumulate_batch(Model<float>& model, const std::vector<Example>& set, std::span<const std::size_t> batch,
                        std::mt19937_64& rng)
{
    double total = 0.0;
    ForwardOptions opt;
    opt.training = true;
    opt.rng = &rng;
    for (auto idx : batch) {
        const auto& ex = set[idx];
        nn::Tape<float> tape;
        auto prob = model.forward(tape, ex.input(), opt);
        auto loss = nn::bce_loss(prob, label_value(ex.label));
        tape.backward(loss);
        total += loss.value()[0];
    }
    const float scale = 1.0f / static_cast<float>(batch.size());
    for (auto& p : model.parameters()) p.grad.data() *= scale;
    return total;
}

} // namespace

LrScanResult lr_range_test(Model<float>& model, const std::vector<Example>& train_set, const LrScanOptions& opt)
{
    if (!(opt.lr_min > 0.0 && opt.lr_min < opt.lr_max)) throw PipelineError("lr range requires 0 < lr_min < lr_max");
    if (opt.steps < 10) throw PipelineError("lr range test needs at least 10 steps");
    if (train_set.empty()) throw PipelineError("lr range test needs training data");
    if (opt.batch_size < 1) throw PipelineError("batch size must be at least 1");

    const auto snapshot = model.parameters();
    const double ratio = std::pow(opt.lr_max / opt.lr_min, 1.0 / opt.steps);

    std::mt19937_64 rng(opt.seed);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();

    LrScanResult result;
    double avg = 0.0;
    double best = std::numeric_limits<double>::infinity();
    model.parameters().zero_grad();
    for (int k = 0; k < opt.steps; ++k) {
        const double lr = opt.lr_min * std::pow(ratio, k);
        if (cursor >= order.size()) {
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        const auto n = std::min<std::size_t>(static_cast<std::size_t>(opt.batch_size), order.size() - cursor);
        std::span<const std::size_t> batch(order.data() + cursor, n);
        cursor += n;

        double loss = 0.0;
        try {
            loss = accumulate_batch(model, train_set, batch, rng) / static_cast<double>(n);
            if (!std::isfinite(loss)) throw nn::NumericError("non-finite loss");
            nn::adam_step(model.parameters(), lr);
        } catch (const nn::NumericError&) {
            result.diverged = true;
            break;
        }

        avg = opt.smoothing * avg + (1.0 - opt.smoothing) * loss;
        const double smoothed = avg / (1.0 - std::pow(opt.smoothing, k + 1));
        result.points.push_back({lr, smoothed});
        best = std::min(best, smoothed);
        if (smoothed > opt.divergence_factor * best) {
            result.diverged = true;
            break;
        }
    }

    model.parameters().restore(snapshot);

    if (result.points.empty()) {
        result.lr_chosen = opt.lr_min;
        result.flat = true;
        return result;
    }
    const auto min_it = std::min_element(result.points.begin(), result.points.end(),
                                         [](const auto& a, const auto& b) { return a.smoothed_loss < b.smoothed_loss; });
    const auto max_it = std::max_element(result.points.begin(), result.points.end(),
                                         [](const auto& a, const auto& b) { return a.smoothed_loss < b.smoothed_loss; });
    const double spread = max_it->smoothed_loss - min_it->smoothed_loss;
    result.flat = spread <= 1e-9 * std::max(1.0, std::abs(min_it->smoothed_loss));

    const double at_min = result.flat ? result.points.front().lr : min_it->lr;
    const double picked = opt.pick == LrPick::min ? at_min : at_min / 10.0;
    result.lr_chosen = std::clamp(picked, result.points.front().lr, result.points.back().lr);
    return result;
}

TrainLog train(Model<float>& model, const std::vector<Example>& train_set, const TrainConfig& cfg,
               const TrainHooks& hooks)
{
    cfg.validate();
    TrainLog log;
    if (cfg.epochs == 0) return log;
    if (train_set.empty()) throw PipelineError("training set is empty");

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    model.parameters().zero_grad();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.lr_at(epoch);
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        int batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
            const auto n = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
            double batch_loss = 0.0;
            try {
                batch_loss = accumulate_batch(model, train_set, std::span(order.data() + start, n), rng);
            } catch (const NonFiniteLoss&) {
                throw;
            } catch (const nn::NumericError&) {
                throw NonFiniteLoss(epoch, batch_index);
            }
            if (!std::isfinite(batch_loss)) throw NonFiniteLoss(epoch, batch_index);
            try {
                nn::adam_step(model.parameters(), lr);
            } catch (const nn::NumericError&) {
                throw NonFiniteLoss(epoch, batch_index);
            }
            total += batch_loss;
        }

        EpochRecord rec{epoch, total / static_cast<double>(train_set.size()), lr, std::nullopt};
        if (hooks.eval_set && !hooks.eval_set->empty()) rec.test_accuracy = evaluate(model, *hooks.eval_set).accuracy;
        log.epochs.push_back(rec);
        if (hooks.on_epoch && hooks.on_epoch(rec)) break;
    }
    return log;
}

std::string loss_log_csv(const TrainLog& log)
{
    bool with_acc = std::any_of(log.epochs.begin(), log.epochs.end(), [](const auto& r) { return r.test_accuracy.has_value(); });
    std::ostringstream os;
    os.precision(10);
    os << "epoch,mean_train_loss,lr" << (with_acc ? ",test_accuracy" : "") << '\n';
    for (const auto& r : log.epochs) {
        os << r.epoch << ',' << r.mean_train_loss << ',' << r.lr;
        if (with_acc) os << ',' << r.test_accuracy.value_or(0.0);
        os << '\n';
    }
    return os.str();
}

Metrics evaluate(Model<float>& model, const std::vector<Example>& test_set, double threshold)
{
    if (test_set.empty()) throw PipelineError("test set is empty");
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (const auto& ex : test_set) {
        const bool predicted = classify_genuine(model.predict(ex.input()), threshold);
        const bool actual = ex.label == Label::genuine;
        if (predicted && actual) ++tp;
        else if (predicted) ++fp;
        else if (actual) ++fn;
        else ++tn;
    }
    return Metrics::from_counts(tp, fp, tn, fn);
}

} // namespace psfv
