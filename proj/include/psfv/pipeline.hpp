#pragma once

#include "psfv/ink.hpp"
#include "psfv/models.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace psfv {

struct TrainConfig
{
    int batch_size = 10;
    int epochs = 50;
    double lr_initial = 1e-3;
    double lr_decay_per_epoch = 0.95;
    std::uint64_t seed = 7;
    double split_fraction_train = 0.8;

    void validate() const;
    double lr_at(int epoch) const;
};

struct Metrics
{
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;

    /// Fills the derived rates; any 0/0 ratio is reported as 0.
    static Metrics from_counts(std::int64_t tp, std::int64_t fp, std::int64_t tn, std::int64_t fn);
    std::int64_t total() const { return tp + fp + tn + fn; }
};

std::string metrics_json(const Metrics& m, double threshold, std::uint64_t seed);

class PipelineError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when training produces a NaN/Inf loss.
class NonFiniteLoss : public nn::NumericError
{
public:
    NonFiniteLoss(int epoch, int batch)
        : nn::NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch)),
          epoch_(epoch), batch_(batch)
    {}
    int epoch() const { return epoch_; }
    int batch() const { return batch_; }

private:
    int epoch_, batch_;
};

enum class SplitMode { stratified_instance, writer_disjoint };

struct SplitIndices
{
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Seeded random split. In stratified mode each label keeps
/// round(count * fraction) items for training; in writer-disjoint mode whole
/// writers are assigned, round(writers * fraction) to training.
SplitIndices split_indices(std::span<const Label> labels, std::span<const int> writers, double fraction,
                           std::uint64_t seed, SplitMode mode = SplitMode::stratified_instance);

std::pair<Corpus, Corpus> split_dataset(const Corpus& corpus, double fraction, std::uint64_t seed,
                                        SplitMode mode = SplitMode::stratified_instance);

/// One labelled training item; the input is produced on demand.
struct Example
{
    int writer = 0;
    int sample = 0;
    Label label = Label::genuine;
    std::function<nn::Tensor<float>()> input;
};

/// Model input for a signature: raster (scaled to 128 columns for the fixed
/// CNN) or resampled point rows scaled to (x/128, y/128, seconds, pen).
nn::Tensor<float> prepare_input(const ModelConfig& cfg, const NormalizedSignature& sig);

/// Model input from a pre-extracted raster. Not valid for the point model.
nn::Tensor<float> prepare_input(const ModelConfig& cfg, const FeatureTensor& t);

std::vector<Example> make_examples(const std::vector<SignatureInstance>& instances, const ModelConfig& cfg);

/// Materializes every input once so repeated epochs do not re-extract.
std::vector<Example> cache_examples(const std::vector<Example>& examples);

enum class LrPick { min_over_10, min };

struct LrScanOptions
{
    double lr_min = 1e-7;
    double lr_max = 1.0;
    int steps = 100;
    int batch_size = 10;
    std::uint64_t seed = 7;
    LrPick pick = LrPick::min_over_10;
    double smoothing = 0.9;
    double divergence_factor = 4.0;
};

struct LrScanPoint
{
    double lr = 0.0;
    double smoothed_loss = 0.0;
};

struct LrScanResult
{
    std::vector<LrScanPoint> points;
    double lr_chosen = 0.0;
    bool flat = false;
    bool diverged = false;
};

/// Learning-rate range test: lr grows geometrically from lr_min by
/// (lr_max/lr_min)^(1/steps) per batch; the model is restored afterwards.
LrScanResult lr_range_test(Model<float>& model, const std::vector<Example>& train, const LrScanOptions& opt);

struct EpochRecord
{
    int epoch = 0;
    double mean_train_loss = 0.0;
    double lr = 0.0;
    std::optional<double> test_accuracy;
};

struct TrainLog
{
    std::vector<EpochRecord> epochs;
};

struct TrainHooks
{
    /// Optional per-epoch evaluation set; fills EpochRecord::test_accuracy.
    const std::vector<Example>* eval_set = nullptr;
    /// Return true to stop after this epoch.
    std::function<bool(const EpochRecord&)> on_epoch;
};

TrainLog train(Model<float>& model, const std::vector<Example>& train_set, const TrainConfig& cfg,
               const TrainHooks& hooks = {});

std::string loss_log_csv(const TrainLog& log);

/// Genuine is the positive class; see classify_genuine for the tie rule.
Metrics evaluate(Model<float>& model, const std::vector<Example>& test_set, double threshold = 0.5);

} // namespace psfv
