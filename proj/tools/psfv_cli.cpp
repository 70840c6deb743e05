// psfv: batch front end for feature extraction, rendering, LR scans,
// training and evaluation.

#include "psfv/io.hpp"
#include "psfv/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#ifndef PSFV_VERSION
#define PSFV_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace psfv;
using nlohmann::ordered_json;

namespace {

enum ExitCode { kOk = 0, kDataError = 1, kIoError = 2, kNumericError = 3 };

class UsageError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

struct Options
{
    std::string config;
    std::string corpus;
    std::string features;
    std::string instance;
    std::string checkpoint;
    std::string out = ".";
    int task = 1;
    std::string variant = "original";
    std::string model = "cnn-lstm";
    std::uint64_t seed = 7;
    bool permissive = false;

    // lr-find
    double lr_min = 1e-7;
    double lr_max = 1.0;
    int steps = 100;
    std::string lr_pick = "min-over-10";

    // train / eval
    int epochs = 50;
    double lr = 0.0; // 0 selects via the range test
    int batch_size = 10;
    double split_fraction = 0.8;
    std::string split_mode = "stratified";
    std::string subset = "test";
    double threshold = 0.5;
};

std::string to_text(double v)
{
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

FeatureVariant variant_of(const Options& o)
{
    auto v = parse_variant(o.variant);
    if (!v) throw UsageError("unknown variant '" + o.variant + "'");
    return *v;
}

ModelConfig model_config_of(const Options& o)
{
    auto kind = parse_model_kind(o.model);
    if (!kind) throw UsageError("unknown model '" + o.model + "'");
    return ModelConfig::make(*kind, variant_of(o));
}

SplitMode split_mode_of(const std::string& s)
{
    if (s == "stratified") return SplitMode::stratified_instance;
    if (s == "writer") return SplitMode::writer_disjoint;
    throw UsageError("unknown split mode '" + s + "'");
}

LrPick lr_pick_of(const std::string& s)
{
    if (s == "min-over-10") return LrPick::min_over_10;
    if (s == "min") return LrPick::min;
    throw UsageError("unknown lr pick '" + s + "'");
}

std::string svc_stem(int writer, int sample)
{
    return "U" + std::to_string(writer) + "S" + std::to_string(sample);
}

/// Checksum over file names and contents in name order.
std::string directory_checksum(const fs::path& dir)
{
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::uint64_t h = fnv1a("");
    for (const auto& f : files) {
        h = fnv1a(f.filename().string(), h);
        h = fnv1a(read_text_file(f), h);
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

std::string file_checksum(const fs::path& file)
{
    std::ostringstream os;
    os << std::hex << fnv1a(read_text_file(file));
    return os.str();
}

/// Data source shared by lr-find, train and eval: raw corpus or .psft files.
struct Dataset
{
    std::vector<Example> examples;
    std::string source_path;
    std::string checksum;
};

Dataset load_dataset(const Options& o, const ModelConfig& cfg)
{
    if (o.corpus.empty() == o.features.empty()) throw UsageError("give exactly one of --corpus or --features");
    Dataset d;
    if (!o.corpus.empty()) {
        auto corpus = load_corpus(o.corpus, o.task == 2 ? Task::task2 : Task::task1, {o.permissive});
        for (const auto& s : corpus.skipped) std::cerr << "warning: skipped " << s << '\n';
        d.examples = make_examples(corpus.instances, cfg);
        d.source_path = o.corpus;
        d.checksum = directory_checksum(o.corpus);
        return d;
    }
    if (cfg.kind == ModelKind::rnn_points) throw UsageError("the rnn model reads stroke data; use --corpus");
    if (!fs::is_directory(o.features)) throw IoError(o.features + ": not a directory");
    std::map<std::pair<int, int>, fs::path> files;
    for (const auto& e : fs::directory_iterator(o.features)) {
        if (e.path().extension() != ".psft") continue;
        auto name = parse_svc_name(e.path().stem().string() + ".TXT");
        if (name) files.emplace(std::pair{name->writer, name->sample}, e.path());
    }
    if (files.empty()) throw InkError(InkErrorKind::no_files_found, o.features + ": no files found");
    for (const auto& [key, path] : files) {
        auto t = load_feature_tensor(path);
        if (t.variant != cfg.variant) {
            throw UsageError(path.filename().string() + " holds " + std::string(to_string(t.variant)) +
                             " features, expected " + std::string(to_string(cfg.variant)));
        }
        auto input = std::make_shared<const nn::Tensor<float>>(prepare_input(cfg, t));
        d.examples.push_back({key.first, key.second, label_for_sample(key.second), [input] { return *input; }});
    }
    d.source_path = o.features;
    d.checksum = directory_checksum(o.features);
    return d;
}

std::pair<std::vector<Example>, std::vector<Example>> split_examples(const std::vector<Example>& all, double fraction,
                                                                      std::uint64_t seed, SplitMode mode)
{
    std::vector<Label> labels;
    std::vector<int> writers;
    for (const auto& e : all) {
        labels.push_back(e.label);
        writers.push_back(e.writer);
    }
    auto idx = split_indices(labels, writers, fraction, seed, mode);
    std::vector<Example> train, test;
    for (auto i : idx.train) train.push_back(all[i]);
    for (auto i : idx.test) test.push_back(all[i]);
    return {std::move(train), std::move(test)};
}

class Manifest
{
public:
    Manifest(std::string command, const std::map<std::string, std::string>& flags, const Options& o)
    {
        j_["tool"] = "psfv";
        j_["version"] = PSFV_VERSION;
        j_["command"] = std::move(command);
        j_["config"] = flags;
        j_["seed"] = o.seed;
        j_["variant"] = o.variant;
        j_["artifacts"] = ordered_json::array();
    }
    void set(const std::string& key, ordered_json v) { j_[key] = std::move(v); }
    void add_artifact(const fs::path& file)
    {
        j_["artifacts"].push_back({{"file", file.filename().string()}, {"fnv1a", file_checksum(file)}});
    }
    void write(const fs::path& dir) const { write_text_file(dir / "manifest.json", j_.dump(2) + "\n"); }

private:
    ordered_json j_;
};

/// Every option of a subcommand with its effective value, for manifests.
std::map<std::string, std::string> flag_snapshot(const CLI::App& sub)
{
    std::map<std::string, std::string> out;
    for (const auto* opt : sub.get_options()) {
        if (opt->get_name() == "--help" || opt->get_name() == "--config") continue;
        const auto name = opt->get_lnames().empty() ? opt->get_name() : opt->get_lnames().front();
        auto results = opt->reduced_results();
        if (!results.empty()) {
            out[name] = results.front();
        } else {
            out[name] = opt->get_default_str();
        }
    }
    return out;
}

void prepare_out(const Options& o)
{
    std::error_code ec;
    fs::create_directories(o.out, ec);
    if (ec || !fs::is_directory(o.out)) throw IoError(o.out + ": cannot create output directory");
}

int cmd_extract(const Options& o, const CLI::App& sub)
{
    if (o.corpus.empty()) throw UsageError("--corpus is required");
    const auto variant = variant_of(o);
    auto corpus = load_corpus(o.corpus, o.task == 2 ? Task::task2 : Task::task1, {o.permissive});
    prepare_out(o);
    Manifest m("extract", flag_snapshot(sub), o);
    m.set("corpus", {{"path", o.corpus}, {"fnv1a", directory_checksum(o.corpus)}});
    for (const auto& s : corpus.skipped) std::cerr << "warning: skipped " << s << '\n';
    for (const auto& inst : corpus.instances) {
        const auto path = fs::path(o.out) / (svc_stem(inst.writer_id, inst.sample_index) + ".psft");
        save_feature_tensor(path, rasterize(normalize(inst), variant));
        m.add_artifact(path);
    }
    m.write(o.out);
    std::cout << "extracted " << corpus.instances.size() << " instances to " << o.out << '\n';
    return kOk;
}

int cmd_render(const Options& o, const CLI::App& sub)
{
    if (o.instance.empty()) throw UsageError("--instance is required");
    auto inst = load_instance(o.instance);
    auto t = rasterize(normalize(inst), variant_of(o));
    prepare_out(o);
    Manifest m("render", flag_snapshot(sub), o);
    m.set("instance", {{"path", o.instance}, {"fnv1a", file_checksum(o.instance)}});
    const auto stem = fs::path(o.instance).stem().string();
    for (int c = 0; c < t.channels; ++c) {
        const auto path = fs::path(o.out) / (stem + "_ch" + (c < 10 ? "0" : "") + std::to_string(c) + ".pgm");
        write_text_file(path, format_pgm(t, c));
        m.add_artifact(path);
    }
    m.write(o.out);
    std::cout << "rendered " << t.channels << " channels to " << o.out << '\n';
    return kOk;
}

LrScanOptions scan_options(const Options& o)
{
    if (!(o.lr_min > 0.0 && o.lr_min < o.lr_max)) throw UsageError("--lr-min must be positive and below --lr-max");
    if (o.steps < 10) throw UsageError("--steps must be at least 10");
    LrScanOptions s;
    s.lr_min = o.lr_min;
    s.lr_max = o.lr_max;
    s.steps = o.steps;
    s.batch_size = o.batch_size;
    s.seed = o.seed;
    s.pick = lr_pick_of(o.lr_pick);
    return s;
}

std::string scan_csv(const LrScanResult& r)
{
    std::ostringstream os;
    os.precision(10);
    os << "step,lr,smoothed_loss\n";
    for (std::size_t i = 0; i < r.points.size(); ++i) os << i << ',' << r.points[i].lr << ',' << r.points[i].smoothed_loss << '\n';
    return os.str();
}

int cmd_lr_find(const Options& o, const CLI::App& sub)
{
    const auto scan = scan_options(o);
    const auto cfg = model_config_of(o);
    auto data = load_dataset(o, cfg);
    auto [train_set, test_set] = split_examples(data.examples, o.split_fraction, o.seed, split_mode_of(o.split_mode));
    if (train_set.empty()) throw UsageError("training split is empty");
    auto model = build_model<float>(cfg, o.seed);
    auto result = lr_range_test(*model, cache_examples(train_set), scan);

    prepare_out(o);
    Manifest m("lr-find", flag_snapshot(sub), o);
    m.set("corpus", {{"path", data.source_path}, {"fnv1a", data.checksum}});
    m.set("model", o.model);
    const auto csv = fs::path(o.out) / "lr_scan.csv";
    write_text_file(csv, scan_csv(result));
    m.add_artifact(csv);
    m.set("lr_chosen", result.lr_chosen);
    m.set("flat", result.flat);
    m.write(o.out);
    if (result.flat) std::cerr << "warning: loss did not change over the scan; picked the start of the range\n";
    std::cout << to_text(result.lr_chosen) << '\n';
    return kOk;
}

int cmd_train(const Options& o, const CLI::App& sub)
{
    const auto cfg = model_config_of(o);
    TrainConfig tc;
    tc.epochs = o.epochs;
    tc.batch_size = o.batch_size;
    tc.seed = o.seed;
    tc.split_fraction_train = o.split_fraction;
    const auto mode = split_mode_of(o.split_mode);
    if (o.lr < 0.0) throw UsageError("--lr must be positive");

    auto data = load_dataset(o, cfg);
    auto [train_raw, test_raw] = split_examples(data.examples, o.split_fraction, o.seed, mode);
    if (train_raw.empty()) throw UsageError("training split is empty");
    const auto train_set = cache_examples(train_raw);
    auto model = build_model<float>(cfg, o.seed);

    std::string lr_source = "flag";
    tc.lr_initial = o.lr;
    if (o.lr == 0.0) {
        tc.lr_initial = lr_range_test(*model, train_set, scan_options(o)).lr_chosen;
        lr_source = "range-test:" + o.lr_pick;
    }
    tc.validate();
    const auto log = train(*model, train_set, tc);

    prepare_out(o);
    std::map<std::string, std::string> extra{
        {"seed", std::to_string(o.seed)},        {"split_fraction", to_text(o.split_fraction)},
        {"split_mode", o.split_mode},            {"epochs", std::to_string(o.epochs)},
        {"lr_initial", to_text(tc.lr_initial)},  {"lr_source", lr_source},
        {"batch_size", std::to_string(o.batch_size)}, {"task", std::to_string(o.task)},
        {"data_path", data.source_path},         {"data_kind", o.corpus.empty() ? "features" : "corpus"},
    };
    const auto ckpt = fs::path(o.out) / "model.svmd";
    save_checkpoint(ckpt, make_checkpoint(*model, extra));
    const auto csv = fs::path(o.out) / "loss.csv";
    write_text_file(csv, loss_log_csv(log));

    Manifest m("train", flag_snapshot(sub), o);
    m.set("corpus", {{"path", data.source_path}, {"fnv1a", data.checksum}});
    m.set("model", o.model);
    m.set("lr_initial", tc.lr_initial);
    m.add_artifact(ckpt);
    m.add_artifact(csv);
    m.write(o.out);
    std::cout << "trained " << log.epochs.size() << " epochs on " << train_set.size() << " instances, lr "
              << to_text(tc.lr_initial) << '\n';
    return kOk;
}

int cmd_eval(Options o, const CLI::App& sub)
{
    if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
    const auto ckpt = load_checkpoint(o.checkpoint);
    const auto cfg = ModelConfig::from_map(ckpt.config);
    auto model = build_model<float>(cfg, 0);
    apply_checkpoint(*model, ckpt);

    auto get = [&](const std::string& key, const std::string& fallback) {
        auto it = ckpt.config.find(key);
        return it == ckpt.config.end() ? fallback : it->second;
    };
    // The split is re-derived from the training run unless overridden.
    if (sub.count("--seed") == 0) o.seed = std::stoull(get("seed", "7"));
    if (sub.count("--split-fraction") == 0) o.split_fraction = std::stod(get("split_fraction", "0.8"));
    if (sub.count("--split-mode") == 0) o.split_mode = get("split_mode", "stratified");
    if (sub.count("--task") == 0) o.task = std::stoi(get("task", "1"));
    if (o.corpus.empty() && o.features.empty()) {
        (get("data_kind", "corpus") == "features" ? o.features : o.corpus) = get("data_path", "");
    }
    o.variant = std::string(to_string(cfg.variant));
    o.model = std::string(to_string(cfg.kind));

    auto data = load_dataset(o, cfg);
    std::vector<Example> selected;
    if (o.subset == "all") {
        selected = data.examples;
    } else {
        auto [train_set, test_set] = split_examples(data.examples, o.split_fraction, o.seed, split_mode_of(o.split_mode));
        selected = o.subset == "train" ? train_set : test_set;
    }
    if (selected.empty()) throw UsageError("the selected " + o.subset + " set is empty");
    const auto metrics = evaluate(*model, selected, o.threshold);
    const auto json = metrics_json(metrics, o.threshold, o.seed);

    if (sub.count("--out") == 0) {
        std::cout << json;
        return kOk;
    }
    prepare_out(o);
    const auto path = fs::path(o.out) / "metrics.json";
    write_text_file(path, json);
    Manifest m("eval", flag_snapshot(sub), o);
    m.set("corpus", {{"path", data.source_path}, {"fnv1a", data.checksum}});
    m.set("checkpoint", {{"path", o.checkpoint}, {"fnv1a", file_checksum(o.checkpoint)}});
    m.set("model", o.model);
    m.add_artifact(path);
    m.write(o.out);
    std::cout << json;
    return kOk;
}

// Fills options not given on the command line from a key=value file.
// Blank lines and '#' comments are skipped; [section] headers are ignored.
void apply_config_file(CLI::App& sub, const std::string& path)
{
    std::istringstream in(read_text_file(path));
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = CLI::detail::trim_copy(line);
        if (line.empty() || line[0] == '#' || line[0] == '[') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw CLI::ValidationError(path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        const auto key = CLI::detail::trim_copy(line.substr(0, eq));
        auto value = CLI::detail::trim_copy(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        auto* opt = sub.get_option_no_throw("--" + key);
        if (!opt || key == "config") {
            throw CLI::ValidationError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
        if (opt->count() > 0) continue;
        opt->add_result(value);
        opt->run_callback();
    }
}

void add_common(CLI::App* sub, Options& o)
{
    sub->add_option("--config", o.config, "flat key=value file; explicit flags take precedence");
    sub->add_option("--seed", o.seed, "random seed")->capture_default_str();
    sub->add_option("--task", o.task, "SVC2004 task")->check(CLI::IsMember({1, 2}))->capture_default_str();
    sub->add_option("--out", o.out, "output directory")->capture_default_str();
    sub->add_flag("--permissive", o.permissive, "skip unreadable corpus files instead of failing");
}

void add_variant(CLI::App* sub, Options& o)
{
    sub->add_option("--variant", o.variant, "feature variant")
        ->check(CLI::IsMember({"original", "temporal", "stacked"}))
        ->capture_default_str();
}

void add_data(CLI::App* sub, Options& o)
{
    sub->add_option("--corpus", o.corpus, "directory of U<w>S<s>.TXT files");
    sub->add_option("--features", o.features, "directory of U<w>S<s>.psft files from 'extract'");
}

void add_model(CLI::App* sub, Options& o)
{
    sub->add_option("--model", o.model, "classifier")->check(CLI::IsMember({"cnn", "rnn", "cnn-lstm"}))->capture_default_str();
    sub->add_option("--batch-size", o.batch_size, "mini-batch size")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--split-fraction", o.split_fraction, "training fraction")->capture_default_str();
    sub->add_option("--split-mode", o.split_mode, "instance split or writer-disjoint split")
        ->check(CLI::IsMember({"stratified", "writer"}))
        ->capture_default_str();
}

void add_scan(CLI::App* sub, Options& o)
{
    sub->add_option("--lr-min", o.lr_min, "scan start")->capture_default_str();
    sub->add_option("--lr-max", o.lr_max, "scan end")->capture_default_str();
    sub->add_option("--steps", o.steps, "scan batches")->capture_default_str();
    sub->add_option("--lr-pick", o.lr_pick, "lr at the loss minimum, divided by 10 or as is")
        ->check(CLI::IsMember({"min-over-10", "min"}))
        ->capture_default_str();
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Online signature verification with path-signature features"};
    app.set_version_flag("--version", PSFV_VERSION);
    app.require_subcommand(1);
    Options o;

    auto* extract = app.add_subcommand("extract", "rasterize every corpus instance into a .psft file");
    add_common(extract, o);
    add_variant(extract, o);
    extract->add_option("--corpus", o.corpus, "directory of U<w>S<s>.TXT files")->required();

    auto* render = app.add_subcommand("render", "write one PGM image per feature channel");
    add_common(render, o);
    add_variant(render, o);
    render->add_option("--instance", o.instance, "SVC2004 text file")->required();

    auto* lr_find = app.add_subcommand("lr-find", "learning-rate range test");
    add_common(lr_find, o);
    add_variant(lr_find, o);
    add_data(lr_find, o);
    add_model(lr_find, o);
    add_scan(lr_find, o);

    auto* train_cmd = app.add_subcommand("train", "train a classifier and write a checkpoint");
    add_common(train_cmd, o);
    add_variant(train_cmd, o);
    add_data(train_cmd, o);
    add_model(train_cmd, o);
    add_scan(train_cmd, o);
    train_cmd->add_option("--epochs", o.epochs, "training epochs")->check(CLI::NonNegativeNumber)->capture_default_str();
    train_cmd->add_option("--lr", o.lr, "initial learning rate; omitted runs the range test")->capture_default_str();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on its held-out split");
    add_common(eval, o);
    add_data(eval, o);
    eval->add_option("--checkpoint", o.checkpoint, "model.svmd from 'train'")->required();
    eval->add_option("--split-fraction", o.split_fraction, "training fraction (default: from checkpoint)");
    eval->add_option("--split-mode", o.split_mode, "split mode (default: from checkpoint)")
        ->check(CLI::IsMember({"stratified", "writer"}));
    eval->add_option("--subset", o.subset, "which part of the split to score")
        ->check(CLI::IsMember({"test", "train", "all"}))
        ->capture_default_str();
    eval->add_option("--threshold", o.threshold, "decision threshold on P(genuine)")->capture_default_str();

    try {
        app.parse(argc, argv);
        if (!o.config.empty()) apply_config_file(*app.get_subcommands().front(), o.config);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kDataError;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIoError;
    }

    try {
        if (*extract) return cmd_extract(o, *extract);
        if (*render) return cmd_render(o, *render);
        if (*lr_find) return cmd_lr_find(o, *lr_find);
        if (*train_cmd) return cmd_train(o, *train_cmd);
        if (*eval) return cmd_eval(o, *eval);
    } catch (const InkError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.kind() == InkErrorKind::io_failure ? kIoError : kDataError;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIoError;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIoError;
    } catch (const nn::NumericError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kNumericError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kDataError;
    }
    return kDataError;
}
