#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "psfv/io.hpp"
#include "psfv/pipeline.hpp"
#include "support/synthetic.hpp"

#include <json.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace psfv;

namespace {

struct RunResult
{
    int code = -1;
    std::string output;
};

RunResult run(const std::string& args)
{
    const std::string cmd = std::string(PSFV_CLI_PATH) + " " + args + " 2>&1";
    RunResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.output.append(buf, n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

fs::path scratch(const std::string& name)
{
    auto dir = fs::temp_directory_path() / ("psfv_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

/// Small twin corpus on disk: `pairs` genuine/forgery pairs.
fs::path small_corpus(const std::string& name, int pairs)
{
    auto dir = scratch(name);
    testing::SynthOptions opt;
    opt.min_points = 30;
    opt.max_points = 50;
    testing::write_corpus(dir, testing::temporal_twin_corpus(pairs, 2.0, 17, opt));
    return dir;
}

std::map<std::string, std::string> read_dir(const fs::path& dir)
{
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = read_text_file(e.path());
    return out;
}

std::string q(const fs::path& p)
{
    return "'" + p.string() + "'";
}

} // namespace

TEST_CASE("help exits 0 for every subcommand")
{
    CHECK(run("--help").code == 0);
    for (const char* sub : {"extract", "render", "lr-find", "train", "eval"}) {
        auto r = run(std::string(sub) + " --help");
        INFO(sub << ": " << r.output);
        CHECK(r.code == 0);
    }
    CHECK(run("").code == 1);
    CHECK(run("bogus").code == 1);
    CHECK(run("extract --corpus /tmp --variant sideways").code == 1);
}

TEST_CASE("extract: files, manifest, determinism, errors")
{
    auto corpus = small_corpus("extract_corpus", 6);
    auto out = scratch("extract_out");
    auto r = run("extract --corpus " + q(corpus) + " --variant stacked --out " + q(out));
    INFO(r.output);
    REQUIRE(r.code == 0);
    auto files = read_dir(out);
    CHECK(files.size() == 13);
    CHECK(files.count("manifest.json") == 1);
    for (int s : {1, 21}) {
        auto t = load_feature_tensor(out / ("U1S" + std::to_string(s) + ".psft"));
        CHECK(t.channels == 14);
        CHECK(t.height == 128);
    }
    auto manifest = nlohmann::json::parse(files.at("manifest.json"));
    CHECK(manifest["command"] == "extract");
    CHECK(manifest["artifacts"].size() == 12);
    CHECK(manifest["config"]["variant"] == "stacked");
    CHECK(manifest.contains("corpus"));

    auto again = run("extract --corpus " + q(corpus) + " --variant stacked --out " + q(out));
    REQUIRE(again.code == 0);
    CHECK(read_dir(out) == files);

    auto empty = scratch("extract_empty");
    auto e = run("extract --corpus " + q(empty) + " --out " + q(scratch("extract_empty_out")));
    CHECK(e.code == 1);
    CHECK(e.output.find("no files found") != std::string::npos);

    CHECK(run("extract --corpus /nonexistent/psfv --out " + q(out)).code == 2);

    auto bad = small_corpus("extract_bad", 1);
    write_text_file(bad / "U1S2.TXT", "3\n1 2 3 1\n");
    auto b = run("extract --corpus " + q(bad) + " --out " + q(scratch("extract_bad_out")));
    CHECK(b.code == 1);
    CHECK(b.output.find("U1S2.TXT") != std::string::npos);
    CHECK(run("extract --permissive --corpus " + q(bad) + " --out " + q(scratch("extract_bad_out"))).code == 0);
}

TEST_CASE("render: one PGM per channel matching the rasterizer")
{
    auto corpus = small_corpus("render_corpus", 1);
    const auto instance = corpus / "U1S1.TXT";
    for (auto [variant, channels] : {std::pair{"original", 7}, std::pair{"stacked", 14}}) {
        auto out = scratch(std::string("render_") + variant);
        auto r = run("render --instance " + q(instance) + " --variant " + variant + " --out " + q(out));
        INFO(r.output);
        REQUIRE(r.code == 0);
        int pgms = 0;
        for (const auto& e : fs::directory_iterator(out)) pgms += e.path().extension() == ".pgm";
        CHECK(pgms == channels);
        CHECK(fs::exists(out / "manifest.json"));

        auto t = rasterize(normalize(load_instance(instance)), *parse_variant(variant));
        std::istringstream is(read_text_file(out / "U1S1_ch00.pgm"));
        std::string magic;
        int w = 0, h = 0, maxval = 0;
        is >> magic >> w >> h >> maxval;
        CHECK(h == 128);
        CHECK(w == t.width);
        std::set<std::pair<int, int>> from_pgm, from_raster;
        for (int row = 0; row < h; ++row) {
            for (int col = 0; col < w; ++col) {
                int v = 0;
                is >> v;
                if (v != 0) from_pgm.insert({row, col});
                if (t(0, row, col) != 0.0f) from_raster.insert({row, col});
            }
        }
        CHECK(from_pgm == from_raster);
        CHECK(!from_pgm.empty());
    }
}

TEST_CASE("lr-find: schedule CSV, chosen lr, usage errors")
{
    auto corpus = small_corpus("lr_corpus", 10);
    auto out = scratch("lr_out");
    auto r = run("lr-find --corpus " + q(corpus) + " --model rnn --steps 20 --out " + q(out));
    INFO(r.output);
    REQUIRE(r.code == 0);
    const double chosen = std::stod(r.output.substr(r.output.find_last_of('\n', r.output.size() - 2) + 1));

    std::istringstream csv(read_text_file(out / "lr_scan.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "step,lr,smoothed_loss");
    std::vector<double> lrs;
    while (std::getline(csv, line)) {
        std::istringstream row(line);
        std::string step, lr;
        std::getline(row, step, ',');
        std::getline(row, lr, ',');
        lrs.push_back(std::stod(lr));
    }
    REQUIRE(lrs.size() >= 2);
    CHECK(lrs.size() <= 20);
    const double ratio = std::pow(1.0 / 1e-7, 1.0 / 20);
    for (std::size_t i = 1; i < lrs.size(); ++i) CHECK(lrs[i] / lrs[i - 1] == doctest::Approx(ratio).epsilon(1e-8));
    CHECK(chosen >= lrs.front() * (1 - 1e-9));
    CHECK(chosen <= lrs.back() * (1 + 1e-9));
    CHECK(fs::exists(out / "manifest.json"));

    CHECK(run("lr-find --corpus " + q(corpus) + " --lr-min 1 --lr-max 1e-3 --out " + q(out)).code == 1);
    CHECK(run("lr-find --corpus " + q(corpus) + " --steps 5 --out " + q(out)).code == 1);
}

TEST_CASE("train and eval round trip")
{
    auto corpus = small_corpus("train_corpus", 10);
    auto features = scratch("train_features");
    REQUIRE(run("extract --corpus " + q(corpus) + " --variant original --out " + q(features)).code == 0);

    SUBCASE("zero epochs writes the initialization and an empty log")
    {
        auto out = scratch("train_zero");
        auto r = run("train --features " + q(features) + " --model cnn-lstm --epochs 0 --lr 0.001 --seed 3 --out " + q(out));
        INFO(r.output);
        REQUIRE(r.code == 0);
        CHECK(read_text_file(out / "loss.csv") == "epoch,mean_train_loss,lr\n");
        auto ckpt = load_checkpoint(out / "model.svmd");
        auto fresh = build_model<float>(ModelConfig::make(ModelKind::cnn_lstm, FeatureVariant::original), 3);
        REQUIRE(ckpt.params.size() == fresh->parameters().size());
        for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
            CHECK(ckpt.params[i].second.data() == fresh->parameters()[i].value.data());
        }
        CHECK(ckpt.config.at("seed") == "3");
    }

    SUBCASE("two identical runs agree; eval reports consistent metrics")
    {
        auto a = scratch("train_a");
        auto b = scratch("train_b");
        const auto flags = " --model cnn-lstm --epochs 2 --lr 0.0005 --seed 5 ";
        auto ra = run("train --features " + q(features) + flags + "--out " + q(a));
        INFO(ra.output);
        REQUIRE(ra.code == 0);
        REQUIRE(run("train --features " + q(features) + flags + "--out " + q(b)).code == 0);
        // Manifests name their own output directory; the artifacts must match.
        CHECK(read_text_file(a / "loss.csv") == read_text_file(b / "loss.csv"));
        CHECK(read_text_file(a / "model.svmd") == read_text_file(b / "model.svmd"));

        std::istringstream csv(read_text_file(a / "loss.csv"));
        std::string line;
        int rows = -1;
        while (std::getline(csv, line)) ++rows;
        CHECK(rows == 2);

        auto ev = run("eval --checkpoint " + q(a / "model.svmd") + " --out " + q(a / "eval"));
        INFO(ev.output);
        REQUIRE(ev.code == 0);
        auto j = nlohmann::json::parse(read_text_file(a / "eval" / "metrics.json"));
        for (const char* key : {"tp", "fp", "tn", "fn", "accuracy", "precision", "recall", "f1", "threshold", "seed"}) {
            CHECK(j.contains(key));
        }
        CHECK(j["tp"].get<int>() + j["fp"].get<int>() + j["tn"].get<int>() + j["fn"].get<int>() == 4);
        auto m = Metrics::from_counts(j["tp"], j["fp"], j["tn"], j["fn"]);
        CHECK(m.accuracy == j["accuracy"].get<double>());
        CHECK(m.precision == j["precision"].get<double>());
        CHECK(m.recall == j["recall"].get<double>());
        CHECK(m.f1 == j["f1"].get<double>());
        CHECK(j["seed"] == 5);
        CHECK(fs::exists(a / "eval" / "manifest.json"));
    }

    SUBCASE("config file values yield to explicit flags")
    {
        auto out = scratch("train_config");
        write_text_file(out / "run.conf", "epochs=1\nlr=0.001\nmodel=cnn-lstm\nseed=2\n");
        auto r = run("train --config " + q(out / "run.conf") + " --features " + q(features) + " --out " + q(out / "a"));
        INFO(r.output);
        REQUIRE(r.code == 0);
        auto rows = [](const fs::path& f) {
            std::istringstream is(read_text_file(f));
            std::string line;
            int n = -1;
            while (std::getline(is, line)) ++n;
            return n;
        };
        CHECK(rows(out / "a" / "loss.csv") == 1);
        REQUIRE(run("train --config " + q(out / "run.conf") + " --epochs 2 --features " + q(features) + " --out " +
                    q(out / "b"))
                    .code == 0);
        CHECK(rows(out / "b" / "loss.csv") == 2);

        write_text_file(out / "bad.conf", "epochz=1\n");
        CHECK(run("train --config " + q(out / "bad.conf") + " --features " + q(features) + " --out " + q(out / "c")).code == 1);
        CHECK(run("train --config " + q(out / "missing.conf") + " --features " + q(features) + " --out " + q(out / "c")).code == 2);
    }
}

TEST_CASE("eval with an empty test selection exits 1")
{
    auto corpus = small_corpus("eval_tiny", 1);
    auto out = scratch("eval_tiny_out");
    auto t = run("train --corpus " + q(corpus) + " --model rnn --epochs 1 --lr 0.001 --out " + q(out));
    INFO(t.output);
    REQUIRE(t.code == 0);
    auto r = run("eval --checkpoint " + q(out / "model.svmd"));
    CHECK(r.code == 1);
    CHECK(r.output.find("empty") != std::string::npos);
    CHECK(run("eval --checkpoint " + q(out / "model.svmd") + " --subset all").code == 0);
    CHECK(run("eval --checkpoint " + q(out / "missing.svmd")).code == 2);
}

TEST_CASE("numeric blow-up exits 3")
{
    auto corpus = small_corpus("nan_corpus", 10);
    auto r = run("train --corpus " + q(corpus) + " --model rnn --epochs 3 --lr 1e30 --out " + q(scratch("nan_out")));
    INFO(r.output);
    CHECK(r.code == 3);
}
