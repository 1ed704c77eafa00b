#include "testing.hpp"

#include <sedepth/image_io.hpp>
#include <sedepth_cli/cli.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "oracles.hpp"

using namespace sedepth;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string err;
};

Outcome run(std::vector<std::string> args) {
    args.insert(args.begin(), "sedepth");
    std::vector<char*> argv;
    for (auto& a : args) {
        argv.push_back(a.data());
    }
    std::ostringstream err;
    std::ostringstream out;
    auto* old_err = std::cerr.rdbuf(err.rdbuf());
    auto* old_out = std::cout.rdbuf(out.rdbuf());
    int code = -1;
    try {
        code = cli::main_entry(static_cast<int>(argv.size()), argv.data());
    } catch (...) {
        std::cerr.rdbuf(old_err);
        std::cout.rdbuf(old_out);
        throw;
    }
    std::cerr.rdbuf(old_err);
    std::cout.rdbuf(old_out);
    return {code, err.str()};
}

std::vector<fs::path> files_under(const fs::path& root) {
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) {
            out.push_back(fs::relative(e.path(), root));
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::size_t count_suffix(const std::vector<fs::path>& files, const std::string& suffix) {
    return static_cast<std::size_t>(std::count_if(files.begin(), files.end(), [&](const fs::path& p) {
        const auto s = p.string();
        return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
    }));
}

std::vector<std::string> smoke_sets(std::int64_t steps) {
    return {"--set", "train.total_steps=" + std::to_string(steps), "--set", "train.batch_size=2", "--set",
            "train.val_every=0"};
}

/// One shared tiny dataset and smoke checkpoint for the read-only tests.
struct Fixture {
    oracle::TempDir dir{"cli_fixture"};
    fs::path data = dir.path() / "data";
    fs::path run_dir = dir.path() / "run";

    Fixture() {
        REQUIRE(run({"synth", "--out", data.string(), "--n-train", "2", "--n-val", "2", "--seed", "3"}).code == 0);
        auto args = std::vector<std::string>{"train", "--data", data.string(), "--out", run_dir.string()};
        const auto sets = smoke_sets(3);
        args.insert(args.end(), sets.begin(), sets.end());
        const auto r = run(args);
        INFO(r.err);
        REQUIRE(r.code == 0);
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

}  // namespace

TEST_CASE("synth writes manifests and PNG pairs, byte-identical on rerun") {
    oracle::TempDir dir("cli_synth");
    const auto a = dir.path() / "a";
    const auto b = dir.path() / "b";
    REQUIRE(run({"synth", "--out", a.string(), "--n-train", "8", "--n-val", "2", "--seed", "5"}).code == 0);
    REQUIRE(run({"synth", "--out", b.string(), "--n-train", "8", "--n-val", "2", "--seed", "5"}).code == 0);
    const auto files = files_under(a);
    CHECK(count_suffix(files, "_depth.png") == 10);
    CHECK(count_suffix(files, ".png") == 20);
    CHECK(count_suffix(files, ".txt") == 2);
    CHECK(fs::exists(manifest_path(a, "train")));
    CHECK(fs::exists(manifest_path(a, "val")));
    REQUIRE(files == files_under(b));
    for (const auto& f : files) {
        CHECK(oracle::read_file(a / f) == oracle::read_file(b / f));
    }
}

TEST_CASE("synth with zero training samples writes an empty manifest") {
    oracle::TempDir dir("cli_synth0");
    REQUIRE(run({"synth", "--out", dir.path().string(), "--n-train", "0", "--n-val", "1"}).code == 0);
    CHECK(oracle::read_file(manifest_path(dir.path(), "train")).empty());
    CHECK(load_manifest(dir.path(), "val").refs.size() == 1);
}

TEST_CASE("synth into an unwritable location fails with a reason") {
    const auto r = run({"synth", "--out", "/proc/sedepth_no_such/data", "--n-train", "1"});
    CHECK(r.code != 0);
    CHECK(r.err.rfind("error:", 0) == 0);
}

TEST_CASE("train on a missing dataset exits 2 naming the manifest") {
    oracle::TempDir dir("cli_missing");
    const auto r = run({"train", "--data", (dir.path() / "none").string(), "--out", (dir.path() / "o").string()});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find(manifest_path(dir.path() / "none", "train").string()) != std::string::npos);
}

TEST_CASE("config errors exit 2 with the offending key") {
    oracle::TempDir dir("cli_config");
    const auto data = fixture().data.string();
    for (const auto& [set, key] : std::vector<std::pair<std::string, std::string>>{
             {"train.batch_size=0", "train.batch_size"},
             {"train.total_steps=lots", "train.total_steps"},
             {"model.no_such_key=1", "model.no_such_key"},
             {"augment.flip_prob=2", "augment.flip_prob"}}) {
        const auto r = run({"train", "--data", data, "--out", dir.path().string(), "--set", set});
        CHECK(r.code == cli::kExitUsage);
        CHECK(r.err.find(key) != std::string::npos);
        CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
        CHECK(r.err.rfind("error:", 0) == 0);
    }
    const auto usage = run({"train", "--bogus-flag"});
    CHECK(usage.code == cli::kExitUsage);
    CHECK(usage.err.rfind("error:usage", 0) == 0);
}

TEST_CASE("smoke training writes the declared artifacts") {
    const auto& f = fixture();
    for (const char* name : {"final.ckpt", "best.ckpt", "train_log.jsonl", "run_config.txt", "metrics.json",
                             "metrics.txt", "metrics_table.txt", "val_step0.json"}) {
        CHECK_MESSAGE(fs::exists(f.run_dir / name), name);
    }
    CHECK(load_checkpoint(f.run_dir / "final.ckpt").state.step == 3);
}

TEST_CASE("resume continues from the saved step") {
    oracle::TempDir dir("cli_resume");
    const auto& f = fixture();
    auto args = std::vector<std::string>{"train", "--data", f.data.string(), "--out", dir.path().string(),
                                         "--resume", (f.run_dir / "final.ckpt").string()};
    const auto sets = smoke_sets(5);
    args.insert(args.end(), sets.begin(), sets.end());
    const auto r = run(args);
    INFO(r.err);
    REQUIRE(r.code == 0);
    std::ifstream log(dir.path() / "train_log.jsonl");
    std::string first;
    std::getline(log, first);
    CHECK(first.rfind("{\"step\":3,", 0) == 0);
    CHECK(load_checkpoint(dir.path() / "final.ckpt").state.step == 5);
    CHECK_FALSE(fs::exists(dir.path() / "val_step0.json"));
}

TEST_CASE("eval with a ground-truth oracle reports perfect metrics") {
    const auto& f = fixture();
    oracle::TempDir dir("cli_oracle");
    auto cfg = cli::RunConfig::load(std::nullopt, {"paths.data=" + f.data.string(), "paths.out=" + dir.path().string()});
    const SamplePredictor truth = [](const RgbdSample& s) { return s.depth.data; };
    const auto reports = cli::run_eval(cfg, f.run_dir / "final.ckpt", "val", "", truth);
    REQUIRE(reports.size() == 1);
    const auto& m = reports[0];
    CHECK(m.delta1 == 1.0);
    CHECK(m.delta2 == 1.0);
    CHECK(m.delta3 == 1.0);
    CHECK(m.rmse == 0.0);
    CHECK(m.abs_rel == 0.0);
    CHECK(m.sq_rel == 0.0);
    const auto back = MetricsReport::from_json(oracle::read_file(dir.path() / "metrics.json"));
    CHECK(back.delta1 == 1.0);
    CHECK(back.rmse == 0.0);
}

TEST_CASE("eval twice produces identical report files") {
    const auto& f = fixture();
    oracle::TempDir dir("cli_eval2");
    const auto a = dir.path() / "a";
    const auto b = dir.path() / "b";
    for (const auto& out : {a, b}) {
        const auto r = run({"eval", "--checkpoint", (f.run_dir / "final.ckpt").string(), "--data", f.data.string(),
                            "--out", out.string(), "--fuse"});
        INFO(r.err);
        REQUIRE(r.code == 0);
    }
    for (const char* name : {"metrics.json", "metrics.txt", "metrics_table.txt"}) {
        CHECK(oracle::read_file(a / name) == oracle::read_file(b / name));
    }
    const auto table = oracle::read_file(a / "metrics_table.txt");
    const auto d1 = table.find("d1");
    const auto d2 = table.find("d2");
    const auto d3 = table.find("d3");
    const auto rmse = table.find("RMSE");
    const auto absrel = table.find("AbsRel");
    const auto sqrel = table.find("SqRel");
    CHECK(d1 < d2);
    CHECK(d2 < d3);
    CHECK(d3 < rmse);
    CHECK(rmse < absrel);
    CHECK(absrel < sqrel);
    CHECK(sqrel != std::string::npos);
}

TEST_CASE("eval with a mismatched config exits 2") {
    const auto& f = fixture();
    oracle::TempDir dir("cli_eval_mismatch");
    const auto r = run({"eval", "--checkpoint", (f.run_dir / "final.ckpt").string(), "--data", f.data.string(),
                        "--out", dir.path().string(), "--set", "model.d_sem=32"});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("model.d_sem") != std::string::npos);
}

TEST_CASE("ablation all trains and evaluates four tagged runs") {
    const auto& f = fixture();
    oracle::TempDir dir("cli_ablation");
    auto args = std::vector<std::string>{"train", "--data", f.data.string(), "--out", (dir.path() / "runs").string(),
                                         "--ablation", "all"};
    const auto sets = smoke_sets(2);
    args.insert(args.end(), sets.begin(), sets.end());
    const auto t = run(args);
    INFO(t.err);
    REQUIRE(t.code == 0);
    const auto e = run({"eval", "--checkpoint", (dir.path() / "runs").string(), "--data", f.data.string(), "--out",
                        (dir.path() / "eval").string(), "--ablation", "all"});
    INFO(e.err);
    REQUIRE(e.code == 0);
    const auto table = oracle::read_file(dir.path() / "eval" / "ablation_table.txt");
    for (const char* tag : {"base", "dc", "sa", "dc_sa"}) {
        CHECK(fs::exists(dir.path() / "eval" / tag / "metrics.json"));
        CHECK(fs::exists(dir.path() / "runs" / tag / "final.ckpt"));
        CHECK(table.find(tag) != std::string::npos);
    }
    CHECK(run({"eval", "--checkpoint", (dir.path() / "runs").string(), "--data", f.data.string(), "--ablation",
               "dcsa"})
              .code == cli::kExitUsage);
}

TEST_CASE("predict keeps the input resolution, including auto-padded sizes") {
    const auto& f = fixture();
    oracle::TempDir dir("cli_predict");
    for (const std::int64_t side : {64, 70}) {
        SyntheticSceneSpec spec;
        spec.height = side;
        spec.width = side;
        const auto s = generate_synthetic(spec, "img");
        const auto img = dir.path() / ("img" + std::to_string(side) + ".png");
        write_rgb_png(img, s.image);
        const auto r = run({"predict", "--checkpoint", (f.run_dir / "final.ckpt").string(), "--image", img.string(),
                            "--out", (dir.path() / "out").string()});
        INFO(r.err);
        REQUIRE(r.code == 0);
        const auto stem = img.stem().string();
        const auto depth = read_depth_png(dir.path() / "out" / (stem + "_depth.png"));
        CHECK((depth.sizes() == torch::IntArrayRef({side, side})));
        CHECK(fs::exists(dir.path() / "out" / (stem + "_preview.png")));
    }
}

TEST_CASE("predict: fusing a constant stub equals the plain prediction") {
    oracle::TempDir dir("cli_fuse");
    SyntheticSceneSpec spec;
    spec.width = 96;
    const auto img = dir.path() / "wide.png";
    write_rgb_png(img, generate_synthetic(spec, "wide").image);
    const auto cfg = cli::RunConfig::load(std::nullopt, {"paths.out=" + dir.path().string()});
    const ImagePredictor stub = [](const torch::Tensor& x) { return torch::full({x.size(1), x.size(2)}, 7.25); };
    const auto plain = cli::run_predict(cfg, "", img, false, stub);
    const auto plain_png = oracle::read_file(dir.path() / "wide_depth.png");
    const auto fused = cli::run_predict(cfg, "", img, true, stub);
    CHECK(torch::allclose(plain, fused, 0.0, 1e-6));
    CHECK(oracle::read_file(dir.path() / "wide_depth.png") == plain_png);
    CHECK((fused.sizes() == torch::IntArrayRef({64, 96})));
}

TEST_CASE("predict on an unreadable image exits 2") {
    const auto& f = fixture();
    oracle::TempDir dir("cli_badimg");
    {
        std::ofstream junk(dir.path() / "junk.png");
        junk << "not a png";
    }
    for (const auto& path : {dir.path() / "junk.png", dir.path() / "absent.png"}) {
        const auto r = run({"predict", "--checkpoint", (f.run_dir / "final.ckpt").string(), "--image", path.string(),
                            "--out", dir.path().string()});
        CHECK(r.code == cli::kExitUsage);
        CHECK(r.err.find(path.string()) != std::string::npos);
    }
}

TEST_CASE("a diverging run exits 3 naming the frames") {
    const auto& f = fixture();
    oracle::TempDir dir("cli_nan");
    const auto r = run({"train", "--data", f.data.string(), "--out", dir.path().string(), "--set",
                        "train.total_steps=6", "--set", "train.batch_size=2", "--set", "train.lr_init=1e36", "--set",
                        "train.lr_max=1e37"});
    CHECK(r.code == cli::kExitNumeric);
    CHECK(r.err.rfind("error:numeric", 0) == 0);
    CHECK(r.err.find("train_000") != std::string::npos);
}

TEST_CASE("metrics and plot subcommands") {
    const auto& f = fixture();
    oracle::TempDir dir("cli_metrics");
    const auto gt = sample_paths(f.data, "val", "val_0000").depth;
    const auto cfg = cli::RunConfig::load(std::nullopt, {});
    const auto self = cli::run_metrics(cfg, gt, gt);
    CHECK(self.delta1 == 1.0);
    CHECK(self.abs_rel == 0.0);
    CHECK(run({"metrics", "--pred", gt.string(), "--gt", gt.string(), "--no-garg-crop"}).code == 0);

    const auto png = dir.path() / "loss.png";
    CHECK(run({"plot", "--log", (f.run_dir / "train_log.jsonl").string(), "--out", png.string()}).code == 0);
    CHECK(fs::file_size(png) > 0);
    CHECK(run({"plot", "--log", (dir.path() / "none.jsonl").string()}).code == cli::kExitUsage);
}
