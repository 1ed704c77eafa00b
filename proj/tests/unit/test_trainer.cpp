#include "testing.hpp"

#include <sedepth/checkpoint.hpp>
#include <sedepth/freeze_policy.hpp>
#include <sedepth/nn_common.hpp>
#include <sedepth/optimizer.hpp>
#include <sedepth/trainer.hpp>

#include <cmath>
#include <fstream>

#include "oracles.hpp"

using namespace sedepth;

namespace {

std::vector<RgbdSample> dataset(std::size_t n, std::uint64_t seed0 = 100) {
    std::vector<RgbdSample> out;
    for (std::size_t i = 0; i < n; ++i) {
        SyntheticSceneSpec spec;
        spec.seed = seed0 + i;
        spec.sparsity = 0.8;
        out.push_back(generate_synthetic(spec, "frame_" + std::to_string(i)));
    }
    return out;
}

TrainerConfig small_config(std::int64_t steps = 50) {
    TrainerConfig c;
    c.total_steps = steps;
    c.batch_size = 2;
    c.seed = 7;
    return c;
}

std::map<std::string, std::vector<torch::Tensor>> snapshot(const GroupedParameters& groups) {
    std::map<std::string, std::vector<torch::Tensor>> out;
    for (const auto& [g, params] : groups) {
        for (const auto& [name, t] : params) {
            out[group_name(g)].push_back(t.detach().clone());
        }
    }
    return out;
}

double update_norm(const std::vector<torch::Tensor>& before, const std::vector<NamedTensor>& after) {
    double sq = 0.0;
    for (std::size_t i = 0; i < before.size(); ++i) {
        sq += (after[i].second.detach() - before[i]).pow(2).sum().item<double>();
    }
    return std::sqrt(sq);
}

double max_step(const OneCycleSchedule& s) {
    double worst = 0.0;
    for (std::int64_t i = 0; i < s.total_steps; ++i) {
        worst = std::max(worst, std::abs(lr_at(i + 1, s) - lr_at(i, s)));
    }
    return worst;
}

bool same_records(const LossRecord& a, const LossRecord& b) {
    return a.depth_loss == b.depth_loss && a.diffusion_loss == b.diffusion_loss && a.total == b.total && a.lr == b.lr;
}

}  // namespace

TEST_CASE("one-cycle endpoints are exact") {
    const OneCycleSchedule s;
    CHECK(s.peak_step() == 300);
    CHECK(lr_at(0, s) == 4e-5);
    CHECK(lr_at(s.peak_step(), s) == 6e-4);
    CHECK(lr_at(1000, s) == doctest::Approx(4e-6).epsilon(1e-12));
    CHECK(s.lr_floor() == doctest::Approx(4e-6).epsilon(1e-15));
}

TEST_CASE("one-cycle schedule is unimodal over 1000 steps") {
    const OneCycleSchedule s;
    const auto peak = s.peak_step();
    for (std::int64_t i = 0; i < s.total_steps; ++i) {
        if (i < peak) {
            CHECK(lr_at(i + 1, s) > lr_at(i, s));
        } else {
            CHECK(lr_at(i + 1, s) < lr_at(i, s));
        }
    }
}

TEST_CASE("one-cycle continuity") {
    const OneCycleSchedule s;
    const double pi = 3.14159265358979323846;
    const double P = static_cast<double>(s.peak_step());
    const double N = static_cast<double>(s.total_steps);
    const double phase_bound = std::max((s.lr_max - s.lr_init) * pi / (2.0 * P),
                                        (s.lr_max - s.lr_floor()) * pi / (2.0 * (N - P)));
    CHECK(max_step(s) <= phase_bound);

    OneCycleSchedule symmetric;
    symmetric.warmup_fraction = 0.5;
    symmetric.final_div = 1.0;
    const double literal = 2.0 * (symmetric.lr_max - symmetric.lr_init) / N * pi / 2.0;
    CHECK(max_step(symmetric) <= literal);
}

TEST_CASE("one-cycle range and config errors") {
    const OneCycleSchedule s;
    CHECK_THROWS_AS(lr_at(-1, s), ConfigError);
    CHECK_THROWS_AS(lr_at(1001, s), ConfigError);
    OneCycleSchedule bad = s;
    bad.lr_init = 1e-3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = s;
    bad.warmup_fraction = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    TrainerConfig c;
    c.batch_size = 0;
    try {
        c.validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.field() == "train.batch_size");
    }
}

TEST_CASE("AdamW: zero-gradient step applies decoupled decay only") {
    auto w = torch::ones({3}, torch::kFloat64);
    w.mutable_grad() = torch::zeros({3}, torch::kFloat64);
    AdamW opt({{"w", w}}, AdamWConfig{0.9, 0.999, 1e-8, 0.1});
    opt.step(1e-3);
    CHECK(torch::allclose(w, torch::full({3}, 0.9999, torch::kFloat64), 0.0, 1e-15));

    auto u = torch::ones({2}, torch::kFloat64);
    AdamW undefined({{"u", u}}, AdamWConfig{});
    undefined.step(1e-3);
    CHECK(torch::allclose(u, torch::full({2}, 0.9999, torch::kFloat64), 0.0, 1e-15));
}

TEST_CASE("AdamW: first step matches the bias-corrected closed form") {
    auto w = torch::tensor({0.5, -2.0, 3.0}, torch::kFloat64);
    const auto g = torch::tensor({0.2, -0.01, 4.0}, torch::kFloat64);
    w.mutable_grad() = g.clone();
    const AdamWConfig cfg{0.9, 0.999, 1e-8, 0.1};
    AdamW opt({{"w", w}}, cfg);
    const double lr = 1e-2;
    const auto w0 = w.clone();
    opt.step(lr);
    for (std::int64_t i = 0; i < 3; ++i) {
        const double gi = g[i].item<double>();
        const double m_hat = (1 - cfg.beta1) * gi / (1 - cfg.beta1);
        const double v_hat = (1 - cfg.beta2) * gi * gi / (1 - cfg.beta2);
        const double expected = w0[i].item<double>() * (1 - lr * cfg.weight_decay) - lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        CHECK(w[i].item<double>() == doctest::Approx(expected).epsilon(1e-12));
    }
    CHECK(opt.step_count() == 1);
    CHECK(opt.exp_avg()[0].first == "w");
}

TEST_CASE("gradient clipping rescales to the global norm") {
    auto a = torch::zeros({2}, torch::kFloat64);
    auto b = torch::zeros({1}, torch::kFloat64);
    a.mutable_grad() = torch::tensor({3.0, 0.0}, torch::kFloat64);
    b.mutable_grad() = torch::tensor({4.0}, torch::kFloat64);
    const double norm = clip_grad_norm({{"a", a}, {"b", b}}, 1.0);
    CHECK(norm == doctest::Approx(5.0));
    const double after = std::sqrt(a.grad().pow(2).sum().item<double>() + b.grad().pow(2).sum().item<double>());
    CHECK(after == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("every model parameter belongs to exactly one freeze group") {
    DepthModel model(ModelConfig{}, 1);
    const auto groups = group_parameters(*model);
    std::int64_t total = 0;
    for (const auto& [g, params] : groups) {
        for (const auto& [name, t] : params) {
            CHECK(classify_parameter(name).value() == g);
            total += t.numel();
        }
    }
    CHECK(total == parameter_count(*model));
    CHECK(groups.size() == 6);
    CHECK(classify_parameter("semantic.backbone.stage0.dilated.zero_conv.weight") == ParamGroup::DilatedConv);
    CHECK(classify_parameter("semantic.backbone.stage1.spatial_attn.zero_conv.bias") == ParamGroup::SpatialAttention);
    CHECK(classify_parameter("semantic.query.local_queries") == ParamGroup::SemanticFrozen);
    CHECK(classify_parameter("latent.conv0.weight") == ParamGroup::LatentEncoder);
    CHECK(classify_parameter("unet.in_conv.weight") == ParamGroup::UNet);
    CHECK(classify_parameter("decoder.head.bias") == ParamGroup::DepthDecoder);
    CHECK_FALSE(classify_parameter("stray.weight").has_value());
    CHECK(parse_group("dilated_conv") == ParamGroup::DilatedConv);
}

TEST_CASE("unpartitioned parameters are reported by name") {
    struct Stray : torch::nn::Module {
        Stray() { register_parameter("stray_weight", torch::zeros({2})); }
    };
    Stray m;
    try {
        group_parameters(m);
        FAIL("expected Error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("stray_weight") != std::string::npos);
    }
}

TEST_CASE("one step leaves frozen groups intact and moves every trainable group") {
    Trainer trainer(ModelConfig{}, small_config());
    const auto before = snapshot(trainer.groups());
    const auto digests = group_digests(trainer.groups());
    trainer.train_step(dataset(2));
    const auto after = trainer.groups();
    const auto digests_after = group_digests(after);
    const FreezePolicy policy;
    for (const auto& [g, params] : after) {
        const auto name = group_name(g);
        const double moved = update_norm(before.at(name), params);
        if (policy.is_frozen(g)) {
            CHECK(digests_after.at(name) == digests.at(name));
            CHECK(moved == 0.0);
            for (const auto& [pname, t] : params) {
                CHECK_FALSE(t.requires_grad());
            }
        } else {
            MESSAGE(name << " update norm " << moved);
            CHECK(moved > 0.0);
        }
    }
    CHECK(trainer.state().step == 1);
}

TEST_CASE("identical state gives identical loss records") {
    const auto data = dataset(4);
    Trainer a(ModelConfig{}, small_config(), AugmentConfig{});
    Trainer b(ModelConfig{}, small_config(), AugmentConfig{});
    for (int i = 0; i < 3; ++i) {
        const auto ra = a.train_step(a.next_batch(data));
        const auto rb = b.train_step(b.next_batch(data));
        CHECK(same_records(ra, rb));
    }
    CHECK(group_digests(a.groups()) == group_digests(b.groups()));
}

TEST_CASE("lambda_dm = 0 reports exactly zero diffusion loss and draws no noise") {
    Trainer trainer(ModelConfig{}, small_config());
    const auto data = dataset(2);
    trainer.train_step(data);
    const auto rng_before = trainer.state().rng_state;
    const auto rec = trainer.train_step(data);
    CHECK(rec.diffusion_loss == 0.0);
    CHECK(rec.total == rec.depth_loss);
    CHECK(trainer.state().rng_state == rng_before);

    auto cfg = small_config();
    cfg.lambda_dm = 0.5;
    Trainer noisy(ModelConfig{}, cfg);
    const auto r = noisy.train_step(data);
    CHECK(r.diffusion_loss > 0.0);
    CHECK(r.total == doctest::Approx(r.depth_loss + 0.5 * r.diffusion_loss).epsilon(1e-6));
}

TEST_CASE("checkpoint round trip is bit-exact") {
    oracle::TempDir dir("ckpt");
    Trainer trainer(ModelConfig{}, small_config(), AugmentConfig{});
    const auto data = dataset(4);
    trainer.train_step(trainer.next_batch(data));
    trainer.train_step(trainer.next_batch(data));
    const auto ckpt = trainer.checkpoint();
    save_checkpoint(ckpt, dir.path() / "a.ckpt");
    const auto back = load_checkpoint(dir.path() / "a.ckpt");

    CHECK_FALSE(back.model.first_mismatch(ckpt.model).has_value());
    CHECK(back.seed == ckpt.seed);
    CHECK(back.state.step == 2);
    CHECK(back.state.epoch == ckpt.state.epoch);
    CHECK(back.state.cursor == ckpt.state.cursor);
    CHECK(back.state.rng_state == ckpt.state.rng_state);
    CHECK(back.state.group_digests == ckpt.state.group_digests);
    CHECK(back.trainer == ckpt.trainer);
    REQUIRE(back.groups.size() == ckpt.groups.size());
    for (const auto& [name, tensors] : ckpt.groups) {
        const auto& other = back.groups.at(name);
        REQUIRE(other.size() == tensors.size());
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            CHECK(other[i].first == tensors[i].first);
            CHECK(torch::equal(other[i].second, tensors[i].second));
        }
    }
    CHECK(back.optimizer_step == 2);
    REQUIRE(back.exp_avg.size() == ckpt.exp_avg.size());
    for (std::size_t i = 0; i < ckpt.exp_avg.size(); ++i) {
        CHECK(torch::equal(back.exp_avg[i].second, ckpt.exp_avg[i].second));
        CHECK(torch::equal(back.exp_avg_sq[i].second, ckpt.exp_avg_sq[i].second));
    }
}

TEST_CASE("resume reproduces the uninterrupted run") {
    oracle::TempDir dir("resume");
    const auto data = dataset(5);
    Trainer a(ModelConfig{}, small_config(), AugmentConfig{});
    a.train_step(a.next_batch(data));
    a.train_step(a.next_batch(data));
    save_checkpoint(a.checkpoint(), dir.path() / "mid.ckpt");
    std::vector<LossRecord> uninterrupted;
    for (int i = 0; i < 3; ++i) {
        uninterrupted.push_back(a.train_step(a.next_batch(data)));
    }

    Trainer b(ModelConfig{}, small_config(), AugmentConfig{});
    b.restore(load_checkpoint(dir.path() / "mid.ckpt", ModelConfig{}));
    CHECK(b.state().step == 2);
    for (int i = 0; i < 3; ++i) {
        CHECK(same_records(b.train_step(b.next_batch(data)), uninterrupted[static_cast<std::size_t>(i)]));
    }
    CHECK(group_digests(a.groups()) == group_digests(b.groups()));
}

TEST_CASE("mismatched config on load names the field") {
    oracle::TempDir dir("mismatch");
    Trainer trainer(ModelConfig{}, small_config());
    save_checkpoint(trainer.checkpoint(), dir.path() / "c.ckpt");
    ModelConfig other;
    other.d_sem = 32;
    try {
        load_checkpoint(dir.path() / "c.ckpt", other);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.field() == "model.d_sem");
    }
    Trainer different(other, small_config());
    try {
        different.restore(load_checkpoint(dir.path() / "c.ckpt"));
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.field() == "model.d_sem");
    }
}

TEST_CASE("truncated or corrupted checkpoints are refused") {
    oracle::TempDir dir("corrupt");
    Trainer trainer(ModelConfig{}, small_config());
    save_checkpoint(trainer.checkpoint(), dir.path() / "ok.ckpt");
    const auto bytes = oracle::read_file(dir.path() / "ok.ckpt");
    {
        std::ofstream out(dir.path() / "trunc.ckpt", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "trunc.ckpt"), DataError);
    {
        auto flipped = bytes;
        flipped[flipped.size() / 3] = static_cast<char>(flipped[flipped.size() / 3] ^ 0x5a);
        std::ofstream out(dir.path() / "flip.ckpt", std::ios::binary);
        out.write(flipped.data(), static_cast<std::streamsize>(flipped.size()));
    }
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "flip.ckpt"), DataError);
    {
        std::ofstream out(dir.path() / "short.ckpt", std::ios::binary);
        out.write(bytes.data(), 5);
    }
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "short.ckpt"), DataError);
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "missing.ckpt"), DataError);
    CHECK_NOTHROW(load_checkpoint(dir.path() / "ok.ckpt"));
}

TEST_CASE("a non-finite loss raises NumericError naming the frames") {
    Trainer trainer(ModelConfig{}, small_config());
    {
        torch::NoGradGuard no_grad;
        trainer.model()->decoder->parameters().front().fill_(std::numeric_limits<float>::quiet_NaN());
    }
    const auto before = group_digests(trainer.groups());
    try {
        trainer.train_step(dataset(2));
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("frame_0") != std::string::npos);
        CHECK(msg.find("frame_1") != std::string::npos);
    }
    CHECK(trainer.state().step == 0);
    CHECK(group_digests(trainer.groups()) == before);
}

TEST_CASE("training loss halves within 200 steps on a fixed batch") {
    auto cfg = small_config(200);
    cfg.batch_size = 4;
    Trainer trainer(ModelConfig{}, cfg);
    const auto batch = dataset(4);
    const auto first = trainer.train_step(batch);
    LossRecord last = first;
    for (int i = 1; i < 200; ++i) {
        last = trainer.train_step(batch);
    }
    MESSAGE("initial total " << first.total << ", final total " << last.total);
    CHECK(last.total < 0.5 * first.total);
}

TEST_CASE("fit writes the structured log and both checkpoints") {
    oracle::TempDir dir("fit");
    auto cfg = small_config(6);
    cfg.val_every = 3;
    Trainer trainer(ModelConfig{}, cfg);
    FitOptions opts;
    opts.out_dir = dir.path();
    opts.eval.use_garg_crop = false;
    opts.validate_at_start = true;
    const auto result = fit(trainer, dataset(4), dataset(1, 900), opts);
    REQUIRE(result.initial_val.has_value());
    REQUIRE(result.final_val.has_value());
    CHECK(std::filesystem::exists(dir.path() / "final.ckpt"));
    CHECK(std::filesystem::exists(dir.path() / "best.ckpt"));

    std::ifstream log(dir.path() / "train_log.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) {
        ++lines;
        for (const char* key : {"\"step\"", "\"lr\"", "\"depth_loss\"", "\"diffusion_loss\"", "\"total\"", "\"wall_ms\""}) {
            CHECK(line.find(key) != std::string::npos);
        }
    }
    CHECK(lines == 6);

    const auto final_ckpt = load_checkpoint(dir.path() / "final.ckpt");
    CHECK(final_ckpt.state.step == 6);
    auto model = model_from_checkpoint(final_ckpt);
    const auto sample = dataset(1, 900).front();
    CHECK(torch::equal(model->predict(sample.image.data), trainer.predict(sample)));
}
