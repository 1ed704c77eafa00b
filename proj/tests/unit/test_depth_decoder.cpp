#include "testing.hpp"

#include <sedepth/depth_decoder.hpp>

#include <cmath>

#include "oracles.hpp"

using namespace sedepth;

namespace {

DepthDecoder make_decoder(const ModelConfig& cfg, std::uint64_t seed = 2) {
    DepthDecoder dec(cfg);
    init_parameters(*dec, seed);
    dec->eval();
    return dec;
}

UNetFeatureMaps features_for(const ModelConfig& cfg, std::int64_t lh, std::int64_t lw, double scale,
                             std::uint64_t seed) {
    UNet unet(cfg);
    const auto channels = unet->feature_channels();
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    UNetFeatureMaps f;
    const auto n = static_cast<std::int64_t>(channels.size());
    for (std::int64_t i = 0; i < n; ++i) {
        const auto div = std::int64_t{1} << (n - 1 - i);
        f.levels.push_back(torch::randn({1, channels[static_cast<std::size_t>(i)], lh / div, lw / div}, gen) * scale);
    }
    return f;
}

}  // namespace

TEST_CASE("toy feature pyramid decodes to a 64x64 depth map") {
    const ModelConfig cfg;
    auto dec = make_decoder(cfg);
    torch::NoGradGuard no_grad;
    const auto f = features_for(cfg, 8, 8, 1.0, 1);
    CHECK((f.levels[0].sizes().slice(2) == torch::IntArrayRef({2, 2})));
    const auto d = decode_depth(f, dec);
    CHECK((d.data.sizes() == torch::IntArrayRef({1, 64, 64})));
    CHECK(torch::isfinite(d.data).all().item<bool>());
}

TEST_CASE("zero features give the range midpoint") {
    const ModelConfig cfg;
    auto dec = make_decoder(cfg);
    torch::NoGradGuard no_grad;
    auto f = features_for(cfg, 8, 8, 0.0, 1);
    const auto d = decode_depth(f, dec).data;
    const double mid = cfg.min_depth + (cfg.max_depth - cfg.min_depth) * 0.5;
    CHECK(d.min().item<double>() == doctest::Approx(mid).epsilon(1e-6));
    CHECK(d.max().item<double>() == doctest::Approx(mid).epsilon(1e-6));
}

TEST_CASE("decoded depth stays within [min_depth, max_depth]") {
    const ModelConfig cfg;
    auto dec = make_decoder(cfg);
    torch::NoGradGuard no_grad;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const auto d = decode_depth(features_for(cfg, 8, 8, 50.0, 10 + seed), dec).data;
        CHECK(d.min().item<double>() >= cfg.min_depth);
        CHECK(d.max().item<double>() <= cfg.max_depth);
    }
}

TEST_CASE("output resolution tracks the latent grid for non-square inputs") {
    const ModelConfig cfg;
    auto dec = make_decoder(cfg);
    torch::NoGradGuard no_grad;
    CHECK((decode_depth(features_for(cfg, 12, 8, 1.0, 3), dec).data.sizes() == torch::IntArrayRef({1, 96, 64})));
    CHECK((decode_depth(features_for(cfg, 4, 16, 1.0, 4), dec).data.sizes() == torch::IntArrayRef({1, 32, 128})));
}

TEST_CASE("mismatched pyramids are rejected") {
    const ModelConfig cfg;
    auto dec = make_decoder(cfg);
    torch::NoGradGuard no_grad;
    auto f = features_for(cfg, 8, 8, 1.0, 5);
    auto short_pyr = f;
    short_pyr.levels.pop_back();
    CHECK_THROWS_AS(decode_depth(short_pyr, dec), ShapeError);
    auto wrong_channels = f;
    wrong_channels.levels[0] = torch::zeros({1, 3, 2, 2});
    CHECK_THROWS_AS(decode_depth(wrong_channels, dec), ShapeError);
    auto wrong_size = f;
    wrong_size.levels[1] = torch::zeros({1, f.levels[1].size(1), 5, 4});
    CHECK_THROWS_AS(decode_depth(wrong_size, dec), ShapeError);
}

TEST_CASE("depth_loss examples") {
    const auto gt = torch::tensor({1.0, 2.0, 5.0, 7.5}, torch::kFloat64).view({2, 2});
    const auto all = torch::ones({2, 2}, torch::kBool);
    CHECK(depth_loss(gt, gt, all).item<double>() == 0.0);
    CHECK(std::abs(depth_loss(gt * 3.0, gt, all, 1.0).item<double>()) < 1e-12);

    const auto two = torch::tensor({1.0, 2.0}, torch::kFloat64).view({1, 2});
    const auto pred = torch::tensor({2.0, 2.0}, torch::kFloat64).view({1, 2});
    const double ln2 = std::log(2.0);
    const double expected = ln2 * ln2 / 2.0 - 0.85 * (ln2 / 2.0) * (ln2 / 2.0);
    const double got = depth_loss(pred, two, torch::ones({1, 2}, torch::kBool)).item<double>();
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
    CHECK(got == doctest::Approx(0.1381).epsilon(1e-3));
}

TEST_CASE("depth_loss matches the scalar oracle over masked batches") {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(8);
    const auto pred = torch::rand({3, 16, 20}, gen, torch::kFloat64) * 30 + 0.5;
    const auto gt = torch::rand({3, 16, 20}, gen, torch::kFloat64) * 30 + 0.5;
    const auto mask = torch::rand({3, 16, 20}, gen) > 0.4;
    double mean = 0.0;
    for (std::int64_t b = 0; b < 3; ++b) {
        mean += oracle::scalar_silog(oracle::to_vector(pred[b]), oracle::to_vector(gt[b]), oracle::to_mask(mask[b]),
                                     0.85) /
                3.0;
    }
    CHECK(depth_loss(pred, gt, mask).item<double>() == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("invalid pixels contribute nothing") {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(9);
    auto pred = torch::rand({32, 32}, gen) * 10 + 1;
    auto gt_dense = torch::rand({32, 32}, gen) * 10 + 1;
    const auto mask = torch::rand({32, 32}, gen) > 0.5;
    const auto gt = torch::where(mask, gt_dense, torch::zeros_like(gt_dense));
    const auto base = depth_loss(pred, gt, mask);
    const auto perturbed = torch::where(mask, pred, torch::rand({32, 32}, gen) * 70 + 0.01);
    CHECK(torch::equal(depth_loss(perturbed, gt, mask), base));
}

TEST_CASE("depth_loss rejects rows without valid pixels and shape mismatches") {
    auto mask = torch::ones({2, 4, 4}, torch::kBool);
    mask[1].fill_(false);
    CHECK_THROWS_AS(depth_loss(torch::ones({2, 4, 4}), torch::ones({2, 4, 4}), mask), DataError);
    CHECK_THROWS_AS(depth_loss(torch::ones({4, 4}), torch::ones({4, 5}), torch::ones({4, 4}, torch::kBool)),
                    ShapeError);
    CHECK_THROWS_AS(depth_loss(torch::ones({4}), torch::ones({4}), torch::ones({4}, torch::kBool)), ShapeError);
}

TEST_CASE("depth_loss gradient w.r.t. pred matches central differences in float64") {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(10);
    auto pred = (torch::rand({2, 6, 7}, gen, torch::kFloat64) * 20 + 0.5).requires_grad_(true);
    const auto gt = torch::rand({2, 6, 7}, gen, torch::kFloat64) * 20 + 0.5;
    const auto mask = torch::rand({2, 6, 7}, gen) > 0.3;
    depth_loss(pred, gt, mask).backward();
    const auto grad = pred.grad().clone();
    auto target = pred.detach().clone();
    double worst = 0.0;
    for (std::int64_t i = 0; i < target.numel(); ++i) {
        const double numeric =
            oracle::central_difference([&] { return depth_loss(target, gt, mask).item<double>(); }, target, i, 1e-6);
        const double analytic = grad.view({-1})[i].item<double>();
        if (!mask.view({-1})[i].item<bool>()) {
            CHECK(analytic == 0.0);
            CHECK(numeric == 0.0);
            continue;
        }
        worst = std::max(worst, std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric)));
    }
    MESSAGE("worst relative gradient error " << worst);
    CHECK(worst < 1e-4);
}
