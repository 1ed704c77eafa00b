#include "sedepth/pipeline.hpp"

#include "sedepth/data_pipeline.hpp"
#include "sedepth/nn_common.hpp"

namespace sedepth {

DepthModelImpl::DepthModelImpl(const ModelConfig& config, std::uint64_t seed)
    : config_(config), schedule_(build_schedule(config)) {
    config_.validate();
    frozen_ = init_frozen_encoder(derive_seed(seed, "latent"), config_);
    register_module("latent", frozen_.encoder);
    semantic = register_module("semantic", SemanticEncoder(config_));
    unet = register_module("unet", UNet(config_));
    decoder = register_module("decoder", DepthDecoder(config_));
    init_parameters(*semantic, derive_seed(seed, "semantic"));
    init_parameters(*unet, derive_seed(seed, "unet"));
    init_parameters(*decoder, derive_seed(seed, "decoder"));
}

void DepthModelImpl::check_input(const torch::Tensor& rgb) const {
    if (rgb.dim() != 4 || rgb.size(1) != 3) {
        throw ShapeError("model input must be (B, 3, H, W)");
    }
    const auto stride = config_.input_stride();
    if (rgb.size(2) % stride != 0 || rgb.size(3) % stride != 0) {
        throw ShapeError("model input " + std::to_string(rgb.size(2)) + "x" + std::to_string(rgb.size(3)) +
                         " must be divisible by " + std::to_string(stride));
    }
}

TrainForward DepthModelImpl::forward_train(const torch::Tensor& rgb, std::optional<torch::Generator> noise) {
    check_input(rgb);
    const auto dtype = unet->parameters().front().scalar_type();
    auto x = normalize_rgb(rgb).to(dtype);
    auto z0 = encode_latent_batch(x, frozen_);
    auto s = semantic(x);

    TrainForward out;
    if (noise) {
        const auto batch = z0.size(0);
        auto t = torch::randint(0, config_.diffusion_T, {batch}, *noise, torch::kLong);
        out.eps = torch::randn(z0.sizes(), *noise, z0.options());
        std::vector<std::int64_t> ts(t.data_ptr<std::int64_t>(), t.data_ptr<std::int64_t>() + batch);
        auto z_t = forward_diffuse(z0, ts, out.eps, schedule_);
        auto res = unet(z_t, t.to(dtype), s.data);
        out.eps_pred = res.eps_pred;
        out.depth = decoder(res.features);
    } else {
        auto features = extract_features_for_depth(unet, z0, s, schedule_, TimestepIndex{config_.t_feat});
        out.depth = decoder(features);
    }
    return out;
}

torch::Tensor DepthModelImpl::forward(const torch::Tensor& rgb) { return forward_train(rgb).depth; }

torch::Tensor DepthModelImpl::predict(const torch::Tensor& image) {
    if (image.dim() != 3 || image.size(0) != 3) {
        throw ShapeError("predict expects a (3, H, W) image");
    }
    const auto h = image.size(1);
    const auto w = image.size(2);
    if (h < kMinInputSize || w < kMinInputSize) {
        throw ShapeError("image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than " +
                         std::to_string(kMinInputSize) + " pixels per side");
    }
    torch::NoGradGuard no_grad;
    auto padded = pad_to_multiple(image, config_.input_stride());
    auto depth = forward(padded.unsqueeze(0)).squeeze(0);
    return depth.slice(0, 0, h).slice(1, 0, w).to(torch::kFloat32).contiguous();
}

}  // namespace sedepth
