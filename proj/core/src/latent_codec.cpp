#include "sedepth/latent_codec.hpp"

#include "sedepth/data_pipeline.hpp"
#include "sedepth/nn_common.hpp"

namespace sedepth {

LatentEncoderImpl::LatentEncoderImpl(const ModelConfig& config) : factor_(config.latent_downsample) {
    body_ = torch::nn::Sequential();
    std::int64_t in_ch = 3;
    std::int64_t i = 0;
    for (std::int64_t f = factor_; f > 1; f /= 2, ++i) {
        const auto out_ch = stage_width(i);
        body_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, out_ch, 3).stride(2).padding(1)));
        body_->push_back(torch::nn::SiLU());
        in_ch = out_ch;
    }
    body_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, config.latent_channels, 1)));
    register_module("body", body_);
}

torch::Tensor LatentEncoderImpl::forward(const torch::Tensor& x) {
    if (x.size(2) % factor_ != 0 || x.size(3) % factor_ != 0) {
        throw ShapeError("latent encoder input " + std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)) +
                         " is not divisible by downsample factor " + std::to_string(factor_) +
                         "; pad or crop the image first");
    }
    return body_->forward(x);
}

std::string FrozenWeights::blob() const {
    std::string out;
    for (const auto& p : encoder->parameters(true)) {
        auto flat = p.detach().contiguous();
        out.append(static_cast<const char*>(flat.data_ptr()), static_cast<std::size_t>(flat.nbytes()));
    }
    return out;
}

std::string FrozenWeights::recompute_digest() const { return parameter_digest(*encoder); }

FrozenWeights init_frozen_encoder(std::uint64_t seed, const ModelConfig& config) {
    config.validate();
    FrozenWeights w;
    w.encoder = LatentEncoder(config);
    init_parameters(*w.encoder, seed);
    for (auto& p : w.encoder->parameters(true)) {
        p.set_requires_grad(false);
    }
    w.encoder->eval();
    w.seed = seed;
    w.digest = w.recompute_digest();
    return w;
}

torch::Tensor encode_latent_batch(const torch::Tensor& normalized, const FrozenWeights& weights) {
    torch::NoGradGuard no_grad;
    auto encoder = weights.encoder;
    const auto dtype = encoder->parameters().front().scalar_type();
    return encoder->forward(normalized.to(dtype));
}

LatentTensor encode_latent(const RgbImage& image, const FrozenWeights& weights) {
    const auto f = weights.encoder->downsample_factor();
    if (image.height() % f != 0 || image.width() % f != 0) {
        throw ShapeError("image " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                         " is not divisible by downsample factor " + std::to_string(f) +
                         "; pad or crop the image first");
    }
    auto x = normalize_rgb(image.data).unsqueeze(0);
    auto z = encode_latent_batch(x, weights).squeeze(0);
    return LatentTensor{z, f, {image.height(), image.width()}};
}

}  // namespace sedepth
