#include "sedepth/depth_decoder.hpp"

namespace sedepth {

namespace F = torch::nn::functional;

DepthDecoderImpl::DepthDecoderImpl(const ModelConfig& config)
    : feature_channels_(UNetImpl::level_channels(config)),
      latent_hw_divisor_(config.latent_downsample),
      min_depth_(config.min_depth),
      max_depth_(config.max_depth) {
    std::reverse(feature_channels_.begin(), feature_channels_.end());  // coarsest first
    const auto d = config.decoder_channels;
    in_proj_ = register_module("in_proj", torch::nn::Conv2d(torch::nn::Conv2dOptions(feature_channels_[0], d, 1)));
    for (std::size_t k = 1; k < feature_channels_.size(); ++k) {
        const auto tag = std::to_string(k);
        deconv_.push_back(register_module(
            "deconv" + tag, torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(d, d, 4).stride(2).padding(1))));
        refine_.push_back(
            register_module("refine" + tag, torch::nn::Conv2d(torch::nn::Conv2dOptions(d, d, 3).padding(1))));
        lateral_.push_back(register_module(
            "lateral" + tag, torch::nn::Conv2d(torch::nn::Conv2dOptions(feature_channels_[k], d, 1))));
    }
    std::int64_t ch = d;
    std::int64_t k = 0;
    for (std::int64_t f = latent_hw_divisor_; f > 1; f /= 2, ++k) {
        const auto next = std::max<std::int64_t>(ch / 2, 8);
        upconv_.push_back(register_module("upconv" + std::to_string(k),
                                          torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, next, 3).padding(1))));
        ch = next;
    }
    head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, 1, 3).padding(1)));
}

void DepthDecoderImpl::check(const UNetFeatureMaps& features) const {
    if (features.levels.size() != feature_channels_.size()) {
        throw ShapeError("depth decoder expects " + std::to_string(feature_channels_.size()) + " feature levels, got " +
                         std::to_string(features.levels.size()));
    }
    for (std::size_t k = 0; k < features.levels.size(); ++k) {
        const auto& lvl = features.levels[k];
        if (lvl.dim() != 4 || lvl.size(1) != feature_channels_[k]) {
            throw ShapeError("depth decoder level " + std::to_string(k) + " must have " +
                             std::to_string(feature_channels_[k]) + " channels");
        }
        if (k > 0) {
            const auto& coarse = features.levels[k - 1];
            if (lvl.size(2) != 2 * coarse.size(2) || lvl.size(3) != 2 * coarse.size(3)) {
                throw ShapeError("depth decoder level " + std::to_string(k) + " must double the previous resolution");
            }
        }
    }
}

torch::Tensor DepthDecoderImpl::forward(const UNetFeatureMaps& features) {
    check(features);
    auto x = in_proj_(features.levels[0]);
    for (std::size_t k = 1; k < features.levels.size(); ++k) {
        x = deconv_[k - 1](x);
        x = torch::silu(refine_[k - 1](x));
        x = x + lateral_[k - 1](features.levels[k]);
    }
    for (auto& conv : upconv_) {
        x = F::interpolate(x, F::InterpolateFuncOptions()
                                  .scale_factor(std::vector<double>{2.0, 2.0})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
        x = torch::silu(conv(x));
    }
    auto depth = min_depth_ + (max_depth_ - min_depth_) * torch::sigmoid(head_(x));
    return depth.clamp(min_depth_, max_depth_).squeeze(1);
}

DepthPrediction decode_depth(const UNetFeatureMaps& features, DepthDecoder& decoder) {
    return DepthPrediction{decoder(features)};
}

torch::Tensor depth_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask, double lambda) {
    if (pred.sizes() != gt.sizes() || gt.sizes() != mask.sizes()) {
        throw ShapeError("depth_loss: pred, gt and mask shapes must match");
    }
    if (pred.dim() != 2 && pred.dim() != 3) {
        throw ShapeError("depth_loss expects (H, W) or (B, H, W) tensors");
    }
    auto p = pred.dim() == 2 ? pred.unsqueeze(0) : pred;
    auto g_t = gt.dim() == 2 ? gt.unsqueeze(0) : gt;
    auto m = mask.dim() == 2 ? mask.unsqueeze(0) : mask;

    auto maskf = m.to(p.scalar_type());
    auto counts = maskf.flatten(1).sum(1);
    if ((counts == 0).any().item<bool>()) {
        throw DataError("depth_loss: sample has no valid ground-truth pixel");
    }
    auto safe_gt = torch::where(m, g_t.to(p.scalar_type()), torch::ones_like(p));
    auto g = (torch::log(p) - torch::log(safe_gt)) * maskf;
    auto mean_g = g.flatten(1).sum(1) / counts;
    auto mean_g2 = g.pow(2).flatten(1).sum(1) / counts;
    return (mean_g2 - lambda * mean_g.pow(2)).mean();
}

torch::Tensor depth_loss(const DepthPrediction& pred, const DepthMap& gt, double lambda) {
    return depth_loss(pred.data, gt.data, gt.valid_mask, lambda);
}

}  // namespace sedepth
