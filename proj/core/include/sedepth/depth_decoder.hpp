#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "sedepth/core_types.hpp"
#include "sedepth/denoising_unet.hpp"

namespace sedepth {

/// Metric depth (B, H, W) or (H, W), every value in [min_depth, max_depth].
struct DepthPrediction {
    torch::Tensor data;
};

/// Coarse-to-fine refinement of UNet features (stride-2 deconvolution, conv
/// block, add after 1x1 projection of the next finer map), then log2(f)
/// stages of x2 bilinear upsampling with a conv each, then a 1-channel
/// sigmoid head scaled to [min_depth, max_depth].
class DepthDecoderImpl : public torch::nn::Module {
public:
    explicit DepthDecoderImpl(const ModelConfig& config);

    /// Returns (B, H, W) metric depth.
    torch::Tensor forward(const UNetFeatureMaps& features);

private:
    std::vector<std::int64_t> feature_channels_;
    std::int64_t latent_hw_divisor_;
    double min_depth_;
    double max_depth_;
    torch::nn::Conv2d in_proj_{nullptr};
    std::vector<torch::nn::ConvTranspose2d> deconv_;
    std::vector<torch::nn::Conv2d> refine_;
    std::vector<torch::nn::Conv2d> lateral_;
    std::vector<torch::nn::Conv2d> upconv_;
    torch::nn::Conv2d head_{nullptr};

    void check(const UNetFeatureMaps& features) const;
};
TORCH_MODULE(DepthDecoder);

/// Throws ShapeError when the pyramid does not match the config's UNet schedule.
DepthPrediction decode_depth(const UNetFeatureMaps& features, DepthDecoder& decoder);

inline constexpr double kSilogLambda = 0.85;

/// Scale-invariant log loss over valid pixels: with g = log pred - log gt,
/// mean(g^2) - lambda * mean(g)^2, averaged over batch rows. Throws DataError
/// when a row has no valid pixel.
torch::Tensor depth_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask,
                         double lambda = kSilogLambda);
torch::Tensor depth_loss(const DepthPrediction& pred, const DepthMap& gt, double lambda = kSilogLambda);

}  // namespace sedepth
