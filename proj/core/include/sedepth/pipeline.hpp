#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <optional>

#include "sedepth/core_types.hpp"
#include "sedepth/denoising_unet.hpp"
#include "sedepth/depth_decoder.hpp"
#include "sedepth/latent_codec.hpp"
#include "sedepth/semantic_encoder.hpp"

namespace sedepth {

/// Activations of one training forward pass. `eps` and `eps_pred` are
/// undefined on the noise-free feature path.
struct TrainForward {
    torch::Tensor depth;
    torch::Tensor eps;
    torch::Tensor eps_pred;
};

/// Frozen latent encoder, semantic encoder, denoising UNet and depth decoder
/// registered as "latent", "semantic", "unet" and "decoder".
class DepthModelImpl : public torch::nn::Module {
public:
    DepthModelImpl(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    const NoiseSchedule& schedule() const { return schedule_; }
    FrozenWeights& frozen() { return frozen_; }
    const FrozenWeights& frozen() const { return frozen_; }

    /// rgb: (B, 3, H, W) in [0, 1], H and W divisible by input_stride().
    /// With a generator, every row gets a uniform timestep and fresh noise;
    /// without one the UNet runs noise-free at t_feat.
    TrainForward forward_train(const torch::Tensor& rgb, std::optional<torch::Generator> noise = std::nullopt);

    /// Noise-free inference: (B, 3, H, W) -> (B, H, W).
    torch::Tensor forward(const torch::Tensor& rgb);

    /// Any (3, H, W) of at least kMinInputSize per side: replicate-pads to the
    /// input stride, predicts without autograd and crops back to (H, W).
    torch::Tensor predict(const torch::Tensor& image);

    SemanticEncoder semantic{nullptr};
    UNet unet{nullptr};
    DepthDecoder decoder{nullptr};

private:
    ModelConfig config_;
    NoiseSchedule schedule_;
    FrozenWeights frozen_;

    void check_input(const torch::Tensor& rgb) const;
};
TORCH_MODULE(DepthModel);

}  // namespace sedepth
