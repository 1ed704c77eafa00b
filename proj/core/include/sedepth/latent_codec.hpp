#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <utility>

#include "sedepth/core_types.hpp"

namespace sedepth {

/// Compressed latent z of one image: (C_lat, H/f, W/f).
struct LatentTensor {
    torch::Tensor data;
    std::int64_t downsample_factor = 8;
    std::pair<std::int64_t, std::int64_t> source_hw{0, 0};
};

/// Frozen stand-in for a pretrained VAE encoder: log2(f) stride-2 3x3
/// convolutions with SiLU, then a 1x1 projection to C_lat channels. Returns
/// the distribution mean only, with no latent scaling constant.
class LatentEncoderImpl : public torch::nn::Module {
public:
    explicit LatentEncoderImpl(const ModelConfig& config);

    /// (B, 3, H, W) in [-1, 1] -> (B, C_lat, H/f, W/f).
    torch::Tensor forward(const torch::Tensor& x);

    std::int64_t downsample_factor() const { return factor_; }

    /// Width of the i-th strided layer.
    static std::int64_t stage_width(std::int64_t i) { return std::min<std::int64_t>(std::int64_t{16} << i, 64); }

private:
    std::int64_t factor_;
    torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(LatentEncoder);

/// Encoder weights plus the digest and seed that identify them.
struct FrozenWeights {
    LatentEncoder encoder{nullptr};
    std::string digest;
    std::uint64_t seed = 0;

    /// Raw parameter bytes in registration order.
    std::string blob() const;
    std::string recompute_digest() const;
    bool verify() const { return recompute_digest() == digest; }
};

/// Deterministic construction: the same seed and config give the same digest.
/// Parameters are created with requires_grad = false.
FrozenWeights init_frozen_encoder(std::uint64_t seed, const ModelConfig& config);

/// Throws ShapeError when H or W is not divisible by the downsample factor;
/// the caller is expected to pad or crop first.
LatentTensor encode_latent(const RgbImage& image, const FrozenWeights& weights);

/// Batched form on already-normalized input. Runs without autograd.
torch::Tensor encode_latent_batch(const torch::Tensor& normalized, const FrozenWeights& weights);

}  // namespace sedepth
