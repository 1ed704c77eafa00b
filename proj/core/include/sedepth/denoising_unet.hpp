#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "sedepth/core_types.hpp"
#include "sedepth/latent_codec.hpp"
#include "sedepth/nn_common.hpp"
#include "sedepth/semantic_encoder.hpp"

namespace sedepth {

/// Per-timestep beta_t, alpha_t = 1 - beta_t and alpha_bar_t = prod_{i<=t} alpha_i.
struct NoiseSchedule {
    std::int64_t T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
};

/// Index into a NoiseSchedule.
struct TimestepIndex {
    std::int64_t t = 0;
};

/// Linear beta from beta_start to beta_end. Throws ConfigError on bad bounds.
NoiseSchedule build_schedule(std::int64_t T, double beta_start, double beta_end);
NoiseSchedule build_schedule(const ModelConfig& config);

/// z_t = sqrt(alpha_bar) z0 + sqrt(1 - alpha_bar) eps.
torch::Tensor forward_diffuse(const torch::Tensor& z0, const torch::Tensor& eps, double alpha_bar);
torch::Tensor forward_diffuse(const torch::Tensor& z0, TimestepIndex t, const torch::Tensor& eps,
                              const NoiseSchedule& schedule);
/// Batched: z0 and eps are (B, ...), one timestep per batch row.
torch::Tensor forward_diffuse(const torch::Tensor& z0, const std::vector<std::int64_t>& t, const torch::Tensor& eps,
                              const NoiseSchedule& schedule);

/// Decoder-path activations of the UNet, coarsest first and finest last.
struct UNetFeatureMaps {
    std::vector<torch::Tensor> levels;
};

struct UNetOutput {
    torch::Tensor eps_pred;
    UNetFeatureMaps features;
};

class ResBlockImpl : public torch::nn::Module {
public:
    ResBlockImpl(std::int64_t in_ch, std::int64_t out_ch, std::int64_t temb_dim);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb);

private:
    torch::nn::GroupNorm norm1_{nullptr};
    torch::nn::Conv2d conv1_{nullptr};
    torch::nn::Linear temb_proj_{nullptr};
    torch::nn::GroupNorm norm2_{nullptr};
    torch::nn::Conv2d conv2_{nullptr};
    torch::nn::Conv2d skip_{nullptr};
};
TORCH_MODULE(ResBlock);

/// Pre-norm residual cross-attention: spatial positions query the semantic
/// sequence.
class CrossAttentionBlockImpl : public torch::nn::Module {
public:
    CrossAttentionBlockImpl(std::int64_t channels, std::int64_t context_dim, std::int64_t heads);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context);

private:
    torch::nn::LayerNorm norm_{nullptr};
    MultiHeadAttention attn_{nullptr};
};
TORCH_MODULE(CrossAttentionBlock);

/// Encoder-decoder UNet over the latent grid with skip connections,
/// sinusoidal timestep conditioning in every residual block, and cross
/// attention on the semantic embedding at every resolution of both paths.
class UNetImpl : public torch::nn::Module {
public:
    explicit UNetImpl(const ModelConfig& config);

    /// z_t: (B, C_lat, h, w); t: (B) timestep indices; s: (B, n, d_sem).
    UNetOutput forward(const torch::Tensor& z_t, const torch::Tensor& t, const torch::Tensor& s);

    /// Channel count of each decoder level, coarsest first.
    std::vector<std::int64_t> feature_channels() const;
    static std::vector<std::int64_t> level_channels(const ModelConfig& config);

private:
    std::int64_t levels_;
    std::int64_t base_;
    std::vector<std::int64_t> channels_;
    torch::nn::Linear time_fc1_{nullptr};
    torch::nn::Linear time_fc2_{nullptr};
    torch::nn::Conv2d in_conv_{nullptr};
    std::vector<ResBlock> down_res_;
    std::vector<CrossAttentionBlock> down_attn_;
    std::vector<torch::nn::Conv2d> downsample_;
    ResBlock mid_res_{nullptr};
    CrossAttentionBlock mid_attn_{nullptr};
    std::vector<ResBlock> up_res_;
    std::vector<CrossAttentionBlock> up_attn_;
    std::vector<torch::nn::Conv2d> upsample_;
    torch::nn::GroupNorm out_norm_{nullptr};
    torch::nn::Conv2d out_conv_{nullptr};
};
TORCH_MODULE(UNet);

/// Shape-checked single forward pass.
UNetOutput unet_forward(UNet& unet, const torch::Tensor& z_t, TimestepIndex t, const SemanticEmbedding& s,
                        const ModelConfig& config);

/// Mean over all elements of (eps - eps_pred)^2.
torch::Tensor diffusion_loss(const torch::Tensor& eps, const torch::Tensor& eps_pred);

/// One noise-free UNet pass at the configured feature timestep; returns the
/// decoder features only.
UNetFeatureMaps extract_features_for_depth(UNet& unet, const torch::Tensor& z0, const SemanticEmbedding& s,
                                           const NoiseSchedule& schedule, TimestepIndex t_feat);

/// GroupNorm group count used for a channel width.
std::int64_t norm_groups(std::int64_t channels);

}  // namespace sedepth
