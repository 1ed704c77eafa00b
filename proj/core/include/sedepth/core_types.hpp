#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sedepth/errors.hpp"
#include "sedepth/kv_config.hpp"

namespace sedepth {

/// Smallest spatial size accepted as model input.
inline constexpr std::int64_t kMinInputSize = 32;

/// RGB image as a float tensor of shape (3, H, W) with values in [0, 1].
struct RgbImage {
    torch::Tensor data;

    std::int64_t height() const { return data.size(1); }
    std::int64_t width() const { return data.size(2); }
};

/// Metric depth map (H, W) in meters. Invalid pixels carry exactly 0 and
/// `valid_mask` is the boolean set of nonzero pixels.
struct DepthMap {
    torch::Tensor data;
    torch::Tensor valid_mask;

    /// Builds a depth map and derives its mask from the nonzero pixels.
    static DepthMap from_depth(torch::Tensor depth);

    std::int64_t height() const { return data.size(0); }
    std::int64_t width() const { return data.size(1); }
};

struct RgbdSample {
    RgbImage image;
    DepthMap depth;
    std::string frame_id;
};

/// Architecture and depth-range settings shared by every model component.
///
/// The defaults are the desk-scale toy model. `full_scale()` raises the
/// semantic encoder to 144 local + 4 global queries of width 768.
struct ModelConfig {
    std::int64_t latent_downsample = 8;
    std::int64_t latent_channels = 4;
    std::int64_t d_sem = 64;
    std::int64_t n_local = 16;
    std::int64_t n_global = 4;
    std::int64_t attention_heads = 4;
    std::int64_t unet_base_channels = 32;
    std::int64_t unet_levels = 3;
    std::int64_t semantic_base_channels = 32;
    std::int64_t semantic_levels = 3;
    std::int64_t semantic_window = 4;
    std::int64_t sa_kernel = 7;
    std::int64_t dc_dilation = 2;
    std::int64_t decoder_channels = 32;
    bool use_dilated_conv = true;
    bool use_spatial_attention = true;
    std::int64_t diffusion_T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::int64_t t_feat = 0;
    double min_depth = 1e-3;
    double max_depth = 80.0;

    static ModelConfig toy() { return {}; }
    static ModelConfig full_scale();

    /// Throws ConfigError naming the first field that breaks an invariant.
    void validate() const;

    /// Required divisor of input H and W: covers the latent stride, the UNet
    /// pyramid on the latent grid, and the semantic backbone pyramid.
    std::int64_t input_stride() const;

    void bind(KvBinder& binder, const std::string& prefix = "model.");
    KvPairs to_kv() const;
    static ModelConfig from_kv(const KvPairs& pairs);
    /// Name of the first field whose value differs, if any.
    std::optional<std::string> first_mismatch(const ModelConfig& other) const;
};

/// Reports every broken invariant of the sample; never throws.
std::vector<std::string> validate_sample(const RgbdSample& sample);

/// Boolean mask that is true exactly where `depth` is nonzero. Throws
/// DataError on non-finite input (a corrupt depth file).
torch::Tensor derive_valid_mask(const torch::Tensor& depth);

}  // namespace sedepth
