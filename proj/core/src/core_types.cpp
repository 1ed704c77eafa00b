#include "sedepth/core_types.hpp"

#include <numeric>

namespace sedepth {

namespace {

bool is_power_of_two(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

DepthMap DepthMap::from_depth(torch::Tensor depth) {
    auto mask = derive_valid_mask(depth);
    return DepthMap{std::move(depth), std::move(mask)};
}

ModelConfig ModelConfig::full_scale() {
    ModelConfig cfg;
    cfg.d_sem = 768;
    cfg.n_local = 144;
    cfg.n_global = 4;
    cfg.attention_heads = 8;
    return cfg;
}

void ModelConfig::validate() const {
    auto require = [](bool ok, const char* field, const char* rule) {
        if (!ok) {
            throw ConfigError(std::string("model.") + field, rule);
        }
    };
    require(is_power_of_two(latent_downsample) && latent_downsample >= 2, "latent_downsample", "must be a power of 2 >= 2");
    require(latent_channels > 0, "latent_channels", "must be > 0");
    require(n_local > 0, "n_local", "must be > 0");
    require(n_global > 0, "n_global", "must be > 0");
    require(attention_heads > 0, "attention_heads", "must be > 0");
    require(d_sem > 0 && d_sem % attention_heads == 0, "d_sem", "must be divisible by attention_heads");
    require(unet_levels >= 1, "unet_levels", "must be >= 1");
    require(unet_base_channels > 0 && unet_base_channels % attention_heads == 0, "unet_base_channels",
            "must be divisible by attention_heads");
    require(semantic_levels >= 2, "semantic_levels", "must be >= 2");
    require(semantic_base_channels > 0 && semantic_base_channels % 2 == 0, "semantic_base_channels",
            "must be a positive even number");
    require(semantic_window >= 1, "semantic_window", "must be >= 1");
    require(sa_kernel >= 1 && sa_kernel % 2 == 1, "sa_kernel", "must be odd");
    require(dc_dilation >= 1, "dc_dilation", "must be >= 1");
    require(decoder_channels > 0, "decoder_channels", "must be > 0");
    require(diffusion_T >= 1, "diffusion_T", "must be >= 1");
    require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, "beta_start",
            "need 0 < beta_start <= beta_end < 1");
    require(t_feat >= 0 && t_feat < diffusion_T, "t_feat", "must lie in [0, diffusion_T)");
    require(min_depth > 0.0, "min_depth", "must be > 0");
    require(max_depth > min_depth, "max_depth", "must exceed min_depth");
}

std::int64_t ModelConfig::input_stride() const {
    const std::int64_t unet = latent_downsample * (std::int64_t{1} << (unet_levels - 1));
    const std::int64_t backbone = std::int64_t{1} << (semantic_levels + 1);
    return std::lcm(unet, backbone);
}

void ModelConfig::bind(KvBinder& b, const std::string& p) {
    b.bind(p + "latent_downsample", latent_downsample);
    b.bind(p + "latent_channels", latent_channels);
    b.bind(p + "d_sem", d_sem);
    b.bind(p + "n_local", n_local);
    b.bind(p + "n_global", n_global);
    b.bind(p + "attention_heads", attention_heads);
    b.bind(p + "unet_base_channels", unet_base_channels);
    b.bind(p + "unet_levels", unet_levels);
    b.bind(p + "semantic_base_channels", semantic_base_channels);
    b.bind(p + "semantic_levels", semantic_levels);
    b.bind(p + "semantic_window", semantic_window);
    b.bind(p + "sa_kernel", sa_kernel);
    b.bind(p + "dc_dilation", dc_dilation);
    b.bind(p + "decoder_channels", decoder_channels);
    b.bind(p + "use_dilated_conv", use_dilated_conv);
    b.bind(p + "use_spatial_attention", use_spatial_attention);
    b.bind(p + "diffusion_T", diffusion_T);
    b.bind(p + "beta_start", beta_start);
    b.bind(p + "beta_end", beta_end);
    b.bind(p + "t_feat", t_feat);
    b.bind(p + "min_depth", min_depth);
    b.bind(p + "max_depth", max_depth);
}

KvPairs ModelConfig::to_kv() const {
    ModelConfig copy = *this;
    KvBinder b;
    copy.bind(b);
    return b.dump();
}

ModelConfig ModelConfig::from_kv(const KvPairs& pairs) {
    ModelConfig cfg;
    KvBinder b;
    cfg.bind(b);
    b.apply(pairs);
    return cfg;
}

std::optional<std::string> ModelConfig::first_mismatch(const ModelConfig& other) const {
    const auto mine = to_kv();
    const auto theirs = other.to_kv();
    for (std::size_t i = 0; i < mine.size(); ++i) {
        if (mine[i].second != theirs[i].second) {
            return mine[i].first;
        }
    }
    return std::nullopt;
}

std::vector<std::string> validate_sample(const RgbdSample& sample) {
    std::vector<std::string> out;
    const auto& img = sample.image.data;
    const auto& depth = sample.depth.data;
    const auto& mask = sample.depth.valid_mask;

    bool image_ok = img.defined() && img.dim() == 3 && img.size(0) == 3;
    if (!image_ok) {
        out.emplace_back("image.data: must be a (3, H, W) tensor");
    } else {
        if (!torch::isfinite(img).all().item<bool>()) {
            out.emplace_back("image.data: all values finite");
        } else if (img.numel() > 0 && (img.min().item<double>() < 0.0 || img.max().item<double>() > 1.0)) {
            out.emplace_back("image.data: values within [0, 1]");
        }
        if (img.size(1) < kMinInputSize || img.size(2) < kMinInputSize) {
            out.emplace_back("image: H >= 32 and W >= 32");
        }
    }

    const bool depth_ok = depth.defined() && depth.dim() == 2;
    if (!depth_ok) {
        out.emplace_back("depth.data: must be an (H, W) tensor");
        return out;
    }
    if (image_ok && (img.size(1) != depth.size(0) || img.size(2) != depth.size(1))) {
        out.emplace_back("shape mismatch: image " + std::to_string(img.size(1)) + "x" + std::to_string(img.size(2)) +
                         " vs depth " + std::to_string(depth.size(0)) + "x" + std::to_string(depth.size(1)));
    }
    if (!mask.defined() || mask.sizes() != depth.sizes() || mask.scalar_type() != torch::kBool) {
        out.emplace_back("depth.valid_mask: boolean tensor with the depth shape");
        return out;
    }
    if (!torch::isfinite(depth).all().item<bool>()) {
        out.emplace_back("depth.data: all values finite");
        return out;
    }
    if ((depth.masked_select(mask) <= 0).any().item<bool>()) {
        out.emplace_back("depth.data: depth > 0 on valid pixels");
    }
    if ((depth.masked_select(mask.logical_not()) != 0).any().item<bool>()) {
        out.emplace_back("depth.data: invalid pixels carry exactly 0");
    }
    if (!torch::equal(mask, depth != 0)) {
        out.emplace_back("depth.valid_mask: equals the set of nonzero depth pixels");
    }
    return out;
}

torch::Tensor derive_valid_mask(const torch::Tensor& depth) {
    if (!torch::isfinite(depth).all().item<bool>()) {
        throw DataError("corrupt depth data: non-finite values present");
    }
    return depth != 0;
}

}  // namespace sedepth
