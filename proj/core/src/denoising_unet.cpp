#include "sedepth/denoising_unet.hpp"

#include <cmath>
#include <numeric>

namespace sedepth {

namespace F = torch::nn::functional;

NoiseSchedule build_schedule(std::int64_t T, double beta_start, double beta_end) {
    if (T < 1) {
        throw ConfigError("diffusion_T", "must be >= 1");
    }
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw ConfigError("beta_start", "need 0 < beta_start <= beta_end < 1");
    }
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(static_cast<std::size_t>(T));
    s.alpha.resize(s.beta.size());
    s.alpha_bar.resize(s.beta.size());
    double running = 1.0;
    for (std::int64_t t = 0; t < T; ++t) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(T - 1);
        const auto i = static_cast<std::size_t>(t);
        s.beta[i] = beta_start + (beta_end - beta_start) * frac;
        s.alpha[i] = 1.0 - s.beta[i];
        running *= s.alpha[i];
        s.alpha_bar[i] = running;
    }
    return s;
}

NoiseSchedule build_schedule(const ModelConfig& config) {
    return build_schedule(config.diffusion_T, config.beta_start, config.beta_end);
}

torch::Tensor forward_diffuse(const torch::Tensor& z0, const torch::Tensor& eps, double alpha_bar) {
    if (z0.sizes() != eps.sizes()) {
        throw ShapeError("forward_diffuse: eps shape must equal z0 shape");
    }
    return z0 * std::sqrt(alpha_bar) + eps * std::sqrt(1.0 - alpha_bar);
}

namespace {

double alpha_bar_at(const NoiseSchedule& schedule, std::int64_t t) {
    if (t < 0 || t >= schedule.T) {
        throw ShapeError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(schedule.T) + ")");
    }
    return schedule.alpha_bar[static_cast<std::size_t>(t)];
}

}  // namespace

torch::Tensor forward_diffuse(const torch::Tensor& z0, TimestepIndex t, const torch::Tensor& eps,
                              const NoiseSchedule& schedule) {
    return forward_diffuse(z0, eps, alpha_bar_at(schedule, t.t));
}

torch::Tensor forward_diffuse(const torch::Tensor& z0, const std::vector<std::int64_t>& t, const torch::Tensor& eps,
                              const NoiseSchedule& schedule) {
    if (z0.sizes() != eps.sizes()) {
        throw ShapeError("forward_diffuse: eps shape must equal z0 shape");
    }
    if (static_cast<std::int64_t>(t.size()) != z0.size(0)) {
        throw ShapeError("forward_diffuse: one timestep per batch row required");
    }
    std::vector<double> signal;
    std::vector<double> noise;
    for (auto ti : t) {
        const double ab = alpha_bar_at(schedule, ti);
        signal.push_back(std::sqrt(ab));
        noise.push_back(std::sqrt(1.0 - ab));
    }
    std::vector<std::int64_t> shape(static_cast<std::size_t>(z0.dim()), 1);
    shape[0] = z0.size(0);
    auto opts = torch::TensorOptions().dtype(torch::kFloat64);
    auto a = torch::tensor(signal, opts).to(z0.scalar_type()).view(shape);
    auto b = torch::tensor(noise, opts).to(z0.scalar_type()).view(shape);
    return z0 * a + eps * b;
}

std::int64_t norm_groups(std::int64_t channels) { return std::gcd(channels, std::int64_t{8}); }

ResBlockImpl::ResBlockImpl(std::int64_t in_ch, std::int64_t out_ch, std::int64_t temb_dim) {
    norm1_ = register_module("norm1", torch::nn::GroupNorm(norm_groups(in_ch), in_ch));
    conv1_ = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, out_ch, 3).padding(1)));
    temb_proj_ = register_module("temb_proj", torch::nn::Linear(temb_dim, out_ch));
    norm2_ = register_module("norm2", torch::nn::GroupNorm(norm_groups(out_ch), out_ch));
    conv2_ = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(out_ch, out_ch, 3).padding(1)));
    if (in_ch != out_ch) {
        skip_ = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, out_ch, 1)));
    }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
    auto h = conv1_(torch::silu(norm1_(x)));
    h = h + temb_proj_(torch::silu(temb)).unsqueeze(-1).unsqueeze(-1);
    h = conv2_(torch::silu(norm2_(h)));
    return (skip_ ? skip_(x) : x) + h;
}

CrossAttentionBlockImpl::CrossAttentionBlockImpl(std::int64_t channels, std::int64_t context_dim, std::int64_t heads) {
    norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));
    attn_ = register_module("attn", MultiHeadAttention(channels, context_dim, heads));
}

torch::Tensor CrossAttentionBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& context) {
    const auto b = x.size(0);
    const auto c = x.size(1);
    const auto h = x.size(2);
    const auto w = x.size(3);
    auto tokens = x.flatten(2).transpose(1, 2);  // (B, hw, C)
    tokens = tokens + attn_(norm_(tokens), context);
    return tokens.transpose(1, 2).reshape({b, c, h, w});
}

std::vector<std::int64_t> UNetImpl::level_channels(const ModelConfig& config) {
    std::vector<std::int64_t> ch;
    for (std::int64_t i = 0; i < config.unet_levels; ++i) {
        ch.push_back(i == 0 ? config.unet_base_channels : 2 * config.unet_base_channels);
    }
    return ch;
}

UNetImpl::UNetImpl(const ModelConfig& config)
    : levels_(config.unet_levels), base_(config.unet_base_channels), channels_(level_channels(config)) {
    const auto temb_dim = 2 * base_;
    const auto heads = config.attention_heads;
    time_fc1_ = register_module("time_fc1", torch::nn::Linear(base_, temb_dim));
    time_fc2_ = register_module("time_fc2", torch::nn::Linear(temb_dim, temb_dim));
    in_conv_ = register_module("in_conv",
                               torch::nn::Conv2d(torch::nn::Conv2dOptions(config.latent_channels, channels_[0], 3).padding(1)));

    std::int64_t prev = channels_[0];
    for (std::int64_t i = 0; i < levels_; ++i) {
        const auto ch = channels_[static_cast<std::size_t>(i)];
        const auto tag = std::to_string(i);
        down_res_.push_back(register_module("down_res" + tag, ResBlock(prev, ch, temb_dim)));
        down_attn_.push_back(register_module("down_attn" + tag, CrossAttentionBlock(ch, config.d_sem, heads)));
        if (i + 1 < levels_) {
            downsample_.push_back(register_module(
                "downsample" + tag, torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, ch, 3).stride(2).padding(1))));
        }
        prev = ch;
    }
    mid_res_ = register_module("mid_res", ResBlock(prev, prev, temb_dim));
    mid_attn_ = register_module("mid_attn", CrossAttentionBlock(prev, config.d_sem, heads));

    // Up path stored coarsest first.
    for (std::int64_t i = levels_ - 1; i >= 0; --i) {
        const auto ch = channels_[static_cast<std::size_t>(i)];
        const auto tag = std::to_string(i);
        up_res_.push_back(register_module("up_res" + tag, ResBlock(prev + ch, ch, temb_dim)));
        up_attn_.push_back(register_module("up_attn" + tag, CrossAttentionBlock(ch, config.d_sem, heads)));
        if (i > 0) {
            upsample_.push_back(register_module("upsample" + tag,
                                                torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, ch, 3).padding(1))));
        }
        prev = ch;
    }
    out_norm_ = register_module("out_norm", torch::nn::GroupNorm(norm_groups(channels_[0]), channels_[0]));
    out_conv_ = register_module(
        "out_conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels_[0], config.latent_channels, 3).padding(1)));
}

std::vector<std::int64_t> UNetImpl::feature_channels() const { return {channels_.rbegin(), channels_.rend()}; }

UNetOutput UNetImpl::forward(const torch::Tensor& z_t, const torch::Tensor& t, const torch::Tensor& s) {
    const std::int64_t divisor = std::int64_t{1} << (levels_ - 1);
    if (z_t.dim() != 4 || z_t.size(2) % divisor != 0 || z_t.size(3) % divisor != 0) {
        throw ShapeError("UNet input spatial dims must be divisible by " + std::to_string(divisor));
    }
    if (t.dim() != 1 || t.size(0) != z_t.size(0) || s.dim() != 3 || s.size(0) != z_t.size(0)) {
        throw ShapeError("UNet expects one timestep and one embedding per batch row");
    }
    auto temb = sinusoidal_embedding(t.to(z_t.scalar_type()), base_);
    temb = time_fc2_(torch::silu(time_fc1_(temb)));

    auto h = in_conv_(z_t);
    std::vector<torch::Tensor> skips;
    for (std::int64_t i = 0; i < levels_; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        h = down_attn_[idx](down_res_[idx](h, temb), s);
        skips.push_back(h);
        if (i + 1 < levels_) {
            h = downsample_[idx](h);
        }
    }
    h = mid_attn_(mid_res_(h, temb), s);

    UNetOutput out;
    for (std::int64_t j = 0; j < levels_; ++j) {
        const auto idx = static_cast<std::size_t>(j);
        const auto level = static_cast<std::size_t>(levels_ - 1 - j);
        h = up_res_[idx](torch::cat({h, skips[level]}, 1), temb);
        h = up_attn_[idx](h, s);
        out.features.levels.push_back(h);
        if (level > 0) {
            h = F::interpolate(h, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
            h = upsample_[idx](h);
        }
    }
    out.eps_pred = out_conv_(torch::silu(out_norm_(h)));
    return out;
}

UNetOutput unet_forward(UNet& unet, const torch::Tensor& z_t, TimestepIndex t, const SemanticEmbedding& s,
                        const ModelConfig& config) {
    if (t.t < 0 || t.t >= config.diffusion_T) {
        throw ShapeError("timestep " + std::to_string(t.t) + " outside [0, " + std::to_string(config.diffusion_T) + ")");
    }
    auto batched = z_t.dim() == 3 ? z_t.unsqueeze(0) : z_t;
    if (batched.size(1) != config.latent_channels) {
        throw ShapeError("UNet expects " + std::to_string(config.latent_channels) + " latent channels");
    }
    auto ts = torch::full({batched.size(0)}, static_cast<double>(t.t), batched.options());
    auto out = unet(batched, ts, s.data.to(batched.scalar_type()));
    if (z_t.dim() == 3) {
        out.eps_pred = out.eps_pred.squeeze(0);
    }
    return out;
}

torch::Tensor diffusion_loss(const torch::Tensor& eps, const torch::Tensor& eps_pred) {
    if (eps.sizes() != eps_pred.sizes()) {
        throw ShapeError("diffusion_loss: eps and eps_pred shapes differ");
    }
    return (eps - eps_pred).pow(2).mean();
}

UNetFeatureMaps extract_features_for_depth(UNet& unet, const torch::Tensor& z0, const SemanticEmbedding& s,
                                           const NoiseSchedule& schedule, TimestepIndex t_feat) {
    auto z = forward_diffuse(z0, t_feat, torch::zeros_like(z0), schedule);
    auto batched = z.dim() == 3 ? z.unsqueeze(0) : z;
    auto ts = torch::full({batched.size(0)}, static_cast<double>(t_feat.t), batched.options());
    return unet(batched, ts, s.data.to(batched.scalar_type())).features;
}

}  // namespace sedepth
