#include "sedepth/semantic_encoder.hpp"

#include "sedepth/data_pipeline.hpp"

namespace sedepth {

namespace F = torch::nn::functional;

SpatialAttentionImpl::SpatialAttentionImpl(std::int64_t kernel_size) {
    conv_ = register_module(
        "zero_conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(2, 1, kernel_size).padding(kernel_size / 2)));
}

torch::Tensor SpatialAttentionImpl::attention_map(const torch::Tensor& x) {
    auto avg = x.mean(1, /*keepdim=*/true);
    auto mx = std::get<0>(x.max(1, /*keepdim=*/true));
    return torch::sigmoid(conv_(torch::cat({avg, mx}, 1)));
}

torch::Tensor SpatialAttentionImpl::forward(const torch::Tensor& x) { return x * (attention_map(x) * 2.0); }

DilatedEnhanceImpl::DilatedEnhanceImpl(std::int64_t channels, std::int64_t dilation) {
    conv_ = register_module(
        "zero_conv",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).dilation(dilation).padding(dilation)));
}

torch::Tensor DilatedEnhanceImpl::forward(const torch::Tensor& x) { return x + conv_(x); }

WindowAttentionBlockImpl::WindowAttentionBlockImpl(std::int64_t dim, std::int64_t heads, std::int64_t window)
    : window_(window) {
    norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    attn_ = register_module("attn", MultiHeadAttention(dim, dim, heads));
    norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    ffn_ = register_module("ffn", FeedForward(dim, 2));
}

torch::Tensor WindowAttentionBlockImpl::forward(const torch::Tensor& x) {
    const auto b = x.size(0);
    const auto c = x.size(1);
    const auto h = x.size(2);
    const auto w = x.size(3);
    const auto ws = window_;
    const auto hp = (h + ws - 1) / ws * ws;
    const auto wp = (w + ws - 1) / ws * ws;

    auto t = x.permute({0, 2, 3, 1});  // (B, h, w, C)
    auto y = norm1_(t);
    if (hp != h || wp != w) {
        y = F::pad(y, F::PadFuncOptions({0, 0, 0, wp - w, 0, hp - h}));
    }
    const auto nh = hp / ws;
    const auto nw = wp / ws;
    auto windows = y.reshape({b, nh, ws, nw, ws, c}).permute({0, 1, 3, 2, 4, 5}).reshape({b * nh * nw, ws * ws, c});
    windows = attn_(windows, windows);
    y = windows.reshape({b, nh, nw, ws, ws, c}).permute({0, 1, 3, 2, 4, 5}).reshape({b, hp, wp, c});
    if (hp != h || wp != w) {
        y = y.slice(1, 0, h).slice(2, 0, w);
    }
    t = t + y;
    t = t + ffn_(norm2_(t));
    return t.permute({0, 3, 1, 2}).contiguous();
}

BackboneStageImpl::BackboneStageImpl(std::int64_t in_ch, std::int64_t out_ch, std::int64_t patch,
                                     const ModelConfig& config) {
    down_ = register_module("down", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, out_ch, patch).stride(patch)));
    block_ = register_module("block", WindowAttentionBlock(out_ch, 2, config.semantic_window));
    if (config.use_dilated_conv) {
        dilated = register_module("dilated", DilatedEnhance(out_ch, config.dc_dilation));
    }
    if (config.use_spatial_attention) {
        spatial_attn = register_module("spatial_attn", SpatialAttention(config.sa_kernel));
    }
}

torch::Tensor BackboneStageImpl::forward(const torch::Tensor& x) {
    auto y = block_(down_(x));
    if (dilated) {
        y = dilated(y);
    }
    if (spatial_attn) {
        y = spatial_attn(y);
    }
    return y;
}

std::vector<std::int64_t> BackboneImpl::stage_widths(const ModelConfig& config) {
    std::vector<std::int64_t> widths;
    for (std::int64_t i = 0; i < config.semantic_levels; ++i) {
        widths.push_back(i == 0 ? config.semantic_base_channels : 2 * config.semantic_base_channels);
    }
    return widths;
}

BackboneImpl::BackboneImpl(const ModelConfig& config) : widths_(stage_widths(config)) {
    std::int64_t in_ch = 3;
    for (std::size_t i = 0; i < widths_.size(); ++i) {
        const std::int64_t patch = i == 0 ? 4 : 2;
        stages_.push_back(
            register_module("stage" + std::to_string(i), BackboneStage(in_ch, widths_[i], patch, config)));
        in_ch = widths_[i];
    }
}

FeaturePyramid BackboneImpl::forward(const torch::Tensor& x) {
    const std::int64_t divisor = std::int64_t{1} << (stages_.size() + 1);
    if (x.size(2) % divisor != 0 || x.size(3) % divisor != 0) {
        throw ShapeError("backbone input " + std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)) +
                         " must be divisible by " + std::to_string(divisor) + "; pad the image first");
    }
    FeaturePyramid out;
    auto y = x;
    for (auto& stage : stages_) {
        y = stage(y);
        out.levels.push_back(y);
    }
    return out;
}

PyramidDecoderImpl::PyramidDecoderImpl(const std::vector<std::int64_t>& widths) {
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        laterals_.push_back(register_module("lateral" + std::to_string(i),
                                            torch::nn::Conv2d(torch::nn::Conv2dOptions(widths[i + 1], widths[i], 1))));
    }
}

FeaturePyramid PyramidDecoderImpl::forward(const FeaturePyramid& pyramid) {
    const auto n = pyramid.levels.size();
    if (n < 2) {
        throw ShapeError("pyramid decoder needs at least 2 levels, got " + std::to_string(n));
    }
    if (n != laterals_.size() + 1) {
        throw ShapeError("pyramid decoder built for " + std::to_string(laterals_.size() + 1) + " levels, got " +
                         std::to_string(n));
    }
    FeaturePyramid out;
    out.levels.resize(n);
    out.levels[n - 1] = pyramid.levels[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) {
        const auto& fine = pyramid.levels[i];
        auto up = F::interpolate(out.levels[i + 1], F::InterpolateFuncOptions()
                                                        .size(std::vector<std::int64_t>{fine.size(2), fine.size(3)})
                                                        .mode(torch::kBilinear)
                                                        .align_corners(false));
        out.levels[i] = fine + laterals_[i](up);
    }
    return out;
}

QueryTransformerImpl::QueryTransformerImpl(const std::vector<std::int64_t>& widths, const ModelConfig& config)
    : d_sem_(config.d_sem) {
    const auto d = config.d_sem;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        level_proj_.push_back(register_module("level_proj" + std::to_string(i), torch::nn::Linear(widths[i], d)));
    }
    level_embedding_ = register_parameter("level_embedding", torch::zeros({static_cast<std::int64_t>(widths.size()), d}));
    local_queries_ = register_parameter("local_queries", torch::zeros({config.n_local, d}));
    global_queries_ = register_parameter("global_queries", torch::zeros({config.n_global, d}));
    auto ln = [d] { return torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})); };
    norm_cross_ = register_module("norm_cross", ln());
    norm_memory_ = register_module("norm_memory", ln());
    cross_attn_ = register_module("cross_attn", MultiHeadAttention(d, d, config.attention_heads));
    norm_ff1_ = register_module("norm_ff1", ln());
    ff1_ = register_module("ff1", FeedForward(d, 2));
    norm_self_ = register_module("norm_self", ln());
    self_attn_ = register_module("self_attn", MultiHeadAttention(d, d, config.attention_heads));
    norm_ff2_ = register_module("norm_ff2", ln());
    ff2_ = register_module("ff2", FeedForward(d, 2));
    norm_out_ = register_module("norm_out", ln());
}

std::pair<torch::Tensor, torch::Tensor> QueryTransformerImpl::tokenize(const FeaturePyramid& pyramid) {
    if (pyramid.levels.empty()) {
        throw ShapeError("query transformer needs a non-empty pyramid");
    }
    if (pyramid.levels.size() != level_proj_.size()) {
        throw ShapeError("query transformer built for " + std::to_string(level_proj_.size()) + " levels, got " +
                         std::to_string(pyramid.levels.size()));
    }
    std::vector<torch::Tensor> tokens;
    std::vector<torch::Tensor> positions;
    for (std::size_t i = 0; i < pyramid.levels.size(); ++i) {
        const auto& lvl = pyramid.levels[i];
        const auto b = lvl.size(0);
        const auto h = lvl.size(2);
        const auto w = lvl.size(3);
        auto flat = lvl.flatten(2).transpose(1, 2);  // (B, h*w, C)
        tokens.push_back(level_proj_[i](flat));
        auto pos = sinusoidal_2d(h, w, d_sem_, lvl.options()) + level_embedding_[static_cast<std::int64_t>(i)];
        positions.push_back(pos.unsqueeze(0).expand({b, h * w, d_sem_}));
    }
    return {torch::cat(tokens, 1), torch::cat(positions, 1)};
}

torch::Tensor QueryTransformerImpl::attend(const torch::Tensor& tokens, const torch::Tensor& positions) {
    const auto b = tokens.size(0);
    auto memory = norm_memory_(tokens + positions);
    auto q = local_queries_.unsqueeze(0).expand({b, local_queries_.size(0), d_sem_});
    q = q + cross_attn_(norm_cross_(q), memory);
    q = q + ff1_(norm_ff1_(q));
    auto x = torch::cat({q, global_queries_.unsqueeze(0).expand({b, global_queries_.size(0), d_sem_})}, 1);
    auto xn = norm_self_(x);
    x = x + self_attn_(xn, xn);
    x = x + ff2_(norm_ff2_(x));
    return norm_out_(x);
}

SemanticEmbedding QueryTransformerImpl::forward(const FeaturePyramid& pyramid) {
    auto [tokens, positions] = tokenize(pyramid);
    return SemanticEmbedding{attend(tokens, positions)};
}

SemanticEncoderImpl::SemanticEncoderImpl(const ModelConfig& config) {
    backbone = register_module("backbone", Backbone(config));
    decoder = register_module("decoder", PyramidDecoder(backbone->widths()));
    query = register_module("query", QueryTransformer(backbone->widths(), config));
}

SemanticEmbedding SemanticEncoderImpl::forward(const torch::Tensor& x) {
    return query(decoder(backbone(x)));
}

FeaturePyramid backbone_forward(const RgbImage& image, Backbone& backbone) {
    const auto dtype = backbone->parameters().front().scalar_type();
    return backbone(normalize_rgb(image.data).unsqueeze(0).to(dtype));
}

SpatialAttentionMap spatial_attention(const torch::Tensor& features, SpatialAttention& module) {
    if (features.dim() != 3 || features.size(0) < 1) {
        throw ShapeError("spatial attention expects a (C, h, w) tensor with C >= 1");
    }
    return SpatialAttentionMap{module->attention_map(features.unsqueeze(0)).squeeze(0)};
}

torch::Tensor dilated_enhance(const torch::Tensor& features, DilatedEnhance& module) {
    if (features.dim() != 3) {
        throw ShapeError("dilated enhance expects a (C, h, w) tensor");
    }
    return module(features.unsqueeze(0)).squeeze(0);
}

FeaturePyramid pyramid_decoder(const FeaturePyramid& pyramid, PyramidDecoder& module) { return module(pyramid); }

SemanticEmbedding query_transform(const FeaturePyramid& pyramid, QueryTransformer& module) { return module(pyramid); }

}  // namespace sedepth
