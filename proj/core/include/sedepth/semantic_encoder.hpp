#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <utility>
#include <vector>

#include "sedepth/core_types.hpp"
#include "sedepth/nn_common.hpp"

namespace sedepth {

/// Multi-scale backbone features, finest first. Level i has shape
/// (B, C_i, H / 2^(i+2), W / 2^(i+2)).
struct FeaturePyramid {
    std::vector<torch::Tensor> levels;
};

/// (B, n_local + n_global, d_sem) conditioning sequence for the UNet.
struct SemanticEmbedding {
    torch::Tensor data;
};

/// (B, 1, h, w) gate values in (0, 1).
struct SpatialAttentionMap {
    torch::Tensor data;
};

/// Spatial gate: sigmoid(conv_kxk([mean_c(x), max_c(x)])). The conv starts at
/// zero and the gate is rescaled by 2, so the module is the identity at init.
class SpatialAttentionImpl : public torch::nn::Module {
public:
    explicit SpatialAttentionImpl(std::int64_t kernel_size = 7);

    torch::Tensor attention_map(const torch::Tensor& x);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d& conv() { return conv_; }

private:
    torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(SpatialAttention);

/// out = x + conv3x3_dilated(x), conv zero-initialized.
class DilatedEnhanceImpl : public torch::nn::Module {
public:
    DilatedEnhanceImpl(std::int64_t channels, std::int64_t dilation);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d& conv() { return conv_; }

private:
    torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(DilatedEnhance);

/// Pre-norm transformer block with self-attention inside non-overlapping
/// windows; inputs not divisible by the window are zero-padded then cropped.
class WindowAttentionBlockImpl : public torch::nn::Module {
public:
    WindowAttentionBlockImpl(std::int64_t dim, std::int64_t heads, std::int64_t window);
    torch::Tensor forward(const torch::Tensor& x);

private:
    std::int64_t window_;
    torch::nn::LayerNorm norm1_{nullptr};
    torch::nn::LayerNorm norm2_{nullptr};
    MultiHeadAttention attn_{nullptr};
    FeedForward ffn_{nullptr};
};
TORCH_MODULE(WindowAttentionBlock);

/// Patch-merging downsample, one window-attention block, then the optional
/// dilated-conv residual followed by the spatial-attention gate.
class BackboneStageImpl : public torch::nn::Module {
public:
    BackboneStageImpl(std::int64_t in_ch, std::int64_t out_ch, std::int64_t patch, const ModelConfig& config);
    torch::Tensor forward(const torch::Tensor& x);

    DilatedEnhance dilated{nullptr};
    SpatialAttention spatial_attn{nullptr};

private:
    torch::nn::Conv2d down_{nullptr};
    WindowAttentionBlock block_{nullptr};
};
TORCH_MODULE(BackboneStage);

class BackboneImpl : public torch::nn::Module {
public:
    explicit BackboneImpl(const ModelConfig& config);
    FeaturePyramid forward(const torch::Tensor& x);

    const std::vector<std::int64_t>& widths() const { return widths_; }
    std::vector<BackboneStage>& stages() { return stages_; }
    static std::vector<std::int64_t> stage_widths(const ModelConfig& config);

private:
    std::vector<std::int64_t> widths_;
    std::vector<BackboneStage> stages_;
};
TORCH_MODULE(Backbone);

/// Top-down refinement: out_L = x_L; out_i = x_i + conv1x1(up2(out_{i+1})).
class PyramidDecoderImpl : public torch::nn::Module {
public:
    explicit PyramidDecoderImpl(const std::vector<std::int64_t>& widths);
    FeaturePyramid forward(const FeaturePyramid& pyramid);

private:
    std::vector<torch::nn::Conv2d> laterals_;
};
TORCH_MODULE(PyramidDecoder);

/// Learned local queries cross-attend over the flattened pyramid; learned
/// global queries are appended and the whole sequence self-attends.
class QueryTransformerImpl : public torch::nn::Module {
public:
    QueryTransformerImpl(const std::vector<std::int64_t>& widths, const ModelConfig& config);

    /// Flattened, projected pyramid tokens and their level+position codes,
    /// both (B, N, d_sem).
    std::pair<torch::Tensor, torch::Tensor> tokenize(const FeaturePyramid& pyramid);
    torch::Tensor attend(const torch::Tensor& tokens, const torch::Tensor& positions);
    SemanticEmbedding forward(const FeaturePyramid& pyramid);

private:
    std::int64_t d_sem_;
    std::vector<torch::nn::Linear> level_proj_;
    torch::Tensor level_embedding_;
    torch::Tensor local_queries_;
    torch::Tensor global_queries_;
    torch::nn::LayerNorm norm_cross_{nullptr};
    torch::nn::LayerNorm norm_memory_{nullptr};
    torch::nn::LayerNorm norm_ff1_{nullptr};
    torch::nn::LayerNorm norm_self_{nullptr};
    torch::nn::LayerNorm norm_ff2_{nullptr};
    torch::nn::LayerNorm norm_out_{nullptr};
    MultiHeadAttention cross_attn_{nullptr};
    MultiHeadAttention self_attn_{nullptr};
    FeedForward ff1_{nullptr};
    FeedForward ff2_{nullptr};
};
TORCH_MODULE(QueryTransformer);

/// Backbone -> pyramid decoder -> query transformer.
class SemanticEncoderImpl : public torch::nn::Module {
public:
    explicit SemanticEncoderImpl(const ModelConfig& config);

    /// Normalized (B, 3, H, W) -> embedding (B, n_local + n_global, d_sem).
    SemanticEmbedding forward(const torch::Tensor& x);

    Backbone backbone{nullptr};
    PyramidDecoder decoder{nullptr};
    QueryTransformer query{nullptr};
};
TORCH_MODULE(SemanticEncoder);

/// Requires H and W divisible by 2^(L+1). Throws ShapeError otherwise.
FeaturePyramid backbone_forward(const RgbImage& image, Backbone& backbone);
SpatialAttentionMap spatial_attention(const torch::Tensor& features, SpatialAttention& module);
torch::Tensor dilated_enhance(const torch::Tensor& features, DilatedEnhance& module);
FeaturePyramid pyramid_decoder(const FeaturePyramid& pyramid, PyramidDecoder& module);
SemanticEmbedding query_transform(const FeaturePyramid& pyramid, QueryTransformer& module);

}  // namespace sedepth
