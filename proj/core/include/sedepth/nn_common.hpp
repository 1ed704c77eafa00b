#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <string_view>

namespace sedepth {

/// Pre-projection multi-head attention: queries from `x`, keys and values
/// from `context`. Output has the query width.
class MultiHeadAttentionImpl : public torch::nn::Module {
public:
    MultiHeadAttentionImpl(std::int64_t query_dim, std::int64_t context_dim, std::int64_t heads);

    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context);

private:
    std::int64_t heads_;
    torch::nn::Linear to_q_{nullptr};
    torch::nn::Linear to_k_{nullptr};
    torch::nn::Linear to_v_{nullptr};
    torch::nn::Linear to_out_{nullptr};
};
TORCH_MODULE(MultiHeadAttention);

class FeedForwardImpl : public torch::nn::Module {
public:
    FeedForwardImpl(std::int64_t dim, std::int64_t mult = 2);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Linear fc1_{nullptr};
    torch::nn::Linear fc2_{nullptr};
};
TORCH_MODULE(FeedForward);

/// Sinusoidal features of scalar positions: (N) -> (N, dim).
torch::Tensor sinusoidal_embedding(const torch::Tensor& positions, std::int64_t dim);

/// 2-D sinusoidal position table for an h x w grid, row-major: (h*w, dim).
/// `dim` must be divisible by 4.
torch::Tensor sinusoidal_2d(std::int64_t h, std::int64_t w, std::int64_t dim, torch::TensorOptions options = {});

/// Deterministic seed for one named parameter; independent of how many other
/// parameters exist, so toggling optional submodules never shifts the
/// initialization of the rest.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view name);

/// Re-initializes every parameter of `module` from `seed`:
///   - names containing "zero_" -> zeros
///   - 1-D "...weight" (norm gains) -> ones, other 1-D -> zeros
///   - names containing "queries" or "embedding" -> N(0, 0.02^2)
///   - everything else -> U(-1/sqrt(fan_in), 1/sqrt(fan_in))
void init_parameters(torch::nn::Module& module, std::uint64_t seed);

std::string sha256_hex(const void* data, std::size_t size);

/// SHA-256 over (name, shape, raw bytes) of every parameter, in order.
std::string parameter_digest(const std::vector<std::pair<std::string, torch::Tensor>>& params);
std::string parameter_digest(const torch::nn::Module& module);

/// Number of scalar parameters.
std::int64_t parameter_count(const torch::nn::Module& module);

}  // namespace sedepth
