#include "sedepth/nn_common.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <openssl/evp.h>

#include <cmath>
#include <memory>
#include <stdexcept>

namespace sedepth {

namespace {

std::string to_hex(const unsigned char* bytes, unsigned int len) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[bytes[i] >> 4]);
        out.push_back(kHex[bytes[i] & 0xF]);
    }
    return out;
}

}  // namespace

MultiHeadAttentionImpl::MultiHeadAttentionImpl(std::int64_t query_dim, std::int64_t context_dim, std::int64_t heads)
    : heads_(heads) {
    TORCH_CHECK(query_dim % heads == 0, "attention width ", query_dim, " not divisible by ", heads, " heads");
    to_q_ = register_module("to_q", torch::nn::Linear(query_dim, query_dim));
    to_k_ = register_module("to_k", torch::nn::Linear(context_dim, query_dim));
    to_v_ = register_module("to_v", torch::nn::Linear(context_dim, query_dim));
    to_out_ = register_module("to_out", torch::nn::Linear(query_dim, query_dim));
}

torch::Tensor MultiHeadAttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& context) {
    const auto b = x.size(0);
    const auto n = x.size(1);
    const auto m = context.size(1);
    const auto width = to_q_->options.out_features();
    const auto head_dim = width / heads_;

    auto split = [&](const torch::Tensor& t, std::int64_t len) {
        return t.view({b, len, heads_, head_dim}).transpose(1, 2);
    };
    auto q = split(to_q_(x), n);
    auto k = split(to_k_(context), m);
    auto v = split(to_v_(context), m);

    auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim));
    auto out = torch::matmul(torch::softmax(scores, -1), v);
    out = out.transpose(1, 2).reshape({b, n, width});
    return to_out_(out);
}

FeedForwardImpl::FeedForwardImpl(std::int64_t dim, std::int64_t mult) {
    fc1_ = register_module("fc1", torch::nn::Linear(dim, dim * mult));
    fc2_ = register_module("fc2", torch::nn::Linear(dim * mult, dim));
}

torch::Tensor FeedForwardImpl::forward(const torch::Tensor& x) { return fc2_(torch::gelu(fc1_(x))); }

torch::Tensor sinusoidal_embedding(const torch::Tensor& positions, std::int64_t dim) {
    const auto half = dim / 2;
    auto opts = positions.options().dtype(positions.is_floating_point() ? positions.scalar_type() : torch::kFloat32);
    auto freqs = torch::exp(torch::arange(half, opts) * (-std::log(10000.0) / static_cast<double>(std::max<std::int64_t>(half, 1))));
    auto args = positions.to(opts.dtype()).unsqueeze(1) * freqs.unsqueeze(0);
    auto emb = torch::cat({torch::sin(args), torch::cos(args)}, 1);
    if (dim % 2 == 1) {
        emb = torch::cat({emb, torch::zeros({emb.size(0), 1}, opts)}, 1);
    }
    return emb;
}

torch::Tensor sinusoidal_2d(std::int64_t h, std::int64_t w, std::int64_t dim, torch::TensorOptions options) {
    TORCH_CHECK(dim % 4 == 0, "2-D position width must be divisible by 4, got ", dim);
    if (!options.has_dtype()) {
        options = options.dtype(torch::kFloat32);
    }
    auto rows = sinusoidal_embedding(torch::arange(h, options), dim / 2);  // (h, dim/2)
    auto cols = sinusoidal_embedding(torch::arange(w, options), dim / 2);  // (w, dim/2)
    auto grid = torch::cat({rows.unsqueeze(1).expand({h, w, dim / 2}), cols.unsqueeze(0).expand({h, w, dim / 2})}, 2);
    return grid.reshape({h * w, dim});
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : name) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    // splitmix64 finalizer over the combination.
    std::uint64_t z = seed ^ (h + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

void init_parameters(torch::nn::Module& module, std::uint64_t seed) {
    torch::NoGradGuard no_grad;
    for (auto& item : module.named_parameters(/*recurse=*/true)) {
        const std::string& name = item.key();
        auto& param = item.value();
        auto gen = at::make_generator<at::CPUGeneratorImpl>(derive_seed(seed, name));
        const auto opts = torch::TensorOptions().dtype(torch::kFloat64);
        torch::Tensor value;
        if (name.find("zero_") != std::string::npos) {
            value = torch::zeros(param.sizes(), opts);
        } else if (param.dim() <= 1) {
            const bool gain = name.size() >= 6 && name.compare(name.size() - 6, 6, "weight") == 0;
            value = gain ? torch::ones(param.sizes(), opts) : torch::zeros(param.sizes(), opts);
        } else if (name.find("queries") != std::string::npos || name.find("embedding") != std::string::npos) {
            value = torch::randn(param.sizes(), gen, opts) * 0.02;
        } else {
            const double fan_in = static_cast<double>(param.numel() / param.size(0));
            const double bound = 1.0 / std::sqrt(fan_in);
            value = (torch::rand(param.sizes(), gen, opts) * 2.0 - 1.0) * bound;
        }
        param.copy_(value.to(param.scalar_type()));
    }
}

std::string sha256_hex(const void* data, std::size_t size) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("SHA-256 computation failed");
    }
    return to_hex(digest, len);
}

std::string parameter_digest(const std::vector<std::pair<std::string, torch::Tensor>>& params) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
    for (const auto& [name, tensor] : params) {
        EVP_DigestUpdate(ctx.get(), name.data(), name.size());
        for (auto s : tensor.sizes()) {
            const std::int64_t dim = s;
            EVP_DigestUpdate(ctx.get(), &dim, sizeof(dim));
        }
        auto flat = tensor.detach().cpu().contiguous();
        EVP_DigestUpdate(ctx.get(), flat.data_ptr(), static_cast<std::size_t>(flat.nbytes()));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), digest, &len);
    return to_hex(digest, len);
}

std::string parameter_digest(const torch::nn::Module& module) {
    std::vector<std::pair<std::string, torch::Tensor>> params;
    for (const auto& item : module.named_parameters(true)) {
        params.emplace_back(item.key(), item.value());
    }
    return parameter_digest(params);
}

std::int64_t parameter_count(const torch::nn::Module& module) {
    std::int64_t n = 0;
    for (const auto& p : module.parameters(true)) {
        n += p.numel();
    }
    return n;
}

}  // namespace sedepth
