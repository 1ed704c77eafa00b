#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace sedepth {

using NamedTensor = std::pair<std::string, torch::Tensor>;

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.1;
};

/// Adam with decoupled weight decay: p <- p - lr*wd*p, then the
/// bias-corrected Adam update. A parameter without a gradient is stepped as
/// if its gradient were zero.
class AdamW {
public:
    AdamW(std::vector<NamedTensor> params, AdamWConfig config);

    void step(double lr);
    void zero_grad();

    const std::vector<NamedTensor>& params() const { return params_; }
    const AdamWConfig& config() const { return config_; }
    std::int64_t step_count() const { return step_count_; }

    /// First and second moments, named like the parameters.
    std::vector<NamedTensor> exp_avg() const;
    std::vector<NamedTensor> exp_avg_sq() const;
    /// Throws Error when names or shapes disagree with the parameter list.
    void load_state(std::int64_t step_count, const std::vector<NamedTensor>& exp_avg,
                    const std::vector<NamedTensor>& exp_avg_sq);

private:
    std::vector<NamedTensor> params_;
    AdamWConfig config_;
    std::int64_t step_count_ = 0;
    std::vector<torch::Tensor> m_;
    std::vector<torch::Tensor> v_;
};

/// Scales gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(const std::vector<NamedTensor>& params, double max_norm);

}  // namespace sedepth
