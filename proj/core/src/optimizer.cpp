#include "sedepth/optimizer.hpp"

#include <cmath>

#include "sedepth/errors.hpp"

namespace sedepth {

AdamW::AdamW(std::vector<NamedTensor> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& [name, p] : params_) {
        m_.push_back(torch::zeros_like(p, torch::MemoryFormat::Contiguous));
        v_.push_back(torch::zeros_like(p, torch::MemoryFormat::Contiguous));
    }
}

void AdamW::step(double lr) {
    torch::NoGradGuard no_grad;
    ++step_count_;
    const auto n = static_cast<double>(step_count_);
    const double bc1 = 1.0 - std::pow(config_.beta1, n);
    const double bc2 = 1.0 - std::pow(config_.beta2, n);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i].second;
        auto& m = m_[i];
        auto& v = v_[i];
        p.mul_(1.0 - lr * config_.weight_decay);
        const auto& g = p.grad();
        if (g.defined()) {
            m.mul_(config_.beta1).add_(g, 1.0 - config_.beta1);
            v.mul_(config_.beta2).addcmul_(g, g, 1.0 - config_.beta2);
        } else {
            m.mul_(config_.beta1);
            v.mul_(config_.beta2);
        }
        auto denom = (v / bc2).sqrt_().add_(config_.eps);
        p.addcdiv_(m, denom, -lr / bc1);
    }
}

void AdamW::zero_grad() {
    for (auto& [name, p] : params_) {
        if (p.grad().defined()) {
            p.mutable_grad().reset();
        }
    }
}

std::vector<NamedTensor> AdamW::exp_avg() const {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        out.emplace_back(params_[i].first, m_[i]);
    }
    return out;
}

std::vector<NamedTensor> AdamW::exp_avg_sq() const {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        out.emplace_back(params_[i].first, v_[i]);
    }
    return out;
}

void AdamW::load_state(std::int64_t step_count, const std::vector<NamedTensor>& exp_avg,
                       const std::vector<NamedTensor>& exp_avg_sq) {
    if (exp_avg.size() != params_.size() || exp_avg_sq.size() != params_.size()) {
        throw Error("optimizer state has " + std::to_string(exp_avg.size()) + " moments for " +
                    std::to_string(params_.size()) + " parameters");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& [name, p] = params_[i];
        if (exp_avg[i].first != name || exp_avg_sq[i].first != name || exp_avg[i].second.sizes() != p.sizes() ||
            exp_avg_sq[i].second.sizes() != p.sizes()) {
            throw Error("optimizer state does not match parameter " + name);
        }
    }
    torch::NoGradGuard no_grad;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].copy_(exp_avg[i].second);
        v_[i].copy_(exp_avg_sq[i].second);
    }
    step_count_ = step_count;
}

double clip_grad_norm(const std::vector<NamedTensor>& params, double max_norm) {
    torch::NoGradGuard no_grad;
    double sq = 0.0;
    for (const auto& [name, p] : params) {
        if (p.grad().defined()) {
            sq += p.grad().to(torch::kFloat64).pow(2).sum().item<double>();
        }
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / (norm + 1e-6);
        for (const auto& [name, p] : params) {
            if (p.grad().defined()) {
                p.mutable_grad().mul_(scale);
            }
        }
    }
    return norm;
}

}  // namespace sedepth
