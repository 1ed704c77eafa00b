#include "sedepth/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "sedepth/nn_common.hpp"

namespace sedepth {

void OneCycleSchedule::validate() const {
    if (!(lr_init > 0.0 && lr_init < lr_max)) {
        throw ConfigError("train.lr_init", "need 0 < lr_init < lr_max");
    }
    if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) {
        throw ConfigError("train.warmup_fraction", "must lie in (0, 1)");
    }
    if (total_steps < 2) {
        throw ConfigError("train.total_steps", "must be >= 2");
    }
    if (!(final_div >= 1.0)) {
        throw ConfigError("train.final_div", "must be >= 1");
    }
}

std::int64_t OneCycleSchedule::peak_step() const {
    const auto p = static_cast<std::int64_t>(std::floor(warmup_fraction * static_cast<double>(total_steps)));
    return std::clamp<std::int64_t>(p, 1, total_steps - 1);
}

double lr_at(std::int64_t step, const OneCycleSchedule& s) {
    if (step < 0 || step > s.total_steps) {
        throw ConfigError("step", std::to_string(step) + " outside [0, " + std::to_string(s.total_steps) + "]");
    }
    constexpr double pi = std::numbers::pi;
    const auto peak = s.peak_step();
    if (step <= peak) {
        const double w = (1.0 - std::cos(pi * static_cast<double>(step) / static_cast<double>(peak))) / 2.0;
        return s.lr_init * (1.0 - w) + s.lr_max * w;
    }
    const double u = static_cast<double>(step - peak) / static_cast<double>(s.total_steps - peak);
    const double w = (1.0 + std::cos(pi * u)) / 2.0;
    return s.lr_floor() * (1.0 - w) + s.lr_max * w;
}

void TrainerConfig::validate() const {
    schedule().validate();
    if (batch_size < 1) {
        throw ConfigError("train.batch_size", "must be >= 1");
    }
    if (weight_decay < 0.0) {
        throw ConfigError("train.weight_decay", "must be >= 0");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0)) {
        throw ConfigError("train.beta1", "must lie in [0, 1)");
    }
    if (!(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("train.beta2", "must lie in [0, 1)");
    }
    if (!(grad_clip > 0.0)) {
        throw ConfigError("train.grad_clip", "must be > 0");
    }
    if (!(lambda_dm >= 0.0)) {
        throw ConfigError("train.lambda_dm", "must be >= 0");
    }
    if (val_every < 0) {
        throw ConfigError("train.val_every", "must be >= 0");
    }
}

void TrainerConfig::bind(KvBinder& b, const std::string& p) {
    b.bind(p + "total_steps", total_steps);
    b.bind(p + "batch_size", batch_size);
    b.bind(p + "lr_init", lr_init);
    b.bind(p + "lr_max", lr_max);
    b.bind(p + "warmup_fraction", warmup_fraction);
    b.bind(p + "weight_decay", weight_decay);
    b.bind(p + "beta1", beta1);
    b.bind(p + "beta2", beta2);
    b.bind(p + "grad_clip", grad_clip);
    b.bind(p + "lambda_dm", lambda_dm);
    b.bind(p + "seed", seed);
    b.bind(p + "val_every", val_every);
}

OneCycleSchedule TrainerConfig::schedule() const {
    OneCycleSchedule s;
    s.lr_init = lr_init;
    s.lr_max = lr_max;
    s.total_steps = total_steps;
    s.warmup_fraction = warmup_fraction;
    return s;
}

AdamWConfig TrainerConfig::adamw() const {
    AdamWConfig c;
    c.beta1 = beta1;
    c.beta2 = beta2;
    c.weight_decay = weight_decay;
    return c;
}

namespace {

std::string rng_to_string(const Rng& rng) {
    std::ostringstream out;
    out << rng;
    return out.str();
}

Rng rng_from_string(const std::string& text) {
    Rng rng;
    std::istringstream in(text);
    in >> rng;
    if (!in) {
        throw DataError("corrupt random-state capture");
    }
    return rng;
}

void load_parameters(torch::nn::Module& model, const std::map<std::string, std::vector<NamedTensor>>& groups) {
    std::unordered_map<std::string, const torch::Tensor*> stored;
    for (const auto& [group, params] : groups) {
        for (const auto& [name, t] : params) {
            stored[name] = &t;
        }
    }
    torch::NoGradGuard no_grad;
    for (auto& item : model.named_parameters(true)) {
        const auto it = stored.find(item.key());
        if (it == stored.end()) {
            throw Error("checkpoint lacks parameter " + item.key());
        }
        if (it->second->sizes() != item.value().sizes()) {
            throw Error("checkpoint parameter " + item.key() + " has the wrong shape");
        }
        item.value().copy_(*it->second);
    }
    if (stored.size() != model.named_parameters(true).size()) {
        throw Error("checkpoint has parameters the model does not");
    }
}

torch::Tensor stack_images(const std::vector<RgbdSample>& batch) {
    std::vector<torch::Tensor> xs;
    for (const auto& s : batch) {
        xs.push_back(s.image.data);
    }
    return torch::stack(xs);
}

}  // namespace

Trainer::Trainer(const ModelConfig& model, const TrainerConfig& config, AugmentConfig augment, FreezePolicy policy)
    : model_config_(model),
      config_(config),
      augment_(augment),
      policy_(std::move(policy)),
      schedule_(config.schedule()),
      model_(model, config.seed),
      optimizer_(build_optimizer(*model_, policy_, config.adamw())),
      rng_(derive_seed(config.seed, "trainer")) {
    config_.validate();
    augment_.validate();
    state_.group_digests = group_digests(groups());
    state_.rng_state = rng_to_string(rng_);
}

std::vector<RgbdSample> Trainer::next_batch(const std::vector<RgbdSample>& dataset) {
    if (dataset.empty()) {
        throw DataError("training set is empty");
    }
    const auto n = static_cast<std::int64_t>(dataset.size());
    auto permutation = [&](std::int64_t epoch) {
        std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        Rng perm_rng(derive_seed(config_.seed, "epoch" + std::to_string(epoch)));
        std::shuffle(idx.begin(), idx.end(), perm_rng);
        return idx;
    };
    auto order = permutation(state_.epoch);
    std::vector<RgbdSample> batch;
    for (std::int64_t i = 0; i < config_.batch_size; ++i) {
        if (state_.cursor >= n) {
            state_.cursor = 0;
            ++state_.epoch;
            order = permutation(state_.epoch);
        }
        batch.push_back(augment(dataset[static_cast<std::size_t>(order[state_.cursor])], augment_, rng_));
        ++state_.cursor;
    }
    state_.rng_state = rng_to_string(rng_);
    return batch;
}

LossRecord Trainer::train_step(const std::vector<RgbdSample>& batch) {
    if (batch.empty()) {
        throw DataError("train_step: empty batch");
    }
    std::vector<torch::Tensor> depths;
    std::vector<torch::Tensor> masks;
    for (const auto& s : batch) {
        const auto issues = validate_sample(s);
        if (!issues.empty()) {
            throw DataError("sample " + s.frame_id + ": " + issues.front());
        }
        depths.push_back(s.depth.data);
        masks.push_back(s.depth.valid_mask);
    }
    const double lr = lr_at(state_.step, schedule_);
    auto rgb = stack_images(batch);
    const auto dtype = model_->unet->parameters().front().scalar_type();

    std::optional<torch::Generator> noise;
    if (config_.lambda_dm > 0.0) {
        noise = at::make_generator<at::CPUGeneratorImpl>(rng_());
    }
    auto out = model_->forward_train(rgb, noise);
    auto d_loss = depth_loss(out.depth, torch::stack(depths).to(dtype), torch::stack(masks));
    auto total = d_loss;
    double dm = 0.0;
    if (noise) {
        auto dm_loss = diffusion_loss(out.eps, out.eps_pred);
        dm = dm_loss.item<double>();
        total = total + config_.lambda_dm * dm_loss;
    }

    LossRecord rec{d_loss.item<double>(), dm, total.item<double>(), lr};
    if (!std::isfinite(rec.total) || !std::isfinite(rec.depth_loss) || !std::isfinite(rec.diffusion_loss)) {
        std::string ids;
        for (const auto& s : batch) {
            ids += (ids.empty() ? "" : ",") + s.frame_id;
        }
        throw NumericError("non-finite loss at step " + std::to_string(state_.step) + " on frames " + ids);
    }

    optimizer_.zero_grad();
    total.backward();
    clip_grad_norm(optimizer_.params(), config_.grad_clip);
    optimizer_.step(lr);
    optimizer_.zero_grad();
    ++state_.step;
    state_.rng_state = rng_to_string(rng_);
    return rec;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint ckpt;
    ckpt.model = model_config_;
    ckpt.seed = config_.seed;
    ckpt.state = state_;
    auto cfg = config_;
    KvBinder binder;
    cfg.bind(binder);
    ckpt.trainer = binder.dump();
    for (const auto& [group, params] : group_parameters(*model_)) {
        ckpt.groups[group_name(group)] = params;
    }
    ckpt.state.group_digests = group_digests(group_parameters(*model_));
    ckpt.optimizer_step = optimizer_.step_count();
    ckpt.exp_avg = optimizer_.exp_avg();
    ckpt.exp_avg_sq = optimizer_.exp_avg_sq();
    return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
    if (const auto field = ckpt.model.first_mismatch(model_config_)) {
        throw ConfigError(*field, "value differs from the checkpoint config");
    }
    load_parameters(*model_, ckpt.groups);
    model_->frozen().digest = model_->frozen().recompute_digest();
    optimizer_.load_state(ckpt.optimizer_step, ckpt.exp_avg, ckpt.exp_avg_sq);
    state_ = ckpt.state;
    rng_ = rng_from_string(ckpt.state.rng_state);
}

torch::Tensor Trainer::predict(const RgbdSample& sample) { return model_->predict(sample.image.data); }

void Trainer::set_best(double metric, std::int64_t step) {
    state_.best_metric = metric;
    state_.best_step = step;
}

FitResult fit(Trainer& trainer, const std::vector<RgbdSample>& train, const std::vector<RgbdSample>& val,
              const FitOptions& options) {
    std::filesystem::create_directories(options.out_dir);
    std::ofstream log(options.out_dir / "train_log.jsonl", std::ios::app);
    if (!log) {
        throw DataError("cannot write " + (options.out_dir / "train_log.jsonl").string());
    }
    const SamplePredictor predictor = [&](const RgbdSample& s) { return trainer.predict(s); };
    auto validate = [&]() -> std::optional<MetricsReport> {
        if (val.empty()) {
            return std::nullopt;
        }
        auto result = evaluate_split(predictor, val, options.eval);
        for (const auto& w : result.warnings) {
            if (options.on_log) {
                options.on_log("warning: " + w);
            }
        }
        if (result.report.n_samples == 0) {
            return std::nullopt;
        }
        return result.report;
    };
    FitResult res;
    auto consider = [&](const MetricsReport& report) {
        if (report.abs_rel < trainer.state().best_metric) {
            trainer.set_best(report.abs_rel, trainer.state().step);
            res.best_val = report;
            save_checkpoint(trainer.checkpoint(), options.out_dir / "best.ckpt");
        }
    };

    if (options.validate_at_start) {
        res.initial_val = validate();
    }
    const auto total = trainer.config().total_steps;
    bool first = true;
    while (trainer.state().step < total) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto step = trainer.state().step;
        auto batch = trainer.next_batch(train);
        const auto rec = trainer.train_step(batch);
        const auto wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        nlohmann::ordered_json j;
        j["step"] = step;
        j["lr"] = rec.lr;
        j["depth_loss"] = rec.depth_loss;
        j["diffusion_loss"] = rec.diffusion_loss;
        j["total"] = rec.total;
        j["wall_ms"] = wall_ms;
        log << j.dump() << '\n';
        log.flush();
        if (first) {
            res.first = rec;
            first = false;
        }
        res.last = rec;
        if (options.on_log) {
            options.on_log(j.dump());
        }
        const auto done = trainer.state().step;
        if (trainer.config().val_every > 0 && done % trainer.config().val_every == 0 && done < total) {
            if (auto report = validate()) {
                consider(*report);
            }
        }
    }
    res.final_val = validate();
    if (res.final_val) {
        consider(*res.final_val);
    }
    const auto final_ckpt = trainer.checkpoint();
    save_checkpoint(final_ckpt, options.out_dir / "final.ckpt");
    if (!std::filesystem::exists(options.out_dir / "best.ckpt") || val.empty()) {
        save_checkpoint(final_ckpt, options.out_dir / "best.ckpt");
    }
    return res;
}

DepthModel model_from_checkpoint(const Checkpoint& ckpt) {
    DepthModel model(ckpt.model, ckpt.seed);
    load_parameters(*model, ckpt.groups);
    model->frozen().digest = model->frozen().recompute_digest();
    for (auto& p : model->parameters(true)) {
        p.set_requires_grad(false);
    }
    model->eval();
    return model;
}

}  // namespace sedepth
