#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sedepth/checkpoint.hpp"
#include "sedepth/data_pipeline.hpp"
#include "sedepth/freeze_policy.hpp"
#include "sedepth/metrics_eval.hpp"
#include "sedepth/optimizer.hpp"
#include "sedepth/pipeline.hpp"

namespace sedepth {

/// Cosine warmup from lr_init to lr_max over floor(warmup_fraction *
/// total_steps) steps, then cosine decay to lr_init / final_div.
struct OneCycleSchedule {
    double lr_init = 4e-5;
    double lr_max = 6e-4;
    std::int64_t total_steps = 1000;
    double warmup_fraction = 0.3;
    double final_div = 10.0;

    void validate() const;
    std::int64_t peak_step() const;
    double lr_floor() const { return lr_init / final_div; }
};

/// Throws ConfigError for a step outside [0, total_steps].
double lr_at(std::int64_t step, const OneCycleSchedule& schedule);

struct TrainerConfig {
    std::int64_t total_steps = 1000;
    std::int64_t batch_size = 4;
    double lr_init = 4e-5;
    double lr_max = 6e-4;
    double warmup_fraction = 0.3;
    double weight_decay = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double grad_clip = 1.0;
    /// Weight of the noise-prediction loss; 0 trains on noise-free features.
    double lambda_dm = 0.0;
    std::uint64_t seed = 0;
    /// Validation period in steps; 0 validates only after the last step.
    std::int64_t val_every = 0;

    void validate() const;
    void bind(KvBinder& binder, const std::string& prefix = "train.");
    OneCycleSchedule schedule() const;
    AdamWConfig adamw() const;
};

struct LossRecord {
    double depth_loss = 0.0;
    double diffusion_loss = 0.0;
    double total = 0.0;
    double lr = 0.0;
};

class Trainer {
public:
    Trainer(const ModelConfig& model, const TrainerConfig& config, AugmentConfig augment = AugmentConfig::neutral(),
            FreezePolicy policy = {});

    DepthModel& model() { return model_; }
    const TrainerConfig& config() const { return config_; }
    const TrainState& state() const { return state_; }
    const AdamW& optimizer() const { return optimizer_; }
    GroupedParameters groups() const { return group_parameters(*model_); }

    /// Next batch_size samples of the epoch permutation, augmented. Advances
    /// the cursor and the epoch counter.
    std::vector<RgbdSample> next_batch(const std::vector<RgbdSample>& dataset);

    /// One optimizer step. Throws NumericError naming the batch's frame ids
    /// when a loss is not finite; nothing is updated in that case.
    LossRecord train_step(const std::vector<RgbdSample>& batch);

    Checkpoint checkpoint() const;
    /// Throws ConfigError on a model config mismatch and Error when the
    /// checkpoint lacks or misshapes a parameter.
    void restore(const Checkpoint& ckpt);

    /// Noise-free prediction for one sample, (H, W).
    torch::Tensor predict(const RgbdSample& sample);

    void set_best(double metric, std::int64_t step);

private:
    ModelConfig model_config_;
    TrainerConfig config_;
    AugmentConfig augment_;
    FreezePolicy policy_;
    OneCycleSchedule schedule_;
    DepthModel model_;
    AdamW optimizer_;
    TrainState state_;
    Rng rng_;
};

struct FitOptions {
    std::filesystem::path out_dir;
    EvalProtocolConfig eval;
    /// Also validates once before the first step.
    bool validate_at_start = false;
    std::function<void(const std::string&)> on_log;
};

struct FitResult {
    LossRecord first;
    LossRecord last;
    std::optional<MetricsReport> initial_val;
    std::optional<MetricsReport> final_val;
    std::optional<MetricsReport> best_val;
};

/// Runs the trainer to total_steps. Appends one JSON record per step to
/// `<out_dir>/train_log.jsonl` and writes `final.ckpt` and `best.ckpt`
/// (lowest validation abs_rel; the final state when `val` is empty).
FitResult fit(Trainer& trainer, const std::vector<RgbdSample>& train, const std::vector<RgbdSample>& val,
              const FitOptions& options);

/// Model with the checkpoint's config and parameters, ready for inference.
DepthModel model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace sedepth
