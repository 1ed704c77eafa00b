#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <sedepth/data_pipeline.hpp>
#include <sedepth/metrics_eval.hpp>
#include <sedepth/trainer.hpp>

namespace sedepth::cli {

/// Everything a subcommand can be configured with. Keys use the prefixes
/// model., augment., eval., train., synth. and paths.
struct RunConfig {
    ModelConfig model;
    AugmentConfig augment;
    EvalProtocolConfig eval;
    TrainerConfig train;
    SyntheticSceneSpec synth;
    std::int64_t n_train = 8;
    std::int64_t n_val = 2;
    std::string data_root = "data";
    std::string out_dir = "out";
    /// Set when a config file or override touched a model.* key.
    bool model_overridden = false;

    void bind(KvBinder& binder);
    /// Defaults, then the config file (if any), then `key=value` overrides in order.
    static RunConfig load(const std::optional<std::filesystem::path>& config_file,
                          const std::vector<std::string>& overrides);
    std::string dump();
};

struct AblationTag {
    std::string name;
    bool dilated_conv = false;
    bool spatial_attention = false;

    ModelConfig apply(ModelConfig config) const;
};

/// "base", "dc", "sa", "dc_sa" or "all". Throws ConfigError otherwise.
std::vector<AblationTag> ablation_tags(const std::string& spec);

/// Writes `<data_root>/{train,val}.txt` and the PNG pairs.
void run_synth(const RunConfig& run);

/// Trains into `<out_dir>` (or `<out_dir>/<tag>/` for several tags).
void run_train(const RunConfig& run, const std::string& ablation, const std::optional<std::filesystem::path>& resume);

/// Evaluates a checkpoint (or `<dir>/<tag>/final.ckpt` per tag) on a split and
/// writes metrics.json, metrics.txt and metrics_table.txt. A non-empty
/// `override_predictor` replaces the checkpoint model.
std::vector<MetricsReport> run_eval(const RunConfig& run, const std::filesystem::path& checkpoint,
                                    const std::string& split, const std::string& ablation,
                                    const SamplePredictor& override_predictor = {});

/// Writes `<out_dir>/<stem>_depth.png` (16-bit) and `<stem>_preview.png`.
/// Returns the predicted depth.
torch::Tensor run_predict(const RunConfig& run, const std::filesystem::path& checkpoint,
                          const std::filesystem::path& image, bool fuse,
                          const ImagePredictor& override_predictor = {});

/// Scores a predicted depth PNG against a ground-truth depth PNG.
MetricsReport run_metrics(const RunConfig& run, const std::filesystem::path& pred, const std::filesystem::path& gt);

/// Line plot of the total loss from a training log.
void run_plot(const std::filesystem::path& log, const std::filesystem::path& out_png);

/// Full command line; returns the process exit code.
int main_entry(int argc, char** argv);

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

}  // namespace sedepth::cli
