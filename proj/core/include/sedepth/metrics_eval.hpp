#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sedepth/core_types.hpp"
#include "sedepth/kv_config.hpp"

namespace sedepth {

struct MetricsReport {
    double delta1 = 0.0;
    double delta2 = 0.0;
    double delta3 = 0.0;
    double rmse = 0.0;
    double abs_rel = 0.0;
    double sq_rel = 0.0;
    std::int64_t n_valid = 0;
    std::int64_t n_samples = 0;

    /// `key=value` lines with the exact field names.
    std::string to_kv_text() const;
    std::string to_json() const;
    static MetricsReport from_json(const std::string& text);
    /// Header plus one row: d1 d2 d3 RMSE AbsRel SqRel.
    std::string to_table(const std::string& row_label = "") const;
};

/// Full-scale reference values of the combined DC+SA model on the KITTI
/// Eigen split. Documentation constants; not reproducible at desk scale.
struct KittiReference {
    static constexpr double delta1 = 0.974;
    static constexpr double delta2 = 0.997;
    static constexpr double delta3 = 0.999;
    static constexpr double rmse = 2.179;
    static constexpr double abs_rel = 0.052;
    static constexpr double sq_rel = 0.162;
};

/// The six metrics over `mask`. Predictions are clamped to [min_depth,
/// depth_cap] first; delta thresholds use strict `<`. Throws DataError
/// (naming `frame_id`) for an empty mask.
MetricsReport compute_metrics(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask,
                              double min_depth = 1e-3, double depth_cap = 80.0, const std::string& frame_id = "");

/// Rows [0.40810811 H, 0.99189189 H) and cols [0.03594771 W, 0.96405229 W), floored.
torch::Tensor garg_crop_mask(std::int64_t height, std::int64_t width);

struct EvalProtocolConfig {
    bool use_garg_crop = true;
    double min_depth = 1e-3;
    double depth_cap = 80.0;
    bool use_split_fuse = false;
    double split_overlap = 0.2;
    bool flip_augment = true;
    /// Segments are replicate-padded to this multiple before prediction.
    std::int64_t pad_multiple = 1;

    void validate() const;
    void bind(KvBinder& binder, const std::string& prefix = "eval.");
};

/// Maps an RGB (3, H, W) tensor to a depth (H, W) tensor of the same size.
using ImagePredictor = std::function<torch::Tensor(const torch::Tensor&)>;
/// Maps a sample to a depth (H, W) tensor matching its ground truth.
using SamplePredictor = std::function<torch::Tensor(const RgbdSample&)>;

/// Left/right segments of width ceil(W (1 + overlap) / 2), each predicted
/// on itself and (optionally) its mirror, then stitched with a linear ramp
/// across the overlap. Output width is exactly W.
torch::Tensor split_flip_fuse_predict(const ImagePredictor& predict, const torch::Tensor& image,
                                      const EvalProtocolConfig& cfg);

/// Mean of per-sample metric values; n_valid summed, n_samples counted.
MetricsReport aggregate_reports(const std::vector<MetricsReport>& reports);

struct EvalResult {
    MetricsReport report;
    std::vector<MetricsReport> per_sample;
    std::vector<std::string> warnings;
};

/// Per-sample mask = valid_mask AND garg crop (if enabled) AND gt <= depth_cap.
/// Samples whose effective mask is empty are skipped with a warning.
EvalResult evaluate_split(const SamplePredictor& predict, const std::vector<RgbdSample>& samples,
                          const EvalProtocolConfig& cfg);

}  // namespace sedepth
