#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sedepth/core_types.hpp"
#include "sedepth/image_io.hpp"
#include "sedepth/kv_config.hpp"

namespace sedepth {

/// [0, 1] RGB -> [-1, 1] model input.
torch::Tensor normalize_rgb(const torch::Tensor& rgb);

using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct SampleRef {
    std::string frame_id;
    SamplePaths paths;
};

struct ManifestIssue {
    enum class Kind { DuplicateId, MissingFile };
    Kind kind;
    std::string frame_id;
    std::string detail;
};

struct Manifest {
    std::vector<SampleRef> refs;
    std::vector<ManifestIssue> issues;
};

/// Reads `<root>/<split>.txt`. Entries keep manifest order, duplicates are
/// dropped with a DuplicateId record, and entries with a missing RGB or depth
/// file are dropped with a MissingFile record naming the path. Throws
/// DataError when the manifest itself cannot be read.
Manifest load_manifest(const std::filesystem::path& root, const std::string& split);
void write_manifest(const std::filesystem::path& root, const std::string& split, const std::vector<std::string>& ids);

std::vector<RgbdSample> load_samples(const Manifest& manifest);

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

struct AugmentConfig {
    double flip_prob = 0.5;
    /// {0, 0} disables cropping.
    std::pair<std::int64_t, std::int64_t> crop_hw{0, 0};
    Interval brightness{-0.2, 0.2};
    Interval contrast{0.8, 1.25};
    Interval gamma{0.9, 1.1};
    Interval hue{-0.05, 0.05};
    Interval saturation{0.8, 1.25};
    std::uint64_t seed = 0;

    /// Crop used on real KITTI-format data.
    static AugmentConfig kitti();
    /// Every operation at its neutral value.
    static AugmentConfig neutral();

    void validate() const;
    void bind(KvBinder& binder, const std::string& prefix = "augment.");
};

/// One concrete draw of the augmentation parameters.
struct AugmentParams {
    bool flip = false;
    std::int64_t crop_top = 0;
    std::int64_t crop_left = 0;
    std::int64_t crop_h = 0;
    std::int64_t crop_w = 0;
    double brightness = 0.0;
    double contrast = 1.0;
    double gamma = 1.0;
    double hue = 0.0;
    double saturation = 1.0;
};

/// Throws ConfigError if the crop exceeds the sample.
AugmentParams draw_augment(const AugmentConfig& cfg, std::int64_t height, std::int64_t width, Rng& rng);

/// Geometric ops (flip, crop) act on image and depth together; photometric ops
/// act on the image only and are skipped at their neutral values.
RgbdSample apply_augment(const RgbdSample& sample, const AugmentParams& params);
RgbdSample augment(const RgbdSample& sample, const AugmentConfig& cfg, Rng& rng);

/// Horizontal mirror of an (..., W) tensor.
torch::Tensor hflip(const torch::Tensor& t);

// ---------------------------------------------------------------------------
// Resizing
// ---------------------------------------------------------------------------

/// Bilinear for RGB, nearest-neighbor for depth, mask re-derived.
RgbdSample resize_cross_dataset(const RgbdSample& sample, std::pair<std::int64_t, std::int64_t> target_hw);

/// Replicate-pads (C, H, W) or (H, W) on the bottom/right to multiples of `multiple`.
torch::Tensor pad_to_multiple(const torch::Tensor& t, std::int64_t multiple);

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

struct SyntheticSceneSpec {
    std::int64_t height = 64;
    std::int64_t width = 64;
    std::int64_t n_shapes = 4;
    Interval depth_range{4.0, 60.0};
    double sparsity = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
    void bind(KvBinder& binder, const std::string& prefix = "synth.");
    KvPairs to_kv() const;
    static SyntheticSceneSpec from_kv(const KvPairs& pairs);
};

/// Layered rectangles and ellipses over a receding ground plane. Each shape
/// has constant depth and nearer shapes occlude farther ones; color follows a
/// depth-correlated palette plus texture noise. Depth values are quantized to
/// the 1/256 m PNG grid so disk round trips are exact. Deterministic in `seed`.
RgbdSample generate_synthetic(const SyntheticSceneSpec& spec, const std::string& frame_id = "synthetic");

}  // namespace sedepth
