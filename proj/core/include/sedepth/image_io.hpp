#pragma once

#include <filesystem>
#include <string>

#include "sedepth/core_types.hpp"

namespace sedepth {

/// 16-bit depth encoding: stored = round(meters * 256), 0 = invalid.
inline constexpr double kDepthPngScale = 256.0;

RgbImage read_rgb_png(const std::filesystem::path& path);
void write_rgb_png(const std::filesystem::path& path, const RgbImage& image);

/// Returns an (H, W) float tensor in meters. Throws DataError for anything
/// other than a single-channel 16-bit PNG.
torch::Tensor read_depth_png(const std::filesystem::path& path);
void write_depth_png(const std::filesystem::path& path, const torch::Tensor& depth);

/// Writes an 8-bit viridis preview with the fixed range [lo, hi].
void write_depth_preview(const std::filesystem::path& path, const torch::Tensor& depth, double lo, double hi);

struct SamplePaths {
    std::filesystem::path rgb;
    std::filesystem::path depth;
};

/// `<root>/<split>/<frame_id>.png` and `<root>/<split>/<frame_id>_depth.png`.
SamplePaths sample_paths(const std::filesystem::path& root, const std::string& split, const std::string& frame_id);
std::filesystem::path manifest_path(const std::filesystem::path& root, const std::string& split);

void write_sample(const std::filesystem::path& root, const std::string& split, const RgbdSample& sample);
RgbdSample read_sample(const SamplePaths& paths, const std::string& frame_id);

/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace sedepth
