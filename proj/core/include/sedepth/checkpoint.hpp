#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "sedepth/core_types.hpp"
#include "sedepth/optimizer.hpp"

namespace sedepth {

/// Loop position plus the captured random state.
struct TrainState {
    std::int64_t step = 0;
    std::int64_t epoch = 0;
    /// Index of the next sample in the current epoch's permutation.
    std::int64_t cursor = 0;
    /// Textual std::mt19937_64 state.
    std::string rng_state;
    double best_metric = std::numeric_limits<double>::infinity();
    std::int64_t best_step = -1;
    std::map<std::string, std::string> group_digests;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelConfig model;
    std::uint64_t seed = 0;
    TrainState state;
    /// Trainer settings, informational.
    KvPairs trainer;
    /// Parameter tensors keyed by freeze-policy group name.
    std::map<std::string, std::vector<NamedTensor>> groups;
    std::int64_t optimizer_step = 0;
    std::vector<NamedTensor> exp_avg;
    std::vector<NamedTensor> exp_avg_sq;
};

/// Versioned single-file container: header, config block, per-group sections
/// each with its digest, optimizer moments, and a SHA-256 footer over
/// everything before it. Written to a temporary file and renamed into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Throws DataError for an unreadable, truncated or corrupt file, or when a
/// group's tensors no longer match the digest recorded for it.
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Also throws ConfigError naming the first field where the stored model
/// config differs from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace sedepth
