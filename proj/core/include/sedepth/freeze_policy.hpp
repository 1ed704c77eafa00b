#pragma once

#include <torch/torch.h>

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "sedepth/optimizer.hpp"

namespace sedepth {

enum class ParamGroup { LatentEncoder, SemanticFrozen, DilatedConv, SpatialAttention, UNet, DepthDecoder };

std::string group_name(ParamGroup group);
std::optional<ParamGroup> parse_group(std::string_view name);

/// Group of a full parameter name of a DepthModel, or nullopt.
std::optional<ParamGroup> classify_parameter(std::string_view name);

using GroupedParameters = std::map<ParamGroup, std::vector<NamedTensor>>;

/// Partitions every parameter; throws Error naming the first parameter that
/// belongs to no group.
GroupedParameters group_parameters(const torch::nn::Module& model);

struct FreezePolicy {
    std::set<ParamGroup> frozen{ParamGroup::LatentEncoder, ParamGroup::SemanticFrozen};

    bool is_frozen(ParamGroup group) const { return frozen.count(group) != 0; }
    /// Sets requires_grad per group.
    void apply(const GroupedParameters& groups) const;
};

/// Parameter digest of each group, keyed by group name.
std::map<std::string, std::string> group_digests(const GroupedParameters& groups);

/// Decoupled-decay optimizer over the trainable groups only.
AdamW build_optimizer(const torch::nn::Module& model, const FreezePolicy& policy, AdamWConfig config = {});

}  // namespace sedepth
