#include "sedepth/freeze_policy.hpp"

#include "sedepth/errors.hpp"
#include "sedepth/nn_common.hpp"

namespace sedepth {

namespace {

constexpr std::pair<ParamGroup, std::string_view> kNames[] = {
    {ParamGroup::LatentEncoder, "latent_encoder"}, {ParamGroup::SemanticFrozen, "semantic_frozen"},
    {ParamGroup::DilatedConv, "dilated_conv"},     {ParamGroup::SpatialAttention, "spatial_attention"},
    {ParamGroup::UNet, "unet"},                    {ParamGroup::DepthDecoder, "depth_decoder"},
};

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

}  // namespace

std::string group_name(ParamGroup group) {
    for (const auto& [g, name] : kNames) {
        if (g == group) {
            return std::string(name);
        }
    }
    throw Error("unknown parameter group");
}

std::optional<ParamGroup> parse_group(std::string_view name) {
    for (const auto& [g, n] : kNames) {
        if (n == name) {
            return g;
        }
    }
    return std::nullopt;
}

std::optional<ParamGroup> classify_parameter(std::string_view name) {
    if (starts_with(name, "latent.")) {
        return ParamGroup::LatentEncoder;
    }
    if (starts_with(name, "semantic.")) {
        if (name.find(".dilated.") != std::string_view::npos) {
            return ParamGroup::DilatedConv;
        }
        if (name.find(".spatial_attn.") != std::string_view::npos) {
            return ParamGroup::SpatialAttention;
        }
        return ParamGroup::SemanticFrozen;
    }
    if (starts_with(name, "unet.")) {
        return ParamGroup::UNet;
    }
    if (starts_with(name, "decoder.")) {
        return ParamGroup::DepthDecoder;
    }
    return std::nullopt;
}

GroupedParameters group_parameters(const torch::nn::Module& model) {
    GroupedParameters out;
    for (const auto& item : model.named_parameters(true)) {
        const auto group = classify_parameter(item.key());
        if (!group) {
            throw Error("parameter '" + item.key() + "' belongs to no freeze-policy group");
        }
        out[*group].emplace_back(item.key(), item.value());
    }
    return out;
}

void FreezePolicy::apply(const GroupedParameters& groups) const {
    for (const auto& [group, params] : groups) {
        for (const auto& [name, p] : params) {
            p.set_requires_grad(!is_frozen(group));
        }
    }
}

std::map<std::string, std::string> group_digests(const GroupedParameters& groups) {
    std::map<std::string, std::string> out;
    for (const auto& [group, params] : groups) {
        out[group_name(group)] = parameter_digest(params);
    }
    return out;
}

AdamW build_optimizer(const torch::nn::Module& model, const FreezePolicy& policy, AdamWConfig config) {
    const auto groups = group_parameters(model);
    policy.apply(groups);
    std::vector<NamedTensor> trainable;
    for (const auto& [group, params] : groups) {
        if (!policy.is_frozen(group)) {
            trainable.insert(trainable.end(), params.begin(), params.end());
        }
    }
    return AdamW(std::move(trainable), config);
}

}  // namespace sedepth
