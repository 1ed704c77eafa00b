#include "sedepth/metrics_eval.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sedepth/data_pipeline.hpp"

namespace sedepth {

std::string MetricsReport::to_kv_text() const {
    KvPairs kv{{"delta1", format_double(delta1)}, {"delta2", format_double(delta2)},
               {"delta3", format_double(delta3)}, {"rmse", format_double(rmse)},
               {"abs_rel", format_double(abs_rel)}, {"sq_rel", format_double(sq_rel)},
               {"n_valid", std::to_string(n_valid)}, {"n_samples", std::to_string(n_samples)}};
    std::string out;
    for (const auto& [k, v] : kv) {
        out += k + "=" + v + "\n";
    }
    return out;
}

std::string MetricsReport::to_json() const {
    nlohmann::ordered_json j;
    j["delta1"] = delta1;
    j["delta2"] = delta2;
    j["delta3"] = delta3;
    j["rmse"] = rmse;
    j["abs_rel"] = abs_rel;
    j["sq_rel"] = sq_rel;
    j["n_valid"] = n_valid;
    j["n_samples"] = n_samples;
    return j.dump(2) + "\n";
}

MetricsReport MetricsReport::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed metrics report: ") + e.what());
    }
    MetricsReport r;
    try {
        r.delta1 = j.at("delta1").get<double>();
        r.delta2 = j.at("delta2").get<double>();
        r.delta3 = j.at("delta3").get<double>();
        r.rmse = j.at("rmse").get<double>();
        r.abs_rel = j.at("abs_rel").get<double>();
        r.sq_rel = j.at("sq_rel").get<double>();
        r.n_valid = j.at("n_valid").get<std::int64_t>();
        r.n_samples = j.at("n_samples").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("metrics report missing field: ") + e.what());
    }
    return r;
}

std::string MetricsReport::to_table(const std::string& row_label) const {
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof(buf), "%-16s %8s %8s %8s %8s %8s %8s\n", "", "d1", "d2", "d3", "RMSE", "AbsRel",
                  "SqRel");
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-16s %8.3f %8.3f %8.3f %8.3f %8.3f %8.3f\n", row_label.c_str(), delta1, delta2,
                  delta3, rmse, abs_rel, sq_rel);
    out += buf;
    return out;
}

MetricsReport compute_metrics(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask,
                              double min_depth, double depth_cap, const std::string& frame_id) {
    if (pred.sizes() != gt.sizes() || gt.sizes() != mask.sizes()) {
        throw ShapeError("compute_metrics: pred, gt and mask shapes must match" +
                         (frame_id.empty() ? std::string() : " (frame " + frame_id + ")"));
    }
    auto m = mask.to(torch::kBool);
    const auto n = m.sum().item<std::int64_t>();
    if (n == 0) {
        throw DataError("compute_metrics: empty evaluation mask" +
                        (frame_id.empty() ? std::string() : " for frame " + frame_id));
    }
    auto p = pred.detach().to(torch::kFloat64).masked_select(m).clamp(min_depth, depth_cap);
    auto g = gt.detach().to(torch::kFloat64).masked_select(m);

    auto ratio = torch::maximum(p / g, g / p);
    auto diff = p - g;
    MetricsReport r;
    r.delta1 = (ratio < 1.25).to(torch::kFloat64).mean().item<double>();
    r.delta2 = (ratio < 1.25 * 1.25).to(torch::kFloat64).mean().item<double>();
    r.delta3 = (ratio < 1.25 * 1.25 * 1.25).to(torch::kFloat64).mean().item<double>();
    r.abs_rel = (diff.abs() / g).mean().item<double>();
    r.sq_rel = (diff.pow(2) / g).mean().item<double>();
    r.rmse = std::sqrt(diff.pow(2).mean().item<double>());
    r.n_valid = n;
    r.n_samples = 1;
    return r;
}

torch::Tensor garg_crop_mask(std::int64_t height, std::int64_t width) {
    if (height < 8 || width < 8) {
        throw ShapeError("garg_crop_mask needs H, W >= 8");
    }
    const auto h = static_cast<double>(height);
    const auto w = static_cast<double>(width);
    const auto top = static_cast<std::int64_t>(std::floor(0.40810811 * h));
    const auto bottom = static_cast<std::int64_t>(std::floor(0.99189189 * h));
    const auto left = static_cast<std::int64_t>(std::floor(0.03594771 * w));
    const auto right = static_cast<std::int64_t>(std::floor(0.96405229 * w));
    auto mask = torch::zeros({height, width}, torch::kBool);
    mask.slice(0, top, bottom).slice(1, left, right).fill_(true);
    return mask;
}

void EvalProtocolConfig::validate() const {
    if (!(split_overlap >= 0.0 && split_overlap < 1.0)) {
        throw ConfigError("eval.split_overlap", "must lie in [0, 1)");
    }
    if (!(min_depth > 0.0 && depth_cap > min_depth)) {
        throw ConfigError("eval.depth_cap", "need 0 < min_depth < depth_cap");
    }
    if (pad_multiple < 1) {
        throw ConfigError("eval.pad_multiple", "must be >= 1");
    }
}

void EvalProtocolConfig::bind(KvBinder& b, const std::string& p) {
    b.bind(p + "use_garg_crop", use_garg_crop);
    b.bind(p + "min_depth", min_depth);
    b.bind(p + "depth_cap", depth_cap);
    b.bind(p + "use_split_fuse", use_split_fuse);
    b.bind(p + "split_overlap", split_overlap);
    b.bind(p + "flip_augment", flip_augment);
}

namespace {

torch::Tensor predict_padded(const ImagePredictor& predict, const torch::Tensor& segment, std::int64_t multiple) {
    const auto h = segment.size(1);
    const auto w = segment.size(2);
    auto out = predict(pad_to_multiple(segment, multiple));
    return out.slice(0, 0, h).slice(1, 0, w);
}

torch::Tensor predict_segment(const ImagePredictor& predict, const torch::Tensor& segment,
                              const EvalProtocolConfig& cfg) {
    auto direct = predict_padded(predict, segment, cfg.pad_multiple);
    if (!cfg.flip_augment) {
        return direct;
    }
    auto mirrored = hflip(predict_padded(predict, hflip(segment), cfg.pad_multiple));
    return (direct + mirrored) * 0.5;
}

}  // namespace

torch::Tensor split_flip_fuse_predict(const ImagePredictor& predict, const torch::Tensor& image,
                                      const EvalProtocolConfig& cfg) {
    cfg.validate();
    const auto W = image.size(2);
    const auto seg_w = static_cast<std::int64_t>(std::ceil(static_cast<double>(W) * (1.0 + cfg.split_overlap) / 2.0));
    if (seg_w < 1 || seg_w >= W) {
        throw ConfigError("eval.split_overlap", "overlap " + std::to_string(cfg.split_overlap) +
                                                    " too large for width " + std::to_string(W));
    }
    const auto right_start = W - seg_w;
    auto left = predict_segment(predict, image.slice(2, 0, seg_w), cfg);
    auto right = predict_segment(predict, image.slice(2, right_start, W), cfg);

    const auto overlap = seg_w - right_start;  // columns [right_start, seg_w)
    std::vector<torch::Tensor> parts;
    parts.push_back(left.slice(1, 0, right_start));
    if (overlap > 0) {
        auto j = torch::arange(overlap, left.options());
        auto w_left = (static_cast<double>(overlap) - j) / static_cast<double>(overlap + 1);
        auto l = left.slice(1, right_start, seg_w);
        auto r = right.slice(1, 0, overlap);
        parts.push_back(l * w_left + r * (1.0 - w_left));
    }
    parts.push_back(right.slice(1, overlap, seg_w));
    return torch::cat(parts, 1);
}

MetricsReport aggregate_reports(const std::vector<MetricsReport>& reports) {
    MetricsReport out;
    if (reports.empty()) {
        return out;
    }
    for (const auto& r : reports) {
        out.delta1 += r.delta1;
        out.delta2 += r.delta2;
        out.delta3 += r.delta3;
        out.rmse += r.rmse;
        out.abs_rel += r.abs_rel;
        out.sq_rel += r.sq_rel;
        out.n_valid += r.n_valid;
    }
    const auto n = static_cast<double>(reports.size());
    out.delta1 /= n;
    out.delta2 /= n;
    out.delta3 /= n;
    out.rmse /= n;
    out.abs_rel /= n;
    out.sq_rel /= n;
    out.n_samples = static_cast<std::int64_t>(reports.size());
    return out;
}

EvalResult evaluate_split(const SamplePredictor& predict, const std::vector<RgbdSample>& samples,
                          const EvalProtocolConfig& cfg) {
    cfg.validate();
    if (samples.empty()) {
        throw DataError("evaluate_split: empty sample list");
    }
    EvalResult result;
    for (const auto& sample : samples) {
        const auto& gt = sample.depth.data;
        auto mask = sample.depth.valid_mask & (gt <= cfg.depth_cap);
        if (cfg.use_garg_crop) {
            mask = mask & garg_crop_mask(gt.size(0), gt.size(1));
        }
        if (!mask.any().item<bool>()) {
            result.warnings.push_back("frame " + sample.frame_id + ": empty evaluation mask, skipped");
            continue;
        }
        auto pred = predict(sample);
        result.per_sample.push_back(compute_metrics(pred, gt, mask, cfg.min_depth, cfg.depth_cap, sample.frame_id));
    }
    result.report = aggregate_reports(result.per_sample);
    return result;
}

}  // namespace sedepth
