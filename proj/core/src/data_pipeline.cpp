#include "sedepth/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

namespace sedepth {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

torch::Tensor normalize_rgb(const torch::Tensor& rgb) { return rgb * 2.0 - 1.0; }

// ---------------------------------------------------------------------------
// Manifest

Manifest load_manifest(const fs::path& root, const std::string& split) {
    const auto path = manifest_path(root, split);
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot read manifest " + path.string());
    }
    Manifest m;
    std::unordered_set<std::string> seen;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) {
            line.pop_back();
        }
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos) {
            continue;
        }
        std::string id = line.substr(first);
        if (!seen.insert(id).second) {
            m.issues.push_back({ManifestIssue::Kind::DuplicateId, id, "duplicate frame id ignored"});
            continue;
        }
        auto paths = sample_paths(root, split, id);
        bool ok = true;
        for (const auto* p : {&paths.rgb, &paths.depth}) {
            if (!fs::exists(*p)) {
                m.issues.push_back({ManifestIssue::Kind::MissingFile, id, "missing file " + p->string()});
                ok = false;
            }
        }
        if (ok) {
            m.refs.push_back({std::move(id), std::move(paths)});
        }
    }
    return m;
}

void write_manifest(const fs::path& root, const std::string& split, const std::vector<std::string>& ids) {
    std::string body;
    for (const auto& id : ids) {
        body += id;
        body += '\n';
    }
    write_file_atomic(manifest_path(root, split), body);
}

std::vector<RgbdSample> load_samples(const Manifest& manifest) {
    std::vector<RgbdSample> out;
    out.reserve(manifest.refs.size());
    for (const auto& ref : manifest.refs) {
        out.push_back(read_sample(ref.paths, ref.frame_id));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation

namespace {

double uniform(Rng& rng, double lo, double hi) {
    const double u = std::generate_canonical<double, 53>(rng);
    return lo + (hi - lo) * u;
}

void bind_interval(KvBinder& b, const std::string& key, Interval& iv) {
    b.bind(key + "_lo", iv.lo);
    b.bind(key + "_hi", iv.hi);
}

torch::Tensor luma(const torch::Tensor& rgb) { return rgb[0] * 0.299 + rgb[1] * 0.587 + rgb[2] * 0.114; }

torch::Tensor shift_hue(const torch::Tensor& rgb, double shift) {
    auto r = rgb[0];
    auto g = rgb[1];
    auto b = rgb[2];
    auto maxc = torch::maximum(torch::maximum(r, g), b);
    auto minc = torch::minimum(torch::minimum(r, g), b);
    auto delta = maxc - minc;
    auto safe = torch::where(delta > 0, delta, torch::ones_like(delta));
    auto hr = ((g - b) / safe).remainder(6.0);
    auto hg = (b - r) / safe + 2.0;
    auto hb = (r - g) / safe + 4.0;
    auto h = torch::where(maxc == r, hr, torch::where(maxc == g, hg, hb));
    h = torch::where(delta > 0, h, torch::zeros_like(h)) / 6.0;
    auto s = torch::where(maxc > 0, delta / torch::where(maxc > 0, maxc, torch::ones_like(maxc)), torch::zeros_like(maxc));
    auto v = maxc;

    h = (h + shift).remainder(1.0);
    auto h6 = h * 6.0;
    auto sector = h6.floor();
    auto frac = h6 - sector;
    auto p = v * (1.0 - s);
    auto q = v * (1.0 - s * frac);
    auto t = v * (1.0 - s * (1.0 - frac));
    auto pick = [&](const torch::Tensor& a0, const torch::Tensor& a1, const torch::Tensor& a2, const torch::Tensor& a3,
                    const torch::Tensor& a4, const torch::Tensor& a5) {
        auto out = torch::where(sector == 0, a0, a5);
        out = torch::where(sector == 1, a1, out);
        out = torch::where(sector == 2, a2, out);
        out = torch::where(sector == 3, a3, out);
        out = torch::where(sector == 4, a4, out);
        return out;
    };
    return torch::stack({pick(v, q, p, p, t, v), pick(t, v, v, q, p, p), pick(p, p, t, v, v, q)}, 0);
}

}  // namespace

AugmentConfig AugmentConfig::kitti() {
    AugmentConfig cfg;
    cfg.crop_hw = {352, 704};
    return cfg;
}

AugmentConfig AugmentConfig::neutral() {
    AugmentConfig cfg;
    cfg.flip_prob = 0.0;
    cfg.brightness = {0.0, 0.0};
    cfg.contrast = {1.0, 1.0};
    cfg.gamma = {1.0, 1.0};
    cfg.hue = {0.0, 0.0};
    cfg.saturation = {1.0, 1.0};
    return cfg;
}

void AugmentConfig::validate() const {
    if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) {
        throw ConfigError("augment.flip_prob", "must lie in [0, 1]");
    }
    const std::pair<const char*, const Interval*> ranges[] = {{"augment.brightness", &brightness},
                                                              {"augment.contrast", &contrast},
                                                              {"augment.gamma", &gamma},
                                                              {"augment.hue", &hue},
                                                              {"augment.saturation", &saturation}};
    for (const auto& [name, iv] : ranges) {
        if (!(iv->lo <= iv->hi)) {
            throw ConfigError(name, "range must satisfy lo <= hi");
        }
    }
    if (contrast.lo <= 0.0 || gamma.lo <= 0.0 || saturation.lo < 0.0) {
        throw ConfigError("augment", "contrast and gamma must be positive, saturation nonnegative");
    }
    if (crop_hw.first < 0 || crop_hw.second < 0) {
        throw ConfigError("augment.crop_h", "crop size must be nonnegative");
    }
}

void AugmentConfig::bind(KvBinder& b, const std::string& p) {
    b.bind(p + "flip_prob", flip_prob);
    b.bind(p + "crop_h", crop_hw.first);
    b.bind(p + "crop_w", crop_hw.second);
    bind_interval(b, p + "brightness", brightness);
    bind_interval(b, p + "contrast", contrast);
    bind_interval(b, p + "gamma", gamma);
    bind_interval(b, p + "hue", hue);
    bind_interval(b, p + "saturation", saturation);
    b.bind(p + "seed", seed);
}

AugmentParams draw_augment(const AugmentConfig& cfg, std::int64_t height, std::int64_t width, Rng& rng) {
    AugmentParams p;
    p.flip = std::generate_canonical<double, 53>(rng) < cfg.flip_prob;
    p.crop_h = height;
    p.crop_w = width;
    if (cfg.crop_hw.first > 0 && cfg.crop_hw.second > 0) {
        if (cfg.crop_hw.first > height || cfg.crop_hw.second > width) {
            throw ConfigError("augment.crop_h", "crop " + std::to_string(cfg.crop_hw.first) + "x" +
                                                    std::to_string(cfg.crop_hw.second) + " exceeds sample " +
                                                    std::to_string(height) + "x" + std::to_string(width));
        }
        p.crop_h = cfg.crop_hw.first;
        p.crop_w = cfg.crop_hw.second;
        p.crop_top = std::uniform_int_distribution<std::int64_t>(0, height - p.crop_h)(rng);
        p.crop_left = std::uniform_int_distribution<std::int64_t>(0, width - p.crop_w)(rng);
    }
    p.brightness = uniform(rng, cfg.brightness.lo, cfg.brightness.hi);
    p.contrast = uniform(rng, cfg.contrast.lo, cfg.contrast.hi);
    p.gamma = uniform(rng, cfg.gamma.lo, cfg.gamma.hi);
    p.hue = uniform(rng, cfg.hue.lo, cfg.hue.hi);
    p.saturation = uniform(rng, cfg.saturation.lo, cfg.saturation.hi);
    return p;
}

torch::Tensor hflip(const torch::Tensor& t) { return t.flip({-1}); }

RgbdSample apply_augment(const RgbdSample& sample, const AugmentParams& p) {
    auto img = sample.image.data;
    auto depth = sample.depth.data;
    auto mask = sample.depth.valid_mask;

    if (p.crop_top != 0 || p.crop_left != 0 || p.crop_h != img.size(1) || p.crop_w != img.size(2)) {
        auto crop = [&](const torch::Tensor& t) {
            return t.narrow(-2, p.crop_top, p.crop_h).narrow(-1, p.crop_left, p.crop_w).contiguous();
        };
        img = crop(img);
        depth = crop(depth);
        mask = crop(mask);
    }
    if (p.flip) {
        img = hflip(img);
        depth = hflip(depth);
        mask = hflip(mask);
    }
    if (p.brightness != 0.0) {
        img = (img + p.brightness).clamp(0.0, 1.0);
    }
    if (p.contrast != 1.0) {
        const double mean = luma(img).mean().item<double>();
        img = (img * p.contrast + mean * (1.0 - p.contrast)).clamp(0.0, 1.0);
    }
    if (p.gamma != 1.0) {
        img = img.clamp_min(0.0).pow(p.gamma);
    }
    if (p.hue != 0.0) {
        img = shift_hue(img, p.hue).clamp(0.0, 1.0);
    }
    if (p.saturation != 1.0) {
        img = (img * p.saturation + luma(img).unsqueeze(0) * (1.0 - p.saturation)).clamp(0.0, 1.0);
    }
    return RgbdSample{RgbImage{img}, DepthMap{depth, mask}, sample.frame_id};
}

RgbdSample augment(const RgbdSample& sample, const AugmentConfig& cfg, Rng& rng) {
    return apply_augment(sample, draw_augment(cfg, sample.image.height(), sample.image.width(), rng));
}

// ---------------------------------------------------------------------------
// Resizing

RgbdSample resize_cross_dataset(const RgbdSample& sample, std::pair<std::int64_t, std::int64_t> target_hw) {
    const auto [th, tw] = target_hw;
    if (th < kMinInputSize || tw < kMinInputSize) {
        throw ConfigError("target_hw", "target dims must be >= 32");
    }
    if (th == sample.image.height() && tw == sample.image.width()) {
        return sample;
    }
    const std::vector<std::int64_t> size{th, tw};
    auto img = F::interpolate(sample.image.data.unsqueeze(0),
                              F::InterpolateFuncOptions().size(size).mode(torch::kBilinear).align_corners(false))
                   .squeeze(0)
                   .clamp(0.0, 1.0);
    auto depth = F::interpolate(sample.depth.data.unsqueeze(0).unsqueeze(0),
                                F::InterpolateFuncOptions().size(size).mode(torch::kNearest))
                     .squeeze(0)
                     .squeeze(0);
    return RgbdSample{RgbImage{img}, DepthMap::from_depth(depth), sample.frame_id};
}

torch::Tensor pad_to_multiple(const torch::Tensor& t, std::int64_t multiple) {
    const auto h = t.size(-2);
    const auto w = t.size(-1);
    const auto ph = (multiple - h % multiple) % multiple;
    const auto pw = (multiple - w % multiple) % multiple;
    if (ph == 0 && pw == 0) {
        return t;
    }
    auto x = t;
    const auto extra = 4 - t.dim();
    for (auto i = 0; i < extra; ++i) {
        x = x.unsqueeze(0);
    }
    x = F::pad(x, F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReplicate));
    for (auto i = 0; i < extra; ++i) {
        x = x.squeeze(0);
    }
    return x;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

void SyntheticSceneSpec::validate() const {
    if (height < 8 || width < 8) {
        throw ConfigError("synth.height", "scene must be at least 8x8");
    }
    if (n_shapes < 0) {
        throw ConfigError("synth.n_shapes", "must be >= 0");
    }
    if (!(depth_range.lo > 0.0 && depth_range.lo < depth_range.hi)) {
        throw ConfigError("synth.depth_min", "need 0 < depth_min < depth_max");
    }
    if (depth_range.hi * 256.0 > 65535.0) {
        throw ConfigError("synth.depth_max", "exceeds the 16-bit PNG range (255.99 m)");
    }
    if (!(sparsity > 0.0 && sparsity <= 1.0)) {
        throw ConfigError("synth.sparsity", "must lie in (0, 1]");
    }
}

void SyntheticSceneSpec::bind(KvBinder& b, const std::string& p) {
    b.bind(p + "height", height);
    b.bind(p + "width", width);
    b.bind(p + "n_shapes", n_shapes);
    b.bind(p + "depth_min", depth_range.lo);
    b.bind(p + "depth_max", depth_range.hi);
    b.bind(p + "sparsity", sparsity);
    b.bind(p + "seed", seed);
}

KvPairs SyntheticSceneSpec::to_kv() const {
    SyntheticSceneSpec copy = *this;
    KvBinder b;
    copy.bind(b);
    return b.dump();
}

SyntheticSceneSpec SyntheticSceneSpec::from_kv(const KvPairs& pairs) {
    SyntheticSceneSpec spec;
    KvBinder b;
    spec.bind(b);
    b.apply(pairs);
    return spec;
}

RgbdSample generate_synthetic(const SyntheticSceneSpec& spec, const std::string& frame_id) {
    spec.validate();
    const auto H = spec.height;
    const auto W = spec.width;
    const double lo = spec.depth_range.lo;
    const double hi = spec.depth_range.hi;
    Rng rng(spec.seed);
    std::normal_distribution<double> noise(0.0, 0.03);

    auto quantize = [](double d) { return std::round(d * 256.0) / 256.0; };
    // Near = warm, far = cool.
    auto palette = [&](double d, double jitter, double out[3]) {
        const double u = std::clamp((d - lo) / (hi - lo), 0.0, 1.0);
        out[0] = 0.90 - 0.75 * u + jitter;
        out[1] = 0.35 + 0.30 * std::sin(3.14159265358979 * u) + jitter;
        out[2] = 0.15 + 0.75 * u + jitter;
    };

    std::vector<double> depth(static_cast<std::size_t>(H * W));
    std::vector<double> jitter(depth.size(), 0.0);

    const auto horizon = static_cast<std::int64_t>(0.35 * static_cast<double>(H));
    for (std::int64_t r = 0; r < H; ++r) {
        double d = hi;
        if (r > horizon) {
            const double t = static_cast<double>(r - horizon) / static_cast<double>(H - horizon);
            d = hi - (hi - lo) * std::sqrt(t);
        }
        for (std::int64_t c = 0; c < W; ++c) {
            depth[static_cast<std::size_t>(r * W + c)] = quantize(d);
        }
    }

    struct Shape {
        bool ellipse;
        double cy, cx, ry, rx, depth, jitter;
    };
    std::vector<Shape> shapes;
    for (std::int64_t i = 0; i < spec.n_shapes; ++i) {
        Shape s{};
        s.ellipse = uniform(rng, 0.0, 1.0) < 0.5;
        s.cy = uniform(rng, 0.2, 0.9) * static_cast<double>(H);
        s.cx = uniform(rng, 0.05, 0.95) * static_cast<double>(W);
        s.ry = uniform(rng, 0.08, 0.22) * static_cast<double>(H);
        s.rx = uniform(rng, 0.06, 0.2) * static_cast<double>(W);
        s.depth = quantize(uniform(rng, lo, hi * 0.8));
        s.jitter = uniform(rng, -0.08, 0.08);
        shapes.push_back(s);
    }
    std::stable_sort(shapes.begin(), shapes.end(), [](const Shape& a, const Shape& b) { return a.depth > b.depth; });
    for (const auto& s : shapes) {
        for (std::int64_t r = 0; r < H; ++r) {
            for (std::int64_t c = 0; c < W; ++c) {
                const double dy = (static_cast<double>(r) + 0.5 - s.cy) / s.ry;
                const double dx = (static_cast<double>(c) + 0.5 - s.cx) / s.rx;
                const bool inside = s.ellipse ? (dx * dx + dy * dy <= 1.0) : (std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0);
                if (inside) {
                    const auto idx = static_cast<std::size_t>(r * W + c);
                    depth[idx] = s.depth;
                    jitter[idx] = s.jitter;
                }
            }
        }
    }

    auto rgb = torch::empty({3, H, W}, torch::kFloat32);
    auto depth_t = torch::empty({H, W}, torch::kFloat32);
    auto rgb_a = rgb.accessor<float, 3>();
    auto depth_a = depth_t.accessor<float, 2>();
    for (std::int64_t r = 0; r < H; ++r) {
        for (std::int64_t c = 0; c < W; ++c) {
            const auto idx = static_cast<std::size_t>(r * W + c);
            double color[3];
            palette(depth[idx], jitter[idx], color);
            for (int ch = 0; ch < 3; ++ch) {
                rgb_a[ch][r][c] = static_cast<float>(std::clamp(color[ch] + noise(rng), 0.0, 1.0));
            }
            const bool keep = std::generate_canonical<double, 53>(rng) < spec.sparsity;
            depth_a[r][c] = keep ? static_cast<float>(depth[idx]) : 0.0f;
        }
    }
    return RgbdSample{RgbImage{rgb}, DepthMap::from_depth(depth_t), frame_id};
}

}  // namespace sedepth
