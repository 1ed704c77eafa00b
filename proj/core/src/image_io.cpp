#include "sedepth/image_io.hpp"

#include <fstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace sedepth {

namespace fs = std::filesystem;

namespace {

void ensure_parent(const fs::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) {
            throw DataError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
        }
    }
}

void imwrite_or_throw(const fs::path& path, const cv::Mat& mat) {
    ensure_parent(path);
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), mat);
    } catch (const cv::Exception& e) {
        throw DataError("cannot write " + path.string() + ": " + e.what());
    }
    if (!ok) {
        throw DataError("cannot write " + path.string());
    }
}

}  // namespace

RgbImage read_rgb_png(const fs::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) {
        throw DataError("cannot read image " + path.string());
    }
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    auto hwc = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
    return RgbImage{hwc.permute({2, 0, 1}).to(torch::kFloat32).div_(255.0).contiguous()};
}

void write_rgb_png(const fs::path& path, const RgbImage& image) {
    auto hwc = image.data.detach()
                   .to(torch::kFloat32)
                   .clamp(0.0, 1.0)
                   .mul(255.0)
                   .round()
                   .to(torch::kUInt8)
                   .permute({1, 2, 0})
                   .contiguous();
    cv::Mat rgb(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3, hwc.data_ptr());
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    imwrite_or_throw(path, bgr);
}

torch::Tensor read_depth_png(const fs::path& path) {
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (raw.empty()) {
        throw DataError("cannot read depth " + path.string());
    }
    if (raw.type() != CV_16UC1) {
        throw DataError("depth file " + path.string() + " is not a single-channel 16-bit PNG");
    }
    cv::Mat as_int;
    raw.convertTo(as_int, CV_32S);
    auto t = torch::from_blob(as_int.data, {as_int.rows, as_int.cols}, torch::kInt32).clone();
    return t.to(torch::kFloat32).div_(kDepthPngScale);
}

void write_depth_png(const fs::path& path, const torch::Tensor& depth) {
    auto stored = depth.detach()
                      .to(torch::kFloat64)
                      .mul(kDepthPngScale)
                      .round()
                      .clamp(0.0, 65535.0)
                      .to(torch::kInt32)
                      .contiguous();
    cv::Mat as_int(static_cast<int>(stored.size(0)), static_cast<int>(stored.size(1)), CV_32S, stored.data_ptr());
    cv::Mat out;
    as_int.convertTo(out, CV_16U);
    imwrite_or_throw(path, out);
}

void write_depth_preview(const fs::path& path, const torch::Tensor& depth, double lo, double hi) {
    auto scaled = depth.detach()
                      .to(torch::kFloat64)
                      .sub(lo)
                      .div(hi - lo)
                      .clamp(0.0, 1.0)
                      .mul(255.0)
                      .round()
                      .to(torch::kUInt8)
                      .contiguous();
    cv::Mat gray(static_cast<int>(scaled.size(0)), static_cast<int>(scaled.size(1)), CV_8UC1, scaled.data_ptr());
    cv::Mat color;
    cv::applyColorMap(gray, color, cv::COLORMAP_VIRIDIS);
    imwrite_or_throw(path, color);
}

SamplePaths sample_paths(const fs::path& root, const std::string& split, const std::string& frame_id) {
    const auto dir = root / split;
    return {dir / (frame_id + ".png"), dir / (frame_id + "_depth.png")};
}

fs::path manifest_path(const fs::path& root, const std::string& split) { return root / (split + ".txt"); }

void write_sample(const fs::path& root, const std::string& split, const RgbdSample& sample) {
    const auto paths = sample_paths(root, split, sample.frame_id);
    write_rgb_png(paths.rgb, sample.image);
    write_depth_png(paths.depth, sample.depth.data);
}

RgbdSample read_sample(const SamplePaths& paths, const std::string& frame_id) {
    RgbdSample s;
    s.image = read_rgb_png(paths.rgb);
    s.depth = DepthMap::from_depth(read_depth_png(paths.depth));
    s.frame_id = frame_id;
    return s;
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
    ensure_parent(path);
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DataError("cannot open " + tmp.string() + " for writing");
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw DataError("short write to " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        throw DataError("cannot rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
    }
}

}  // namespace sedepth
