#include "sedepth_cli/cli.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <sedepth/image_io.hpp>
#include <sedepth/nn_common.hpp>

namespace fs = std::filesystem;

namespace sedepth::cli {

void RunConfig::bind(KvBinder& b) {
    model.bind(b, "model.");
    augment.bind(b, "augment.");
    eval.bind(b, "eval.");
    train.bind(b, "train.");
    synth.bind(b, "synth.");
    b.bind("synth.n_train", n_train);
    b.bind("synth.n_val", n_val);
    b.bind("paths.data", data_root);
    b.bind("paths.out", out_dir);
}

RunConfig RunConfig::load(const std::optional<fs::path>& config_file, const std::vector<std::string>& overrides) {
    RunConfig run;
    KvBinder binder;
    run.bind(binder);
    auto touch = [&](const std::string& key) {
        if (key.rfind("model.", 0) == 0) {
            run.model_overridden = true;
        }
    };
    if (config_file) {
        if (!fs::exists(*config_file)) {
            throw ConfigError("--config", "no such file " + config_file->string());
        }
        const auto pairs = read_kv_file(*config_file);
        binder.apply(pairs);
        for (const auto& [k, v] : pairs) {
            touch(k);
        }
    }
    for (const auto& o : overrides) {
        const auto [k, v] = split_override(o);
        binder.set(k, v);
        touch(k);
    }
    run.model.validate();
    run.augment.validate();
    run.eval.validate();
    run.train.validate();
    run.synth.validate();
    if (run.n_train < 0) {
        throw ConfigError("synth.n_train", "must be >= 0");
    }
    if (run.n_val < 0) {
        throw ConfigError("synth.n_val", "must be >= 0");
    }
    return run;
}

std::string RunConfig::dump() {
    KvBinder binder;
    bind(binder);
    return format_kv(binder.dump());
}

ModelConfig AblationTag::apply(ModelConfig config) const {
    config.use_dilated_conv = dilated_conv;
    config.use_spatial_attention = spatial_attention;
    return config;
}

std::vector<AblationTag> ablation_tags(const std::string& spec) {
    const std::vector<AblationTag> all{{"base", false, false}, {"dc", true, false}, {"sa", false, true},
                                       {"dc_sa", true, true}};
    if (spec == "all") {
        return all;
    }
    for (const auto& t : all) {
        if (t.name == spec) {
            return {t};
        }
    }
    throw ConfigError("--ablation", "expected base, dc, sa, dc_sa or all, got '" + spec + "'");
}

namespace {

std::vector<RgbdSample> load_split(const fs::path& root, const std::string& split) {
    const auto manifest = load_manifest(root, split);
    for (const auto& issue : manifest.issues) {
        std::cerr << "warning: " << split << " manifest: " << issue.frame_id << ": " << issue.detail << "\n";
    }
    return load_samples(manifest);
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    write_file_atomic(path, text);
}

void write_reports(const fs::path& dir, const MetricsReport& report, const std::string& label) {
    write_text(dir / "metrics.json", report.to_json());
    write_text(dir / "metrics.txt", report.to_kv_text());
    write_text(dir / "metrics_table.txt", report.to_table(label));
}

}  // namespace

void run_synth(const RunConfig& run) {
    const fs::path root = run.data_root;
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec || !fs::is_directory(root)) {
        throw DataError("cannot create dataset directory " + root.string());
    }
    for (const auto& [split, count] : {std::pair<std::string, std::int64_t>{"train", run.n_train}, {"val", run.n_val}}) {
        std::vector<std::string> ids;
        for (std::int64_t i = 0; i < count; ++i) {
            char id[32];
            std::snprintf(id, sizeof(id), "%s_%04lld", split.c_str(), static_cast<long long>(i));
            auto spec = run.synth;
            spec.seed = derive_seed(run.synth.seed, id);
            write_sample(root, split, generate_synthetic(spec, id));
            ids.emplace_back(id);
        }
        write_manifest(root, split, ids);
    }
    std::cout << "wrote " << run.n_train << " train and " << run.n_val << " val samples to " << root.string()
              << "\n";
}

void run_train(const RunConfig& run, const std::string& ablation, const std::optional<fs::path>& resume) {
    const fs::path root = run.data_root;
    const auto train = load_split(root, "train");
    if (train.empty()) {
        throw DataError("training manifest " + manifest_path(root, "train").string() + " lists no usable samples");
    }
    std::vector<RgbdSample> val;
    if (fs::exists(manifest_path(root, "val"))) {
        val = load_split(root, "val");
    } else {
        std::cerr << "warning: no validation manifest at " << manifest_path(root, "val").string() << "\n";
    }

    std::vector<std::optional<AblationTag>> targets;
    if (ablation.empty()) {
        targets.emplace_back(std::nullopt);
    } else {
        for (const auto& t : ablation_tags(ablation)) {
            targets.emplace_back(t);
        }
    }
    if (resume && targets.size() > 1) {
        throw ConfigError("--resume", "cannot resume several ablation runs at once");
    }
    for (const auto& tag : targets) {
        const auto model_cfg = tag ? tag->apply(run.model) : run.model;
        const fs::path out = targets.size() > 1 ? fs::path(run.out_dir) / tag->name : fs::path(run.out_dir);
        Trainer trainer(model_cfg, run.train, run.augment);
        if (resume) {
            trainer.restore(load_checkpoint(*resume, model_cfg));
            std::cout << "resuming from step " << trainer.state().step << "\n";
        }
        fs::create_directories(out);
        auto resolved = run;
        resolved.model = model_cfg;
        write_text(out / "run_config.txt", resolved.dump());

        FitOptions opts;
        opts.out_dir = out;
        opts.eval = run.eval;
        opts.validate_at_start = trainer.state().step == 0;
        opts.on_log = [](const std::string& line) {
            if (line.rfind("warning:", 0) == 0) {
                std::cerr << line << "\n";
                return;
            }
            const auto j = nlohmann::json::parse(line);
            if (j.at("step").get<std::int64_t>() % 20 == 0) {
                std::cout << line << "\n";
            }
        };
        const auto result = fit(trainer, train, val, opts);
        const std::string label = tag ? tag->name : "val";
        if (result.initial_val) {
            write_text(out / "val_step0.json", result.initial_val->to_json());
        }
        if (result.final_val) {
            write_reports(out, *result.final_val, label);
            std::cout << result.final_val->to_table(label);
        }
        std::cout << "final total loss " << result.last.total << "; checkpoints in " << out.string() << "\n";
    }
}

std::vector<MetricsReport> run_eval(const RunConfig& run, const fs::path& checkpoint, const std::string& split,
                                    const std::string& ablation, const SamplePredictor& override_predictor) {
    const auto samples = load_split(run.data_root, split);
    if (samples.empty()) {
        throw DataError("split '" + split + "' has no usable samples");
    }
    auto evaluate = [&](const SamplePredictor& predictor, const fs::path& out, const std::string& label) {
        auto result = evaluate_split(predictor, samples, run.eval);
        for (const auto& w : result.warnings) {
            std::cerr << "warning: " << w << "\n";
        }
        if (result.report.n_samples == 0) {
            throw DataError("no sample of split '" + split + "' has a non-empty evaluation mask");
        }
        write_reports(out, result.report, label);
        std::cout << result.report.to_table(label);
        return result.report;
    };

    if (override_predictor) {
        return {evaluate(override_predictor, run.out_dir, ablation.empty() ? split : ablation)};
    }

    std::vector<std::optional<AblationTag>> targets;
    if (ablation.empty()) {
        targets.emplace_back(std::nullopt);
    } else {
        for (const auto& t : ablation_tags(ablation)) {
            targets.emplace_back(t);
        }
    }
    const bool is_dir = fs::is_directory(checkpoint);
    if (targets.size() > 1 && !is_dir) {
        throw ConfigError("--checkpoint", "--ablation all needs a directory holding <tag>/final.ckpt");
    }
    std::vector<MetricsReport> reports;
    std::string combined;
    for (const auto& tag : targets) {
        fs::path path = checkpoint;
        if (is_dir) {
            path = (tag && targets.size() > 1) ? checkpoint / tag->name / "final.ckpt" : checkpoint / "final.ckpt";
        }
        Checkpoint ckpt;
        if (run.model_overridden) {
            ckpt = load_checkpoint(path, tag ? tag->apply(run.model) : run.model);
        } else {
            ckpt = load_checkpoint(path);
            if (tag && ckpt.model.use_dilated_conv != tag->dilated_conv) {
                throw ConfigError("model.use_dilated_conv", "checkpoint " + path.string() + " does not match --ablation " + tag->name);
            }
            if (tag && ckpt.model.use_spatial_attention != tag->spatial_attention) {
                throw ConfigError("model.use_spatial_attention", "checkpoint " + path.string() + " does not match --ablation " + tag->name);
            }
        }
        auto model = model_from_checkpoint(ckpt);
        const ImagePredictor image_predictor = [&](const torch::Tensor& img) { return model->predict(img); };
        const SamplePredictor predictor = [&](const RgbdSample& s) {
            return run.eval.use_split_fuse ? split_flip_fuse_predict(image_predictor, s.image.data, run.eval)
                                           : image_predictor(s.image.data);
        };
        const fs::path out = targets.size() > 1 ? fs::path(run.out_dir) / tag->name : fs::path(run.out_dir);
        const std::string label = tag ? tag->name : split;
        reports.push_back(evaluate(predictor, out, label));
        combined += reports.back().to_table(label);
    }
    if (targets.size() > 1) {
        write_text(fs::path(run.out_dir) / "ablation_table.txt", combined);
    }
    return reports;
}

torch::Tensor run_predict(const RunConfig& run, const fs::path& checkpoint, const fs::path& image, bool fuse,
                          const ImagePredictor& override_predictor) {
    const auto rgb = read_rgb_png(image);
    ModelConfig model_cfg = run.model;
    ImagePredictor predict = override_predictor;
    DepthModel model{nullptr};
    if (!predict) {
        auto ckpt = run.model_overridden ? load_checkpoint(checkpoint, run.model) : load_checkpoint(checkpoint);
        model_cfg = ckpt.model;
        model = model_from_checkpoint(ckpt);
        predict = [&](const torch::Tensor& img) { return model->predict(img); };
    }
    if (rgb.height() < kMinInputSize || rgb.width() < kMinInputSize) {
        throw ShapeError("image " + image.string() + " is smaller than " + std::to_string(kMinInputSize) +
                         " pixels per side");
    }
    auto depth = fuse ? split_flip_fuse_predict(predict, rgb.data, run.eval) : predict(rgb.data);
    if (!torch::isfinite(depth).all().item<bool>()) {
        throw NumericError("non-finite depth predicted for " + image.string());
    }
    const fs::path out = run.out_dir;
    fs::create_directories(out);
    const auto stem = image.stem().string();
    write_depth_png(out / (stem + "_depth.png"), depth);
    write_depth_preview(out / (stem + "_preview.png"), depth, model_cfg.min_depth, model_cfg.max_depth);
    std::cout << "wrote " << (out / (stem + "_depth.png")).string() << " (" << depth.size(0) << "x" << depth.size(1)
              << ")\n";
    return depth;
}

MetricsReport run_metrics(const RunConfig& run, const fs::path& pred, const fs::path& gt) {
    const auto p = read_depth_png(pred);
    const auto g = DepthMap::from_depth(read_depth_png(gt));
    if (p.sizes() != g.data.sizes()) {
        throw ShapeError("prediction " + pred.string() + " and ground truth " + gt.string() + " differ in size");
    }
    auto mask = g.valid_mask & (g.data <= run.eval.depth_cap);
    if (run.eval.use_garg_crop) {
        mask = mask & garg_crop_mask(g.height(), g.width());
    }
    const auto report = compute_metrics(p, g.data, mask, run.eval.min_depth, run.eval.depth_cap, gt.stem().string());
    std::cout << report.to_kv_text() << report.to_table(pred.stem().string());
    return report;
}

void run_plot(const fs::path& log, const fs::path& out_png) {
    std::ifstream in(log);
    if (!in) {
        throw DataError("cannot read training log " + log.string());
    }
    std::vector<double> totals;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        try {
            totals.push_back(nlohmann::json::parse(line).at("total").get<double>());
        } catch (const nlohmann::json::exception&) {
            throw DataError("malformed training log record in " + log.string());
        }
    }
    if (totals.empty()) {
        throw DataError("training log " + log.string() + " is empty");
    }
    constexpr int width = 640;
    constexpr int height = 400;
    constexpr int margin = 40;
    cv::Mat canvas(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
    std::vector<double> ys;
    for (double t : totals) {
        ys.push_back(std::log10(std::max(t, 1e-12)));
    }
    const auto [lo_it, hi_it] = std::minmax_element(ys.begin(), ys.end());
    const double lo = *lo_it;
    const double hi = *hi_it > lo ? *hi_it : lo + 1.0;
    std::vector<cv::Point> pts;
    for (std::size_t i = 0; i < ys.size(); ++i) {
        const double fx = ys.size() > 1 ? static_cast<double>(i) / static_cast<double>(ys.size() - 1) : 0.0;
        const double fy = (ys[i] - lo) / (hi - lo);
        pts.emplace_back(margin + static_cast<int>(fx * (width - 2 * margin)),
                         height - margin - static_cast<int>(fy * (height - 2 * margin)));
    }
    cv::rectangle(canvas, {margin, margin}, {width - margin, height - margin}, cv::Scalar(160, 160, 160));
    cv::polylines(canvas, pts, false, cv::Scalar(180, 90, 30), 1, cv::LINE_AA);
    cv::putText(canvas, "log10 total loss", {margin, margin - 12}, cv::FONT_HERSHEY_SIMPLEX, 0.5, cv::Scalar(0, 0, 0));
    if (!out_png.parent_path().empty()) {
        fs::create_directories(out_png.parent_path());
    }
    if (!cv::imwrite(out_png.string(), canvas)) {
        throw DataError("cannot write " + out_png.string());
    }
}

namespace {

struct CommonFlags {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string data;

    void add(CLI::App* app, bool with_data) {
        app->add_option("--config", config, "key = value config file");
        app->add_option("--set", sets, "override, key=value (repeatable)");
        app->add_option("--seed", seed, "seed for training and synthesis");
        app->add_option("--out", out, "output directory");
        if (with_data) {
            app->add_option("--data", data, "dataset root");
        }
    }

    RunConfig load(const std::vector<std::string>& extra = {}) const {
        auto overrides = sets;
        if (seed) {
            overrides.push_back("train.seed=" + std::to_string(*seed));
            overrides.push_back("synth.seed=" + std::to_string(*seed));
        }
        if (!out.empty()) {
            overrides.push_back("paths.out=" + out);
        }
        if (!data.empty()) {
            overrides.push_back("paths.data=" + data);
        }
        overrides.insert(overrides.end(), extra.begin(), extra.end());
        return RunConfig::load(config.empty() ? std::nullopt : std::optional<fs::path>(config), overrides);
    }
};

std::vector<std::string> garg_override(const CLI::Option* flag, bool value) {
    if (flag->count() == 0) {
        return {};
    }
    return {std::string("eval.use_garg_crop=") + (value ? "true" : "false")};
}

}  // namespace

int main_entry(int argc, char** argv) {
    CLI::App app{"sedepth: semantic-guided latent-diffusion monocular depth estimation"};
    app.require_subcommand(1);

    CommonFlags synth_flags;
    std::optional<std::int64_t> n_train;
    std::optional<std::int64_t> n_val;
    auto* synth = app.add_subcommand("synth", "generate a synthetic RGB-D dataset");
    synth_flags.add(synth, false);
    synth->add_option("--n-train", n_train, "training samples");
    synth->add_option("--n-val", n_val, "validation samples");

    CommonFlags train_flags;
    std::string train_ablation;
    std::string resume;
    auto* train = app.add_subcommand("train", "train a model");
    train_flags.add(train, true);
    train->add_option("--ablation", train_ablation, "base, dc, sa, dc_sa or all");
    train->add_option("--resume", resume, "checkpoint to resume from");

    CommonFlags eval_flags;
    std::string eval_ckpt;
    std::string eval_split = "val";
    std::string eval_ablation;
    bool eval_fuse = false;
    bool eval_garg = true;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    eval_flags.add(eval, true);
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint file or ablation directory")->required();
    eval->add_option("--split", eval_split, "split name");
    eval->add_option("--ablation", eval_ablation, "base, dc, sa, dc_sa or all");
    eval->add_flag("--fuse", eval_fuse, "split-flip-fuse prediction");
    auto* eval_garg_flag = eval->add_flag("--garg-crop,!--no-garg-crop", eval_garg, "apply the Garg crop");

    CommonFlags predict_flags;
    std::string predict_ckpt;
    std::string predict_image;
    bool predict_fuse = false;
    auto* predict = app.add_subcommand("predict", "predict depth for one image");
    predict_flags.add(predict, false);
    predict->add_option("--checkpoint", predict_ckpt, "checkpoint file")->required();
    predict->add_option("--image", predict_image, "RGB PNG")->required();
    predict->add_flag("--fuse", predict_fuse, "split-flip-fuse prediction");

    CommonFlags metrics_flags;
    std::string metrics_pred;
    std::string metrics_gt;
    bool metrics_garg = true;
    auto* metrics = app.add_subcommand("metrics", "score a depth PNG against ground truth");
    metrics_flags.add(metrics, false);
    metrics->add_option("--pred", metrics_pred, "predicted depth PNG")->required();
    metrics->add_option("--gt", metrics_gt, "ground-truth depth PNG")->required();
    auto* metrics_garg_flag = metrics->add_flag("--garg-crop,!--no-garg-crop", metrics_garg, "apply the Garg crop");

    std::string plot_log;
    std::string plot_out = "loss.png";
    auto* plot = app.add_subcommand("plot", "plot the loss curve of a training log");
    plot->add_option("--log", plot_log, "train_log.jsonl")->required();
    plot->add_option("--out", plot_out, "output PNG");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);
        }
        std::cerr << "error:usage: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (synth->parsed()) {
            std::vector<std::string> extra;
            if (!synth_flags.out.empty()) {
                extra.push_back("paths.data=" + synth_flags.out);
            }
            if (n_train) {
                extra.push_back("synth.n_train=" + std::to_string(*n_train));
            }
            if (n_val) {
                extra.push_back("synth.n_val=" + std::to_string(*n_val));
            }
            run_synth(synth_flags.load(extra));
        } else if (train->parsed()) {
            run_train(train_flags.load(), train_ablation,
                      resume.empty() ? std::nullopt : std::optional<fs::path>(resume));
        } else if (eval->parsed()) {
            auto extra = garg_override(eval_garg_flag, eval_garg);
            if (eval_fuse) {
                extra.push_back("eval.use_split_fuse=true");
            }
            run_eval(eval_flags.load(extra), eval_ckpt, eval_split, eval_ablation);
        } else if (predict->parsed()) {
            run_predict(predict_flags.load(), predict_ckpt, predict_image, predict_fuse);
        } else if (metrics->parsed()) {
            run_metrics(metrics_flags.load(garg_override(metrics_garg_flag, metrics_garg)), metrics_pred, metrics_gt);
        } else if (plot->parsed()) {
            run_plot(plot_log, plot_out);
        }
    } catch (const NumericError& e) {
        std::cerr << "error:" << e.category() << ": " << e.what() << "\n";
        return kExitNumeric;
    } catch (const Error& e) {
        std::cerr << "error:" << e.category() << ": " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error:internal: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}

}  // namespace sedepth::cli
