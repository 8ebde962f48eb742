// ftk: train, evaluate, and inspect image classifiers from a JSON config.
//
// Exit codes: 0 success, 1 internal error, 2 bad config/dataset/checkpoint
// or usage, 3 numerical divergence.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ftk/checkpoint.hpp"
#include "ftk/data.hpp"
#include "ftk/metrics.hpp"
#include "ftk/models.hpp"
#include "ftk/ops.hpp"
#include "ftk/trainer.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitInternal = 1;
constexpr int kExitInput = 2;
constexpr int kExitDiverged = 3;

struct TrainArgs {
    std::string config;
    std::string data;
    std::string out;
    std::optional<std::uint64_t> seed;
    bool no_augment = false;
    bool no_timing = false;
    bool quiet = false;
};

struct EvaluateArgs {
    std::string checkpoint;
    std::string manifest;
    std::string config;
    std::string data;
    std::string out;
    bool force = false;
};

struct PredictArgs {
    std::string checkpoint;
    std::string config;
    std::vector<std::string> images;
};

struct SplitArgs {
    std::string data;
    double fraction = 0.75;
    std::uint64_t seed = 0;
    std::string out;
};

struct ExtractArgs {
    std::string checkpoint;
    std::string config;
    std::string data;
    std::string out;
};

ftk::TrainerConfig config_with_data(const std::string& path, const std::string& data) {
    auto cfg = ftk::load_config(path);
    if (!data.empty()) {
        cfg.data_root = data;
    }
    return cfg;
}

// Builds the config's model sized for the checkpoint's class list and
// loads every tensor into it.
ftk::BuiltModel load_full_model(ftk::TrainerConfig& cfg, const fs::path& checkpoint, ftk::Meta& meta) {
    meta = ftk::read_checkpoint_header(checkpoint).meta;
    auto arch = meta.find("arch");
    if (arch != meta.end() && arch->second != ftk::arch_name(cfg.model.arch)) {
        throw ftk::ConfigError("checkpoint " + checkpoint.string() + " holds a " + arch->second +
                               " model, config asks for " + ftk::arch_name(cfg.model.arch));
    }
    const auto classes = ftk::classes_from_meta(meta);
    cfg.model.num_classes = classes.size();
    ftk::BuiltModel model = ftk::build_model(cfg.model, cfg.seeds.init);
    for (const auto& w : ftk::load_into(model.params, checkpoint)) {
        std::cerr << "warning: " << w << '\n';
    }
    return model;
}

int run_train(const TrainArgs& a) {
    auto cfg = config_with_data(a.config, a.data);
    if (!a.out.empty()) {
        cfg.output_dir = a.out;
    }
    if (a.seed) {
        cfg.seeds = {*a.seed, *a.seed, *a.seed};
        cfg.split_seed = *a.seed;
    }
    if (a.no_augment) {
        cfg.augmentation.enabled = false;
    }
    ftk::RunOptions opts;
    opts.record_timing = !a.no_timing;
    opts.log = a.quiet ? nullptr : &std::cout;
    const auto result = ftk::run_training(cfg, opts);
    std::cout << "best.ftk1 written to " << (fs::path(cfg.output_dir) / "best.ftk1").string() << " (best_epoch "
              << result.history.best_epoch << ", " << ftk::stop_reason_name(result.history.stop_reason) << ")\n";
    return 0;
}

int run_evaluate(const EvaluateArgs& a) {
    auto cfg = config_with_data(a.config, a.data);
    fs::path checkpoint = a.checkpoint;
    if (checkpoint.empty()) {
        if (cfg.output_dir.empty()) {
            throw ftk::ConfigError("no --checkpoint given and the config has no output_dir");
        }
        checkpoint = fs::path(cfg.output_dir) / "best.ftk1";
    }
    ftk::Meta meta;
    const auto manifest = ftk::read_manifest(a.manifest);
    const auto header = ftk::read_checkpoint_header(checkpoint);
    auto digest = header.meta.find("config_digest");
    if (digest != header.meta.end() && digest->second != manifest.config_digest && !a.force) {
        throw ftk::ConfigError("manifest digest " + manifest.config_digest + " does not match checkpoint digest " +
                               digest->second + " (use --force to override)");
    }
    ftk::BuiltModel model = load_full_model(cfg, checkpoint, meta);
    const auto ds = ftk::load_dataset(cfg.data_root);
    if (ds.classes != ftk::classes_from_meta(meta)) {
        throw ftk::ConfigError("dataset classes differ from the checkpoint's class list");
    }
    const auto subset = ftk::select(ds, manifest);
    const auto result = ftk::evaluate(model, subset, ftk::eval_pipeline(cfg), cfg.batch_size);

    const fs::path out_dir = a.out.empty() ? checkpoint.parent_path() : fs::path(a.out);
    fs::create_directories(out_dir.empty() ? fs::path(".") : out_dir);
    const fs::path csv = out_dir / ("confusion-" + fs::path(a.manifest).stem().string() + ".csv");
    ftk::write_confusion_csv(result.confusion, ds.classes, csv, manifest.config_digest);
    ftk::write_accuracy_json(result.confusion, ds.classes,
                             out_dir / ("accuracy-" + fs::path(a.manifest).stem().string() + ".json"),
                             manifest.config_digest);

    char line[160];
    std::snprintf(line, sizeof line, "accuracy=%.17g loss=%.17g samples=%zu\n", ftk::accuracy(result.confusion),
                  result.loss, subset.size());
    std::cout << line << "confusion matrix written to " << csv.string() << '\n';
    return 0;
}

int run_predict(const PredictArgs& a) {
    if (a.images.empty()) {
        throw ftk::ConfigError("predict needs at least one image path");
    }
    auto cfg = ftk::load_config(a.config);
    ftk::Meta meta;
    ftk::BuiltModel model = load_full_model(cfg, a.checkpoint, meta);
    const auto classes = ftk::classes_from_meta(meta);
    const auto pipeline = ftk::eval_pipeline(cfg);
    for (const auto& path : a.images) {
        ftk::Tensor image;
        try {
            image = ftk::augment(ftk::read_ppm(path), pipeline, 0, 0);
        } catch (const ftk::Error& e) {
            throw ftk::DataError("cannot use image " + path + ": " + e.what());
        }
        const ftk::Tensor batch = ftk::stack_images(std::span<const ftk::Tensor>(&image, 1));
        const ftk::Var logprobs = model.forward(ftk::Var(batch), ftk::Mode::eval);
        const std::size_t cls = ftk::argmax_rows(logprobs.value()).at(0);
        char lp[64];
        std::snprintf(lp, sizeof lp, "%.6f", logprobs.value().item(cls));
        std::cout << path << '\t' << classes.at(cls) << '\t' << lp << '\n';
    }
    return 0;
}

int run_split(const SplitArgs& a) {
    const auto ds = ftk::load_dataset(a.data);
    ftk::TrainerConfig cfg;
    cfg.data_root = a.data;
    cfg.split_fraction = a.fraction;
    cfg.split_seed = a.seed;
    cfg.validate();
    const auto digest = ftk::config_digest(cfg);
    const auto [train, val] = ftk::stratified_split(ds, {a.fraction, a.seed, true});
    fs::create_directories(a.out);
    ftk::write_manifest(fs::path(a.out) / "train.manifest", train, digest);
    ftk::write_manifest(fs::path(a.out) / "val.manifest", val, digest);
    std::cout << "train=" << train.size() << " val=" << val.size() << " digest=" << digest << '\n';
    return 0;
}

int run_extract(const ExtractArgs& a) {
    auto cfg = config_with_data(a.config, a.data);
    const auto ds = ftk::load_dataset(cfg.data_root);
    cfg.model.num_classes = ds.num_classes();
    ftk::BuiltModel model = ftk::build_model(cfg.model, cfg.seeds.init);
    for (const auto& w : ftk::load_backbone(model, a.checkpoint)) {
        std::cerr << "warning: " << w << '\n';
    }
    ftk::freeze_backbone(model);

    const auto pipeline = ftk::eval_pipeline(cfg);
    ftk::Snapshot out;
    std::vector<float> labels;
    ftk::BatchStream stream(ds, {.batch_size = cfg.batch_size, .shuffle = false}, &pipeline);
    while (auto batch = stream.next()) {
        const ftk::Tensor feats = ftk::feature_extract(model, batch->images);
        const std::size_t width = feats.dim(1);
        const auto src = feats.cspan<float>();
        for (std::size_t i = 0; i < batch->labels.size(); ++i) {
            std::vector<float> row(src.begin() + static_cast<std::ptrdiff_t>(i * width),
                                   src.begin() + static_cast<std::ptrdiff_t>((i + 1) * width));
            out.push_back({"feat." + std::to_string(out.size()), ftk::Tensor({width}, std::move(row))});
            labels.push_back(static_cast<float>(batch->labels[i]));
        }
    }
    const std::size_t n = out.size();
    out.push_back({"label", ftk::Tensor({n}, std::move(labels))});
    auto meta = ftk::checkpoint_meta(cfg, ds, ftk::config_digest(cfg));
    meta["source_checkpoint"] = a.checkpoint;
    meta["feature_width"] = std::to_string(model.feature_width);
    ftk::save_tensors(out, meta, a.out);
    std::cout << "features for " << n << " samples written to " << a.out << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fine-tune image classifiers with frozen backbones"};
    app.require_subcommand(1);

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Run the full training lifecycle from a config");
    train_cmd->add_option("--config", train.config, "Config JSON")->required();
    train_cmd->add_option("--data", train.data, "Dataset root (overrides data_root)");
    train_cmd->add_option("--out", train.out, "Output directory (overrides output_dir)");
    train_cmd->add_option("--seed", train.seed, "Use this value for every seed (init, shuffle, augment, split)");
    train_cmd->add_flag("--no-augment", train.no_augment, "Drop the stochastic augmentation ops");
    train_cmd->add_flag("--no-timing", train.no_timing, "Record wall_seconds as 0 for reproducible outputs");
    train_cmd->add_flag("--quiet", train.quiet, "No per-epoch progress lines");

    EvaluateArgs eval;
    auto* eval_cmd = app.add_subcommand("evaluate", "Accuracy and confusion matrix over a manifest");
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "Weights file (default: <output_dir>/best.ftk1)");
    eval_cmd->add_option("--manifest", eval.manifest, "Manifest of samples to evaluate")->required();
    eval_cmd->add_option("--config", eval.config, "Config JSON")->required();
    eval_cmd->add_option("--data", eval.data, "Dataset root (overrides data_root)");
    eval_cmd->add_option("--out", eval.out, "Directory for the confusion CSV (default: checkpoint's directory)");
    eval_cmd->add_flag("--force", eval.force, "Evaluate even if manifest and checkpoint digests differ");

    PredictArgs predict;
    auto* predict_cmd = app.add_subcommand("predict", "Predicted class and log-probability per image");
    predict_cmd->add_option("--checkpoint", predict.checkpoint, "Weights file")->required();
    predict_cmd->add_option("--config", predict.config, "Config JSON")->required();
    predict_cmd->add_option("images", predict.images, "PPM images");

    SplitArgs split;
    auto* split_cmd = app.add_subcommand("split", "Write stratified train/val manifests");
    split_cmd->add_option("--data", split.data, "Dataset root")->required();
    split_cmd->add_option("--fraction", split.fraction, "Train fraction")->capture_default_str();
    split_cmd->add_option("--seed", split.seed, "Split seed")->capture_default_str();
    split_cmd->add_option("--out", split.out, "Output directory")->required();

    ExtractArgs extract;
    auto* extract_cmd = app.add_subcommand("extract-features", "Cache frozen-backbone features as an FTK1 file");
    extract_cmd->add_option("--checkpoint", extract.checkpoint, "Backbone weights")->required();
    extract_cmd->add_option("--config", extract.config, "Config JSON")->required();
    extract_cmd->add_option("--data", extract.data, "Dataset root (overrides data_root)");
    extract_cmd->add_option("--out", extract.out, "Output FTK1 file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInput;
    }

    try {
        if (*train_cmd) return run_train(train);
        if (*eval_cmd) return run_evaluate(eval);
        if (*predict_cmd) return run_predict(predict);
        if (*split_cmd) return run_split(split);
        if (*extract_cmd) return run_extract(extract);
    } catch (const ftk::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        if (*predict_cmd && predict.images.empty()) {
            std::cerr << predict_cmd->help();
        }
        return kExitInput;
    } catch (const ftk::DivergenceError& e) {
        std::cerr << "error: training diverged: " << e.what() << '\n';
        return kExitDiverged;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return kExitInternal;
    }
    return kExitInternal;
}
