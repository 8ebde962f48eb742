#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>

#include "ftk/augment.hpp"
#include "ftk/checkpoint.hpp"
#include "ftk/data.hpp"
#include "ftk/metrics.hpp"
#include "ftk/models.hpp"
#include "ftk/optim.hpp"

namespace ftk {

struct AugmentConfig {
    bool enabled = true;
    double blur_probability = 0.3;
    double blur_sigma_min = 0.1;
    double blur_sigma_max = 1.0;
    double hflip = 0.5;
    double vflip = 0.5;
    double rot90 = 1.0;
    std::array<double, 3> mean{0.485, 0.456, 0.406};
    std::array<double, 3> std{0.229, 0.224, 0.225};
};

struct SeedConfig {
    std::uint64_t init = 0;
    std::uint64_t shuffle = 0;
    std::uint64_t augment = 0;
};

/// Everything a training run depends on. Loaded from one JSON document;
/// omitted keys keep these defaults.
struct TrainerConfig {
    std::string data_root;
    // num_classes 0 means "take it from the dataset".
    ModelConfig model = [] {
        ModelConfig m;
        m.num_classes = 0;
        return m;
    }();
    std::size_t batch_size = 64;
    std::size_t max_epochs = 25;
    double lr = 1e-4;
    double clip_max_norm = 0.1;
    double scheduler_factor = 0.1;
    std::size_t scheduler_patience = 2;
    double scheduler_min_lr = 1e-7;
    std::string scheduler_monitor = "val_loss";
    std::size_t early_stop_patience = 5;
    std::string early_stop_monitor = "val_acc";
    double split_fraction = 0.75;
    std::uint64_t split_seed = 0;
    AugmentConfig augmentation;
    SeedConfig seeds;
    bool freeze_backbone = true;
    std::string init_checkpoint;
    std::string output_dir;

    void validate() const;
};

// Throws ConfigError on malformed JSON, unknown keys, or bad values. A
// "config_digest" key (as in resolved-config.json) is accepted and ignored.
TrainerConfig parse_config(const std::string& json_text);
TrainerConfig load_config(const std::filesystem::path& path);
// Every field, pretty-printed.
std::string config_to_json(const TrainerConfig& cfg);
// config_to_json plus the digest, as written to resolved-config.json.
std::string resolved_config_json(const TrainerConfig& cfg, const std::string& digest);
// 16 hex digits of FNV-1a over the resolved config with output_dir blanked.
std::string config_digest(const TrainerConfig& cfg);

// Training pipeline: the configured ops, or only resize + normalize when
// augmentation is disabled. Validation always uses the deterministic form.
AugmentPipeline train_pipeline(const TrainerConfig& cfg);
AugmentPipeline eval_pipeline(const TrainerConfig& cfg);

// "val_loss" and "train_loss" are minimized, "val_acc" and "train_acc" maximized.
MonitorMode monitor_mode(const std::string& monitor);

struct StepResult {
    double loss = 0;  // mean over the batch
    std::size_t correct = 0;
};

// One optimizer step: forward in train mode, nll, backward, clip, Adam.
// Throws DivergenceError on a non-finite loss.
StepResult train_batch(BuiltModel& model, Adam& adam, const Tensor& images, std::span<const std::size_t> labels,
                       const ClipConfig& clip, std::uint64_t dropout_seed);

struct EvalResult {
    double loss = 0;  // mean over samples
    ConfusionMatrix confusion;
};

// Eval-mode pass over ds with the deterministic pipeline.
EvalResult evaluate(BuiltModel& model, const Dataset& ds, const AugmentPipeline& pipeline, std::size_t batch_size);

// Copies every "features." tensor of the file into the model; other names
// in the file are returned as warnings.
std::vector<std::string> load_backbone(BuiltModel& model, const std::filesystem::path& path);

// Weights file meta: arch, classes (JSON array), config_digest, num_classes.
Meta checkpoint_meta(const TrainerConfig& cfg, const Dataset& ds, const std::string& digest);
std::vector<std::string> classes_from_meta(const Meta& meta);

struct RunOptions {
    bool record_timing = true;
    // Progress lines; nullptr for silence.
    std::ostream* log = nullptr;
};

struct RunResult {
    History history;
    ConfusionMatrix confusion{1};
    double best_val_acc = 0;
    double final_val_acc = 0;
    std::string digest;
};

/// Full lifecycle: load and split the dataset, build (and optionally
/// freeze) the model, run the epoch loop, restore the best weights, and
/// write history.json, history.csv, confusion.csv, accuracy.json, best.ftk1,
/// train.manifest, val.manifest, and resolved-config.json to output_dir.
///
/// The output directory is created only after the dataset loads.
RunResult run_training(const TrainerConfig& cfg, const RunOptions& opts = {});

} // namespace ftk
