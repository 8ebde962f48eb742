#include "ftk/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ftk/ops.hpp"
#include "ftk/rng.hpp"

namespace ftk {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Rejects keys outside allowed so typos fail loudly.
void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) {
        throw ConfigError(where + " must be a JSON object");
    }
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : obj.items()) {
        if (!ok.contains(key)) {
            throw ConfigError("unknown config key '" + (where.empty() ? key : where + "." + key) + "'");
        }
    }
}

template <class T>
void read_opt(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) {
        out = obj.at(key).get<T>();
    }
}

void validate_monitor(const std::string& monitor, const char* what) {
    if (monitor != "val_loss" && monitor != "val_acc" && monitor != "train_loss" && monitor != "train_acc") {
        throw ConfigError(std::string(what) + " monitor must be val_loss, val_acc, train_loss or train_acc, got '" +
                          monitor + "'");
    }
}

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

double monitored(const std::string& monitor, const EpochRecord& r) {
    if (monitor == "val_loss") return r.val_loss;
    if (monitor == "val_acc") return r.val_acc;
    if (monitor == "train_loss") return r.train_loss;
    return r.train_acc;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    out << text;
    if (!out.flush()) {
        throw IoError("write failed: " + path.string());
    }
}

} // namespace

void TrainerConfig::validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
    if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
    if (!(clip_max_norm > 0) || !std::isfinite(clip_max_norm)) throw ConfigError("clip_max_norm must be positive");
    if (!(scheduler_factor > 0 && scheduler_factor < 1)) throw ConfigError("scheduler.factor must be in (0, 1)");
    if (!(scheduler_min_lr >= 0)) throw ConfigError("scheduler.min_lr must be non-negative");
    if (!(split_fraction > 0 && split_fraction < 1)) throw ConfigError("split.fraction must be in (0, 1)");
    validate_monitor(scheduler_monitor, "scheduler");
    validate_monitor(early_stop_monitor, "early_stop");
    const auto& a = augmentation;
    for (double p : {a.blur_probability, a.hflip, a.vflip, a.rot90}) {
        if (!(p >= 0 && p <= 1)) throw ConfigError("augmentation probabilities must be in [0, 1]");
    }
    if (!(a.blur_sigma_min > 0 && a.blur_sigma_min <= a.blur_sigma_max)) {
        throw ConfigError("augmentation blur sigma range must satisfy 0 < min <= max");
    }
    for (double s : a.std) {
        if (!(s > 0)) throw ConfigError("augmentation std must be positive");
    }
    if (model.num_classes != 0) {
        model.validate();
    } else {
        ModelConfig probe = model;
        probe.num_classes = 1;
        probe.validate();
    }
}

TrainerConfig parse_config(const std::string& json_text) {
    TrainerConfig cfg;
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    try {
        check_keys(doc, "",
                   {"data_root", "model", "batch_size", "max_epochs", "lr", "clip_max_norm", "scheduler", "early_stop",
                    "split", "augmentation", "seeds", "freeze_backbone", "init_checkpoint", "output_dir",
                    "config_digest"});
        read_opt(doc, "data_root", cfg.data_root);
        if (doc.contains("model")) {
            const auto& m = doc.at("model");
            check_keys(m, "model",
                       {"arch", "input_size", "num_classes", "width_factor", "stage_blocks", "dropout", "head_hidden"});
            if (m.contains("arch")) {
                cfg.model.arch = parse_arch(m.at("arch").get<std::string>());
            }
            read_opt(m, "input_size", cfg.model.input_size);
            read_opt(m, "num_classes", cfg.model.num_classes);
            read_opt(m, "width_factor", cfg.model.width_factor);
            read_opt(m, "stage_blocks", cfg.model.stage_blocks);
            read_opt(m, "dropout", cfg.model.dropout);
            read_opt(m, "head_hidden", cfg.model.head_hidden);
        }
        read_opt(doc, "batch_size", cfg.batch_size);
        read_opt(doc, "max_epochs", cfg.max_epochs);
        read_opt(doc, "lr", cfg.lr);
        read_opt(doc, "clip_max_norm", cfg.clip_max_norm);
        if (doc.contains("scheduler")) {
            const auto& s = doc.at("scheduler");
            check_keys(s, "scheduler", {"factor", "patience", "min_lr", "monitor"});
            read_opt(s, "factor", cfg.scheduler_factor);
            read_opt(s, "patience", cfg.scheduler_patience);
            read_opt(s, "min_lr", cfg.scheduler_min_lr);
            read_opt(s, "monitor", cfg.scheduler_monitor);
        }
        if (doc.contains("early_stop")) {
            const auto& e = doc.at("early_stop");
            check_keys(e, "early_stop", {"patience", "monitor"});
            read_opt(e, "patience", cfg.early_stop_patience);
            read_opt(e, "monitor", cfg.early_stop_monitor);
        }
        if (doc.contains("split")) {
            const auto& s = doc.at("split");
            check_keys(s, "split", {"fraction", "seed"});
            read_opt(s, "fraction", cfg.split_fraction);
            read_opt(s, "seed", cfg.split_seed);
        }
        if (doc.contains("augmentation")) {
            const auto& a = doc.at("augmentation");
            check_keys(a, "augmentation",
                       {"enabled", "blur_probability", "blur_sigma", "hflip", "vflip", "rot90", "mean", "std"});
            auto& ac = cfg.augmentation;
            read_opt(a, "enabled", ac.enabled);
            read_opt(a, "blur_probability", ac.blur_probability);
            if (a.contains("blur_sigma")) {
                const auto range = a.at("blur_sigma").get<std::vector<double>>();
                if (range.size() != 2) {
                    throw ConfigError("augmentation.blur_sigma must be [min, max]");
                }
                ac.blur_sigma_min = range[0];
                ac.blur_sigma_max = range[1];
            }
            read_opt(a, "hflip", ac.hflip);
            read_opt(a, "vflip", ac.vflip);
            read_opt(a, "rot90", ac.rot90);
            read_opt(a, "mean", ac.mean);
            read_opt(a, "std", ac.std);
        }
        if (doc.contains("seeds")) {
            const auto& s = doc.at("seeds");
            check_keys(s, "seeds", {"init", "shuffle", "augment"});
            read_opt(s, "init", cfg.seeds.init);
            read_opt(s, "shuffle", cfg.seeds.shuffle);
            read_opt(s, "augment", cfg.seeds.augment);
        }
        read_opt(doc, "freeze_backbone", cfg.freeze_backbone);
        read_opt(doc, "init_checkpoint", cfg.init_checkpoint);
        read_opt(doc, "output_dir", cfg.output_dir);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

TrainerConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string config_to_json(const TrainerConfig& cfg) {
    const auto& a = cfg.augmentation;
    ordered_json doc;
    doc["data_root"] = cfg.data_root;
    doc["model"] = {{"arch", arch_name(cfg.model.arch)},
                    {"input_size", cfg.model.input_size},
                    {"num_classes", cfg.model.num_classes},
                    {"width_factor", cfg.model.width_factor},
                    {"stage_blocks", cfg.model.stage_blocks},
                    {"dropout", cfg.model.dropout},
                    {"head_hidden", cfg.model.head_hidden}};
    doc["batch_size"] = cfg.batch_size;
    doc["max_epochs"] = cfg.max_epochs;
    doc["lr"] = cfg.lr;
    doc["clip_max_norm"] = cfg.clip_max_norm;
    doc["scheduler"] = {{"factor", cfg.scheduler_factor},
                        {"patience", cfg.scheduler_patience},
                        {"min_lr", cfg.scheduler_min_lr},
                        {"monitor", cfg.scheduler_monitor}};
    doc["early_stop"] = {{"patience", cfg.early_stop_patience}, {"monitor", cfg.early_stop_monitor}};
    doc["split"] = {{"fraction", cfg.split_fraction}, {"seed", cfg.split_seed}};
    doc["augmentation"] = {{"enabled", a.enabled},
                           {"blur_probability", a.blur_probability},
                           {"blur_sigma", {a.blur_sigma_min, a.blur_sigma_max}},
                           {"hflip", a.hflip},
                           {"vflip", a.vflip},
                           {"rot90", a.rot90},
                           {"mean", a.mean},
                           {"std", a.std}};
    doc["seeds"] = {{"init", cfg.seeds.init}, {"shuffle", cfg.seeds.shuffle}, {"augment", cfg.seeds.augment}};
    doc["freeze_backbone"] = cfg.freeze_backbone;
    doc["init_checkpoint"] = cfg.init_checkpoint;
    doc["output_dir"] = cfg.output_dir;
    return doc.dump(2);
}

std::string resolved_config_json(const TrainerConfig& cfg, const std::string& digest) {
    auto doc = ordered_json::parse(config_to_json(cfg));
    doc["config_digest"] = digest;
    return doc.dump(2);
}

std::string config_digest(const TrainerConfig& cfg) {
    TrainerConfig c = cfg;
    c.output_dir.clear();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(config_to_json(c))));
    return buf;
}

AugmentPipeline train_pipeline(const TrainerConfig& cfg) {
    const auto& a = cfg.augmentation;
    const std::size_t size = cfg.model.input_size;
    AugmentPipeline p;
    p.base_seed = cfg.seeds.augment;
    p.ops = {AugOp::blur(a.blur_probability, a.blur_sigma_min, a.blur_sigma_max),
             AugOp::hflip(a.hflip),
             AugOp::vflip(a.vflip),
             AugOp::rot90(a.rot90),
             AugOp::resize(size, size),
             AugOp::normalize(a.mean, a.std)};
    p.validate();
    return a.enabled ? p : p.deterministic_only();
}

AugmentPipeline eval_pipeline(const TrainerConfig& cfg) {
    return train_pipeline(cfg).deterministic_only();
}

MonitorMode monitor_mode(const std::string& monitor) {
    validate_monitor(monitor, "metric");
    return monitor.ends_with("_loss") ? MonitorMode::min : MonitorMode::max;
}

StepResult train_batch(BuiltModel& model, Adam& adam, const Tensor& images, std::span<const std::size_t> labels,
                       const ClipConfig& clip, std::uint64_t dropout_seed) {
    model.params.zero_grads();
    const Var logprobs = model.forward(Var(images), Mode::train, dropout_seed);
    Var loss = nll_loss(logprobs, labels);
    const double value = loss.value().item();
    if (!std::isfinite(value)) {
        throw DivergenceError("non-finite training loss");
    }
    loss.backward();
    clip_global_norm(model.params, clip);
    adam.step(model.params);

    StepResult r;
    r.loss = value;
    const auto pred = argmax_rows(logprobs.value());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        r.correct += pred[i] == labels[i];
    }
    return r;
}

EvalResult evaluate(BuiltModel& model, const Dataset& ds, const AugmentPipeline& pipeline, std::size_t batch_size) {
    if (ds.size() == 0) {
        throw DataError("cannot evaluate on an empty dataset");
    }
    EvalResult out{0.0, ConfusionMatrix(model.config.num_classes)};
    BatchStream stream(ds, {.batch_size = batch_size, .shuffle = false}, &pipeline);
    double loss_sum = 0;
    while (auto batch = stream.next()) {
        const Var logprobs = model.forward(Var(batch->images), Mode::eval);
        const double loss = nll_loss(logprobs, batch->labels).value().item();
        if (!std::isfinite(loss)) {
            throw DivergenceError("non-finite validation loss");
        }
        loss_sum += loss * static_cast<double>(batch->labels.size());
        out.confusion.update(argmax_rows(logprobs.value()), batch->labels);
    }
    out.loss = loss_sum / static_cast<double>(ds.size());
    return out;
}

std::vector<std::string> load_backbone(BuiltModel& model, const fs::path& path) {
    auto loaded = load_checkpoint(path);
    std::unordered_map<std::string, Tensor*> by_name;
    for (auto& nt : loaded.tensors) {
        by_name.emplace(nt.name, &nt.tensor);
    }
    std::vector<std::string> warnings;
    std::set<std::string> used;
    for (auto& p : model.params) {
        if (!p.name.starts_with(kBackbonePrefix)) {
            continue;
        }
        auto it = by_name.find(p.name);
        if (it == by_name.end()) {
            throw MissingTensorError(path.string() + ": tensor '" + p.name + "' is missing");
        }
        if (it->second->shape() != p.var.shape()) {
            throw ShapeMismatchError(path.string() + ": shape mismatch for '" + p.name + "': expected " +
                                     shape_str(p.var.shape()) + ", file has " + shape_str(it->second->shape()));
        }
        used.insert(p.name);
    }
    for (auto& p : model.params) {
        if (used.contains(p.name)) {
            p.var.mutable_value() = *by_name.at(p.name);
        }
    }
    for (const auto& nt : loaded.tensors) {
        if (!used.contains(nt.name)) {
            warnings.push_back("tensor '" + nt.name + "' in " + path.string() + " is not part of the backbone; ignored");
        }
    }
    return warnings;
}

Meta checkpoint_meta(const TrainerConfig& cfg, const Dataset& ds, const std::string& digest) {
    return {{"arch", arch_name(cfg.model.arch)},
            {"classes", json(ds.classes).dump()},
            {"config_digest", digest},
            {"num_classes", std::to_string(ds.num_classes())}};
}

std::vector<std::string> classes_from_meta(const Meta& meta) {
    auto it = meta.find("classes");
    if (it == meta.end()) {
        throw HeaderError("checkpoint meta has no class list");
    }
    try {
        return json::parse(it->second).get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw HeaderError(std::string("checkpoint class list is malformed: ") + e.what());
    }
}

RunResult run_training(const TrainerConfig& config, const RunOptions& opts) {
    using clock = std::chrono::steady_clock;
    config.validate();
    if (config.output_dir.empty()) {
        throw ConfigError("output_dir is not set");
    }
    const Dataset ds = load_dataset(config.data_root);

    TrainerConfig cfg = config;
    if (cfg.model.num_classes == 0) {
        cfg.model.num_classes = ds.num_classes();
    } else if (cfg.model.num_classes != ds.num_classes()) {
        throw ConfigError("config says " + std::to_string(cfg.model.num_classes) + " classes, dataset has " +
                          std::to_string(ds.num_classes()));
    }
    const std::string digest = config_digest(cfg);
    const auto [train_ds, val_ds] = stratified_split(ds, {cfg.split_fraction, cfg.split_seed, true});

    BuiltModel model = build_model(cfg.model, cfg.seeds.init);
    if (!cfg.init_checkpoint.empty()) {
        for (const auto& w : load_backbone(model, cfg.init_checkpoint)) {
            if (opts.log) *opts.log << "warning: " << w << '\n';
        }
    }
    if (cfg.freeze_backbone) {
        freeze_backbone(model);
    }

    const fs::path out_dir = cfg.output_dir;
    fs::create_directories(out_dir);
    write_text(out_dir / "resolved-config.json", resolved_config_json(cfg, digest) + "\n");
    write_manifest(out_dir / "train.manifest", train_ds, digest);
    write_manifest(out_dir / "val.manifest", val_ds, digest);

    const AugmentPipeline train_pipe = train_pipeline(cfg);
    const AugmentPipeline val_pipe = eval_pipeline(cfg);
    Adam adam({.lr = cfg.lr});
    PlateauScheduler scheduler(cfg.lr, {cfg.scheduler_factor, cfg.scheduler_patience,
                                        monitor_mode(cfg.scheduler_monitor), cfg.scheduler_min_lr});
    EarlyStopper stopper({cfg.early_stop_patience, monitor_mode(cfg.early_stop_monitor)});
    const ClipConfig clip{cfg.clip_max_norm};

    RunResult result;
    result.digest = digest;
    result.history.config_digest = digest;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto t0 = clock::now();
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = adam.lr();

        BatchStream stream(train_ds, {cfg.batch_size, true, cfg.seeds.shuffle, epoch}, &train_pipe);
        double loss_sum = 0;
        std::size_t correct = 0;
        std::size_t batch_index = 0;
        while (auto batch = stream.next()) {
            const auto step = train_batch(model, adam, batch->images, batch->labels, clip,
                                          stream_seed(cfg.seeds.init, epoch, batch_index++));
            loss_sum += step.loss * static_cast<double>(batch->labels.size());
            correct += step.correct;
        }
        rec.train_loss = loss_sum / static_cast<double>(train_ds.size());
        rec.train_acc = static_cast<double>(correct) / static_cast<double>(train_ds.size());

        const EvalResult val = evaluate(model, val_ds, val_pipe, cfg.batch_size);
        rec.val_loss = val.loss;
        rec.val_acc = accuracy(val.confusion);

        adam.set_lr(scheduler.step(monitored(cfg.scheduler_monitor, rec)));
        const auto decision = stopper.update(monitored(cfg.early_stop_monitor, rec), model.params);
        if (opts.record_timing) {
            rec.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
        }
        result.history.records.push_back(rec);
        if (opts.log) {
            char line[256];
            std::snprintf(line, sizeof line,
                          "epoch %zu: train_loss=%.4f train_acc=%.4f val_loss=%.4f val_acc=%.4f lr=%.3g time=%.2fs\n",
                          epoch, rec.train_loss, rec.train_acc, rec.val_loss, rec.val_acc, rec.lr, rec.wall_seconds);
            *opts.log << line << std::flush;
        }
        if (decision == StopDecision::stop) {
            result.history.stop_reason = StopReason::early_stopped;
            break;
        }
    }
    result.final_val_acc = result.history.records.back().val_acc;

    stopper.restore_best(model.params);
    result.history.best_epoch = stopper.best_epoch();
    result.best_val_acc = result.history.records.at(result.history.best_epoch - 1).val_acc;
    result.confusion = evaluate(model, val_ds, val_pipe, cfg.batch_size).confusion;

    save_checkpoint(model.params, checkpoint_meta(cfg, ds, digest), out_dir / "best.ftk1");
    write_history_json(result.history, out_dir / "history.json");
    write_history_csv(result.history, out_dir / "history.csv");
    write_confusion_csv(result.confusion, ds.classes, out_dir / "confusion.csv", digest);
    write_accuracy_json(result.confusion, ds.classes, out_dir / "accuracy.json", digest);
    if (opts.log) {
        char line[64];
        std::snprintf(line, sizeof line, " final_accuracy=%.4f\n", result.final_val_acc);
        *opts.log << summary_line(result.history) << line;
    }
    return result;
}

} // namespace ftk
