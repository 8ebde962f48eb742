#include "ftk/metrics.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace ftk {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : k_(num_classes), counts_(num_classes * num_classes, 0) {
    if (num_classes == 0) {
        throw ValueError("confusion matrix needs at least one class");
    }
}

void ConfusionMatrix::update(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
    if (predictions.size() != labels.size()) {
        throw ShapeError("confusion update: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(labels.size()) + " labels");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (predictions[i] >= k_ || labels[i] >= k_) {
            throw ValueError("confusion update: class id out of range at sample " + std::to_string(i));
        }
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        ++counts_[labels[i] * k_ + predictions[i]];
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.k_ != k_) {
        throw ShapeError("cannot merge confusion matrices of different sizes");
    }
    for (std::size_t i = 0; i < counts_.size(); ++i) {
        counts_[i] += other.counts_[i];
    }
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) {
        t += c;
    }
    return t;
}

std::uint64_t ConfusionMatrix::trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < k_; ++i) {
        t += counts_[i * k_ + i];
    }
    return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t actual) const {
    std::uint64_t t = 0;
    for (std::size_t j = 0; j < k_; ++j) {
        t += counts_.at(actual * k_ + j);
    }
    return t;
}

double accuracy(const ConfusionMatrix& cm) {
    const auto total = cm.total();
    if (total == 0) {
        throw ValueError("accuracy of an empty confusion matrix");
    }
    return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

std::vector<std::optional<double>> per_class_accuracy(const ConfusionMatrix& cm) {
    if (cm.total() == 0) {
        throw ValueError("per-class accuracy of an empty confusion matrix");
    }
    std::vector<std::optional<double>> out(cm.num_classes());
    for (std::size_t c = 0; c < cm.num_classes(); ++c) {
        const auto row = cm.row_sum(c);
        if (row > 0) {
            out[c] = static_cast<double>(cm.at(c, c)) / static_cast<double>(row);
        }
    }
    return out;
}

std::vector<std::size_t> argmax_rows(const Tensor& scores) {
    if (scores.rank() != 2) {
        throw ShapeError("argmax_rows expects [N,K], got " + shape_str(scores.shape()));
    }
    const std::size_t n = scores.dim(0), k = scores.dim(1);
    std::vector<std::size_t> out(n);
    for (std::size_t r = 0; r < n; ++r) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j) {
            if (scores.item(r * k + j) > scores.item(r * k + best)) {
                best = j;
            }
        }
        out[r] = best;
    }
    return out;
}

const char* stop_reason_name(StopReason reason) {
    return reason == StopReason::completed ? "completed" : "early_stopped";
}

double History::total_seconds() const {
    double t = 0;
    for (const auto& r : records) {
        t += r.wall_seconds;
    }
    return t;
}

namespace {

void open_for_write(std::ofstream& out, const std::filesystem::path& path) {
    out.open(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

void write_history_json(const History& history, const std::filesystem::path& path) {
    nlohmann::ordered_json doc;
    doc["config_digest"] = history.config_digest;
    doc["records"] = nlohmann::ordered_json::array();
    for (const auto& r : history.records) {
        doc["records"].push_back({{"epoch", r.epoch},
                                  {"train_loss", r.train_loss},
                                  {"train_acc", r.train_acc},
                                  {"val_loss", r.val_loss},
                                  {"val_acc", r.val_acc},
                                  {"lr", r.lr},
                                  {"wall_seconds", r.wall_seconds}});
    }
    doc["best_epoch"] = history.best_epoch;
    doc["stop_reason"] = stop_reason_name(history.stop_reason);
    std::ofstream out;
    open_for_write(out, path);
    out << doc.dump(2) << '\n';
    finish(out, path);
}

History read_history_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    History h;
    try {
        const auto doc = nlohmann::json::parse(in);
        h.config_digest = doc.at("config_digest").get<std::string>();
        for (const auto& r : doc.at("records")) {
            h.records.push_back({r.at("epoch").get<std::size_t>(), r.at("train_loss").get<double>(),
                                 r.at("train_acc").get<double>(), r.at("val_loss").get<double>(),
                                 r.at("val_acc").get<double>(), r.at("lr").get<double>(),
                                 r.at("wall_seconds").get<double>()});
        }
        h.best_epoch = doc.at("best_epoch").get<std::size_t>();
        const auto reason = doc.at("stop_reason").get<std::string>();
        if (reason == "completed") {
            h.stop_reason = StopReason::completed;
        } else if (reason == "early_stopped") {
            h.stop_reason = StopReason::early_stopped;
        } else {
            throw ValueError("unknown stop_reason '" + reason + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValueError(path.string() + ": malformed history: " + e.what());
    }
    return h;
}

void write_history_csv(const History& history, const std::filesystem::path& path) {
    std::ofstream out;
    open_for_write(out, path);
    out << "# config_digest: " << history.config_digest << '\n';
    out << "epoch,train_loss,train_acc,val_loss,val_acc,lr,wall_seconds\n";
    for (const auto& r : history.records) {
        out << r.epoch << ',' << fmt_double(r.train_loss) << ',' << fmt_double(r.train_acc) << ','
            << fmt_double(r.val_loss) << ',' << fmt_double(r.val_acc) << ',' << fmt_double(r.lr) << ','
            << fmt_double(r.wall_seconds) << '\n';
    }
    finish(out, path);
}

void write_confusion_csv(const ConfusionMatrix& cm, std::span<const std::string> class_names,
                         const std::filesystem::path& path, const std::string& config_digest) {
    if (class_names.size() != cm.num_classes()) {
        throw ValueError("confusion matrix has " + std::to_string(cm.num_classes()) + " classes but " +
                         std::to_string(class_names.size()) + " names were given");
    }
    std::ofstream out;
    open_for_write(out, path);
    if (!config_digest.empty()) {
        out << "# config_digest: " << config_digest << '\n';
    }
    out << "actual\\predicted";
    for (const auto& name : class_names) {
        out << ',' << name;
    }
    out << '\n';
    for (std::size_t a = 0; a < cm.num_classes(); ++a) {
        out << class_names[a];
        for (std::size_t p = 0; p < cm.num_classes(); ++p) {
            out << ',' << cm.at(a, p);
        }
        out << '\n';
    }
    finish(out, path);
}

void write_accuracy_json(const ConfusionMatrix& cm, std::span<const std::string> class_names,
                         const std::filesystem::path& path, const std::string& config_digest) {
    if (class_names.size() != cm.num_classes()) {
        throw ValueError("confusion matrix has " + std::to_string(cm.num_classes()) + " classes but " +
                         std::to_string(class_names.size()) + " names were given");
    }
    nlohmann::ordered_json doc;
    doc["config_digest"] = config_digest;
    doc["samples"] = cm.total();
    doc["accuracy"] = cm.total() ? nlohmann::ordered_json(accuracy(cm)) : nlohmann::ordered_json(nullptr);
    nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
    const auto acc = per_class_accuracy(cm);
    for (std::size_t c = 0; c < acc.size(); ++c) {
        per_class[class_names[c]] = acc[c] ? nlohmann::ordered_json(*acc[c]) : nlohmann::ordered_json(nullptr);
    }
    doc["per_class_accuracy"] = std::move(per_class);
    std::ofstream out;
    open_for_write(out, path);
    out << doc.dump(2) << '\n';
    finish(out, path);
}

std::string summary_line(const History& history) {
    const std::size_t epochs = history.records.size();
    const double total = history.total_seconds();
    const double per_epoch = epochs ? total / static_cast<double>(epochs) : 0.0;
    double best_acc = 0.0;
    if (history.best_epoch >= 1 && history.best_epoch <= epochs) {
        best_acc = history.records[history.best_epoch - 1].val_acc;
    }
    const double final_acc = epochs ? history.records.back().val_acc : 0.0;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "epochs_trained=%zu total_time=%.3fs time_per_epoch=%.3fs accuracy=%.4f best_epoch=%zu "
                  "final_val_acc=%.4f",
                  epochs, total, per_epoch, best_acc, history.best_epoch, final_acc);
    return buf;
}

} // namespace ftk
