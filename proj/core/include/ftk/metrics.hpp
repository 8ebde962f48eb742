#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ftk/tensor.hpp"

namespace ftk {

/// K x K prediction counts; rows are actual classes, columns predictions.
class ConfusionMatrix {
  public:
    explicit ConfusionMatrix(std::size_t num_classes);

    void update(std::span<const std::size_t> predictions, std::span<const std::size_t> labels);
    // Adds another matrix of the same size (results over disjoint samples).
    void merge(const ConfusionMatrix& other);

    std::size_t num_classes() const { return k_; }
    std::uint64_t at(std::size_t actual, std::size_t predicted) const { return counts_.at(actual * k_ + predicted); }
    std::uint64_t total() const;
    std::uint64_t trace() const;
    std::uint64_t row_sum(std::size_t actual) const;

    bool operator==(const ConfusionMatrix&) const = default;

  private:
    std::size_t k_;
    std::vector<std::uint64_t> counts_;
};

// trace / total; throws on an empty matrix.
double accuracy(const ConfusionMatrix& cm);
// diagonal / row sum; nullopt for classes with no samples.
std::vector<std::optional<double>> per_class_accuracy(const ConfusionMatrix& cm);

// Row-wise argmax of [N x K] scores.
std::vector<std::size_t> argmax_rows(const Tensor& scores);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0;
    double train_acc = 0;
    double val_loss = 0;
    double val_acc = 0;
    double lr = 0;
    double wall_seconds = 0;

    bool operator==(const EpochRecord&) const = default;
};

enum class StopReason { completed, early_stopped };

const char* stop_reason_name(StopReason reason);

struct History {
    std::string config_digest;
    std::vector<EpochRecord> records;
    std::size_t best_epoch = 0;
    StopReason stop_reason = StopReason::completed;

    double total_seconds() const;
    bool operator==(const History&) const = default;
};

void write_history_json(const History& history, const std::filesystem::path& path);
History read_history_json(const std::filesystem::path& path);
// "# config_digest: <d>" line, header, one row per epoch.
void write_history_csv(const History& history, const std::filesystem::path& path);
// Optional "# config_digest: <d>" line, then header "actual\predicted",
// class names across and down, integer counts.
void write_confusion_csv(const ConfusionMatrix& cm, std::span<const std::string> class_names,
                         const std::filesystem::path& path, const std::string& config_digest = "");

// {"config_digest", "samples", "accuracy", "per_class_accuracy": {name: value}};
// classes without samples are null.
void write_accuracy_json(const ConfusionMatrix& cm, std::span<const std::string> class_names,
                         const std::filesystem::path& path, const std::string& config_digest = "");

// "epochs_trained=E total_time=Ts time_per_epoch=Ts accuracy=A best_epoch=B final_val_acc=F"
// accuracy is the best epoch's val_acc, final_val_acc the last epoch's.
std::string summary_line(const History& history);

} // namespace ftk
