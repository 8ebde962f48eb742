#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ftk/layers.hpp"

namespace ftk {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. Moments are kept per param name and created
/// lazily on the first step that touches a param.
class Adam {
  public:
    explicit Adam(AdamConfig cfg = {});

    // Updates every trainable param of tree in place. Frozen params and
    // buffers are skipped. Throws if a trainable param has no gradient.
    void step(ParamTree& tree);

    std::uint64_t steps() const { return t_; }
    double lr() const { return cfg_.lr; }
    void set_lr(double lr) { cfg_.lr = lr; }
    const AdamConfig& config() const { return cfg_; }

    // First/second moments as named tensors ("m.<name>", "v.<name>").
    Snapshot state() const;
    void load_state(const Snapshot& moments, std::uint64_t steps);

  private:
    struct Moments {
        std::string name;
        Tensor m;
        Tensor v;
    };
    Moments& moments_for(const Param& p);

    AdamConfig cfg_;
    std::uint64_t t_ = 0;
    std::vector<Moments> moments_;
};

struct ClipConfig {
    double max_norm = 0.1;
};

// sqrt of the sum of squares over all tensors.
double global_norm(std::span<const Tensor* const> grads);

/// Scales all gradients in place by max_norm / norm when their collective
/// norm exceeds max_norm * (1 + 1e-6). Returns the factor applied (1.0 when untouched).
double clip_global_norm(std::span<Tensor* const> grads, const ClipConfig& cfg);

// Clips the gradients of every trainable param of tree.
double clip_global_norm(ParamTree& tree, const ClipConfig& cfg);

enum class MonitorMode { min, max };

struct PlateauConfig {
    double factor = 0.1;
    std::size_t patience = 2;
    MonitorMode mode = MonitorMode::min;
    double min_lr = 1e-7;
};

/// Reduce-on-plateau learning-rate schedule, ticked once per epoch.
class PlateauScheduler {
  public:
    PlateauScheduler(double initial_lr, PlateauConfig cfg = {});

    // Feeds one metric value and returns the learning rate to use next.
    double step(double metric);

    double lr() const { return lr_; }
    std::size_t bad_epochs() const { return bad_epochs_; }
    std::size_t reductions() const { return reductions_; }
    std::optional<double> best() const { return best_; }
    const PlateauConfig& config() const { return cfg_; }

  private:
    PlateauConfig cfg_;
    double lr_;
    std::optional<double> best_;
    std::size_t bad_epochs_ = 0;
    std::size_t reductions_ = 0;
};

struct EarlyStopConfig {
    std::size_t patience = 5;
    MonitorMode mode = MonitorMode::max;
};

enum class StopDecision { keep_going, stop };

/// Tracks the best epoch of a monitored metric and holds a deep copy of the
/// weights that achieved it.
class EarlyStopper {
  public:
    explicit EarlyStopper(EarlyStopConfig cfg = {});

    StopDecision update(double metric, const ParamTree& weights);
    // Copies the best snapshot back into weights.
    void restore_best(ParamTree& weights) const;

    bool stopped() const { return stopped_; }
    std::size_t counter() const { return counter_; }
    std::optional<double> best_metric() const { return best_; }
    // 1-based index of the update that produced the best metric.
    std::size_t best_epoch() const { return best_epoch_; }
    std::size_t updates() const { return updates_; }
    const Snapshot& best_weights() const { return best_weights_; }

  private:
    EarlyStopConfig cfg_;
    std::optional<double> best_;
    Snapshot best_weights_;
    std::size_t counter_ = 0;
    std::size_t best_epoch_ = 0;
    std::size_t updates_ = 0;
    bool stopped_ = false;
};

// Strict improvement, no min-delta.
bool improves(MonitorMode mode, double candidate, const std::optional<double>& best);

} // namespace ftk
