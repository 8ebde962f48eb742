#include "ftk/optim.hpp"

#include <cmath>

namespace ftk {

Adam::Adam(AdamConfig cfg) : cfg_(cfg) {
    if (!(cfg_.lr >= 0.0) || !(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0) || !(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0) ||
        !(cfg_.eps > 0.0)) {
        throw ValueError("invalid Adam hyperparameters");
    }
}

Adam::Moments& Adam::moments_for(const Param& p) {
    for (auto& m : moments_) {
        if (m.name == p.name) {
            return m;
        }
    }
    const Tensor zeros = Tensor::zeros_like(p.var.value());
    moments_.push_back({p.name, zeros, zeros});
    return moments_.back();
}

void Adam::step(ParamTree& tree) {
    for (const auto& p : tree) {
        if (p.trainable && !p.buffer && !p.var.grad()) {
            throw StateError("trainable param '" + p.name + "' has no gradient");
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& p : tree) {
        if (!p.trainable || p.buffer) {
            continue;
        }
        Moments& mom = moments_for(p);
        Tensor& value = p.var.mutable_value();
        const Tensor& grad = *p.var.grad();
        dispatch(value.dtype(), [&]<class T>(std::type_identity<T>) {
            auto w = value.span<T>();
            auto g = grad.cspan<T>();
            auto m = mom.m.span<T>();
            auto v = mom.v.span<T>();
            const T b1 = static_cast<T>(cfg_.beta1);
            const T b2 = static_cast<T>(cfg_.beta2);
            const T lr = static_cast<T>(cfg_.lr);
            const T eps = static_cast<T>(cfg_.eps);
            const T c1 = static_cast<T>(bc1);
            const T c2 = static_cast<T>(bc2);
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = b1 * m[i] + (T(1) - b1) * g[i];
                v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
                const T mhat = m[i] / c1;
                const T vhat = v[i] / c2;
                w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        });
    }
}

Snapshot Adam::state() const {
    Snapshot out;
    for (const auto& m : moments_) {
        out.push_back({"m." + m.name, m.m});
        out.push_back({"v." + m.name, m.v});
    }
    return out;
}

void Adam::load_state(const Snapshot& moments, std::uint64_t steps) {
    std::vector<Moments> loaded;
    for (const auto& entry : moments) {
        if (entry.name.starts_with("m.")) {
            loaded.push_back({entry.name.substr(2), entry.tensor, Tensor::zeros_like(entry.tensor)});
        }
    }
    for (const auto& entry : moments) {
        if (!entry.name.starts_with("v.")) {
            continue;
        }
        const std::string name = entry.name.substr(2);
        bool found = false;
        for (auto& m : loaded) {
            if (m.name == name) {
                check_same_shape(m.m, entry.tensor, "Adam::load_state");
                m.v = entry.tensor;
                found = true;
            }
        }
        if (!found) {
            throw ValueError("second moment for '" + name + "' has no first moment");
        }
    }
    moments_ = std::move(loaded);
    t_ = steps;
}

double global_norm(std::span<const Tensor* const> grads) {
    double sq = 0.0;
    for (const Tensor* g : grads) {
        dispatch(g->dtype(), [&]<class T>(std::type_identity<T>) {
            for (T x : g->cspan<T>()) {
                sq += static_cast<double>(x) * static_cast<double>(x);
            }
        });
    }
    return std::sqrt(sq);
}

double clip_global_norm(std::span<Tensor* const> grads, const ClipConfig& cfg) {
    if (!(cfg.max_norm > 0.0)) {
        throw ValueError("clip max_norm must be positive");
    }
    for (const Tensor* g : grads) {
        if (!g->all_finite()) {
            throw DivergenceError("non-finite gradient passed to clip_global_norm");
        }
    }
    std::vector<const Tensor*> view(grads.begin(), grads.end());
    const double norm = global_norm(view);
    // Norms within rounding of the bound count as clipped already, so that
    // clipping a clipped set is a bitwise no-op.
    if (!(norm > cfg.max_norm * (1.0 + 1e-6))) {
        return 1.0;
    }
    const double factor = cfg.max_norm / norm;
    for (Tensor* g : grads) {
        g->scale_(factor);
    }
    return factor;
}

double clip_global_norm(ParamTree& tree, const ClipConfig& cfg) {
    std::vector<Tensor*> grads;
    for (auto& p : tree) {
        if (p.trainable && p.var.grad()) {
            grads.push_back(&*p.var.mutable_grad());
        }
    }
    return clip_global_norm(grads, cfg);
}

bool improves(MonitorMode mode, double candidate, const std::optional<double>& best) {
    if (!best) {
        return true;
    }
    return mode == MonitorMode::min ? candidate < *best : candidate > *best;
}

PlateauScheduler::PlateauScheduler(double initial_lr, PlateauConfig cfg) : cfg_(cfg), lr_(initial_lr) {
    if (!(cfg_.factor > 0.0 && cfg_.factor < 1.0)) {
        throw ValueError("plateau factor must be in (0, 1)");
    }
    if (!(cfg_.min_lr > 0.0) || !(initial_lr > 0.0)) {
        throw ValueError("learning rates must be positive");
    }
    lr_ = std::max(lr_, cfg_.min_lr);
}

double PlateauScheduler::step(double metric) {
    if (!std::isfinite(metric)) {
        throw ValueError("scheduler metric is not finite");
    }
    if (improves(cfg_.mode, metric, best_)) {
        best_ = metric;
        bad_epochs_ = 0;
    } else {
        ++bad_epochs_;
    }
    if (bad_epochs_ > cfg_.patience) {
        lr_ = std::max(lr_ * cfg_.factor, cfg_.min_lr);
        bad_epochs_ = 0;
        ++reductions_;
    }
    return lr_;
}

EarlyStopper::EarlyStopper(EarlyStopConfig cfg) : cfg_(cfg) {}

StopDecision EarlyStopper::update(double metric, const ParamTree& weights) {
    if (stopped_) {
        throw StateError("early stopper already stopped");
    }
    if (!std::isfinite(metric)) {
        throw ValueError("early-stopping metric is not finite");
    }
    ++updates_;
    if (improves(cfg_.mode, metric, best_)) {
        best_ = metric;
        best_weights_ = weights.snapshot();
        best_epoch_ = updates_;
        counter_ = 0;
    } else {
        ++counter_;
    }
    if (counter_ > cfg_.patience) {
        stopped_ = true;
        return StopDecision::stop;
    }
    return StopDecision::keep_going;
}

void EarlyStopper::restore_best(ParamTree& weights) const {
    if (updates_ == 0) {
        throw StateError("restore_best called before any update");
    }
    weights.restore(best_weights_);
}

} // namespace ftk
