#include <algorithm>
#include <cmath>

#include "ftk/ops.hpp"
#include "ftk/rng.hpp"

namespace ftk {

Var log_softmax(const Var& logits) {
    const Tensor& x = logits.value();
    if (x.rank() != 2) {
        throw ShapeError("log_softmax expects [N,K], got " + shape_str(x.shape()));
    }
    const std::size_t n = x.dim(0), k = x.dim(1);
    Tensor out(x.shape(), x.dtype());
    dispatch(x.dtype(), [&]<class T>(std::type_identity<T>) {
        auto xs = x.cspan<T>();
        auto os = out.span<T>();
        for (std::size_t r = 0; r < n; ++r) {
            const T* row = xs.data() + r * k;
            const T m = *std::max_element(row, row + k);
            double acc = 0;
            for (std::size_t j = 0; j < k; ++j) {
                acc += std::exp(static_cast<double>(row[j] - m));
            }
            // Subtracting the max first keeps large logits from costing precision.
            const double log_acc = std::log(acc);
            for (std::size_t j = 0; j < k; ++j) {
                os[r * k + j] = static_cast<T>(static_cast<double>(row[j] - m) - log_acc);
            }
        }
    });
    return record(
        std::move(out), {logits},
        [n, k](Node& self) {
            Node& in = *self.inputs[0];
            Tensor gx(in.value.shape(), in.value.dtype());
            dispatch(gx.dtype(), [&]<class T>(std::type_identity<T>) {
                auto go = self.grad->cspan<T>();
                auto ys = self.value.cspan<T>();
                auto gs = gx.span<T>();
                for (std::size_t r = 0; r < n; ++r) {
                    T total = 0;
                    for (std::size_t j = 0; j < k; ++j) {
                        total += go[r * k + j];
                    }
                    for (std::size_t j = 0; j < k; ++j) {
                        gs[r * k + j] = go[r * k + j] - std::exp(ys[r * k + j]) * total;
                    }
                }
            });
            accumulate_grad(in, std::move(gx));
        },
        "log_softmax");
}

Var nll_loss(const Var& logprobs, std::span<const std::size_t> targets) {
    const Tensor& x = logprobs.value();
    if (x.rank() != 2) {
        throw ShapeError("nll_loss expects [N,K] log-probabilities, got " + shape_str(x.shape()));
    }
    const std::size_t n = x.dim(0), k = x.dim(1);
    if (targets.size() != n) {
        throw ShapeError("nll_loss: " + std::to_string(targets.size()) + " targets for batch of " +
                         std::to_string(n));
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (targets[i] >= k) {
            throw ValueError("nll_loss: target " + std::to_string(targets[i]) + " at row " + std::to_string(i) +
                             " outside [0, " + std::to_string(k) + ")");
        }
    }
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    Tensor out({1}, x.dtype());
    dispatch(x.dtype(), [&]<class T>(std::type_identity<T>) {
        auto xs = x.cspan<T>();
        T acc = 0;
        for (std::size_t i = 0; i < n; ++i) {
            acc -= xs[i * k + tgt[i]];
        }
        out.span<T>()[0] = acc / static_cast<T>(n);
    });
    return record(
        std::move(out), {logprobs},
        [tgt = std::move(tgt), k](Node& self) {
            Node& in = *self.inputs[0];
            Tensor gx = Tensor::zeros_like(in.value);
            const double g = self.grad->item(0) / static_cast<double>(tgt.size());
            for (std::size_t i = 0; i < tgt.size(); ++i) {
                gx.set(i * k + tgt[i], -g);
            }
            accumulate_grad(in, std::move(gx));
        },
        "nll_loss");
}

Var batch_norm2d(const Var& input, const Var& gamma, const Var& beta, Tensor& running_mean, Tensor& running_var,
                 double momentum, double eps, bool training) {
    const Tensor& x = input.value();
    check_same_dtype(x, gamma.value(), "batch_norm2d");
    check_same_dtype(x, beta.value(), "batch_norm2d");
    if (x.rank() != 4) {
        throw ShapeError("batch_norm2d expects [N,C,H,W], got " + shape_str(x.shape()));
    }
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    const Shape channel_shape{c};
    if (gamma.shape() != channel_shape || beta.shape() != channel_shape || running_mean.shape() != channel_shape ||
        running_var.shape() != channel_shape) {
        throw ShapeError("batch_norm2d parameters must all be [" + std::to_string(c) + "]");
    }
    const std::size_t count = n * hw;
    if (training && count < 2) {
        throw ShapeError("batch_norm2d in training needs N*H*W >= 2, got " + std::to_string(count));
    }

    Tensor out(x.shape(), x.dtype());
    // Normalized activations and per-channel 1/sqrt(var + eps), reused by backward.
    Tensor xhat(x.shape(), x.dtype());
    Tensor inv_std({c}, x.dtype());
    dispatch(x.dtype(), [&]<class T>(std::type_identity<T>) {
        auto xs = x.cspan<T>();
        auto xh = xhat.span<T>();
        auto os = out.span<T>();
        auto is = inv_std.span<T>();
        auto gs = gamma.value().cspan<T>();
        auto bs = beta.value().cspan<T>();
        for (std::size_t ch = 0; ch < c; ++ch) {
            T mu;
            T var;
            if (training) {
                T acc = 0;
                for (std::size_t s = 0; s < n; ++s) {
                    const T* p = xs.data() + (s * c + ch) * hw;
                    for (std::size_t i = 0; i < hw; ++i) {
                        acc += p[i];
                    }
                }
                mu = acc / static_cast<T>(count);
                T sq = 0;
                for (std::size_t s = 0; s < n; ++s) {
                    const T* p = xs.data() + (s * c + ch) * hw;
                    for (std::size_t i = 0; i < hw; ++i) {
                        const T d = p[i] - mu;
                        sq += d * d;
                    }
                }
                var = sq / static_cast<T>(count);
                const double unbiased = static_cast<double>(sq) / static_cast<double>(count - 1);
                running_mean.set(ch, (1.0 - momentum) * running_mean.item(ch) + momentum * static_cast<double>(mu));
                running_var.set(ch, (1.0 - momentum) * running_var.item(ch) + momentum * unbiased);
            } else {
                mu = static_cast<T>(running_mean.item(ch));
                var = static_cast<T>(running_var.item(ch));
            }
            const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
            is[ch] = inv;
            for (std::size_t s = 0; s < n; ++s) {
                const std::size_t off = (s * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    const T v = (xs[off + i] - mu) * inv;
                    xh[off + i] = v;
                    os[off + i] = gs[ch] * v + bs[ch];
                }
            }
        }
    });

    return record(
        std::move(out), {input, gamma, beta},
        [xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, hw, training](Node& self) {
            Node& nx = *self.inputs[0];
            Node& ng = *self.inputs[1];
            Node& nb = *self.inputs[2];
            const Tensor& gout = *self.grad;
            dispatch(gout.dtype(), [&]<class T>(std::type_identity<T>) {
                auto go = gout.cspan<T>();
                auto xh = xhat.cspan<T>();
                auto is = inv_std.cspan<T>();
                auto gam = ng.value.cspan<T>();
                Tensor dgamma({c}, gout.dtype());
                Tensor dbeta({c}, gout.dtype());
                Tensor dx(nx.value.shape(), gout.dtype());
                auto dg = dgamma.span<T>();
                auto db = dbeta.span<T>();
                auto dxs = dx.span<T>();
                const T m = static_cast<T>(n * hw);
                for (std::size_t ch = 0; ch < c; ++ch) {
                    T sum_g = 0;
                    T sum_gx = 0;
                    for (std::size_t s = 0; s < n; ++s) {
                        const std::size_t off = (s * c + ch) * hw;
                        for (std::size_t i = 0; i < hw; ++i) {
                            sum_g += go[off + i];
                            sum_gx += go[off + i] * xh[off + i];
                        }
                    }
                    dg[ch] = sum_gx;
                    db[ch] = sum_g;
                    if (!nx.requires_grad) {
                        continue;
                    }
                    const T scale = gam[ch] * is[ch];
                    for (std::size_t s = 0; s < n; ++s) {
                        const std::size_t off = (s * c + ch) * hw;
                        for (std::size_t i = 0; i < hw; ++i) {
                            if (training) {
                                dxs[off + i] = scale * (go[off + i] - sum_g / m - xh[off + i] * sum_gx / m);
                            } else {
                                dxs[off + i] = scale * go[off + i];
                            }
                        }
                    }
                }
                accumulate_grad(ng, std::move(dgamma));
                accumulate_grad(nb, std::move(dbeta));
                accumulate_grad(nx, std::move(dx));
            });
        },
        "batch_norm2d");
}

Var dropout(const Var& input, double p, bool training, std::uint64_t seed) {
    if (!(p >= 0.0 && p < 1.0)) {
        throw ValueError("dropout probability must be in [0, 1), got " + std::to_string(p));
    }
    if (!training) {
        return input;
    }
    Tensor mask(input.shape(), input.dtype());
    SplitMix64 rng(seed);
    const double keep_scale = 1.0 / (1.0 - p);
    dispatch(mask.dtype(), [&]<class T>(std::type_identity<T>) {
        for (auto& m : mask.span<T>()) {
            m = rng.uniform() >= p ? static_cast<T>(keep_scale) : T(0);
        }
    });
    return mul(input, Var(std::move(mask)));
}

} // namespace ftk
