#include <algorithm>

#include "ftk/ops.hpp"
#include "gemm.hpp"

namespace ftk {

namespace {

enum class BinaryKind { add, sub, mul };

bool is_trailing_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) {
        return false;
    }
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Sums a [reps x n] buffer (big layout) down to n elements.
Tensor reduce_to(const Tensor& big, const Shape& small_shape) {
    Tensor out(small_shape, big.dtype());
    dispatch(big.dtype(), [&]<class T>(std::type_identity<T>) {
        auto src = big.span<T>();
        auto dst = out.span<T>();
        const std::size_t n = dst.size();
        for (std::size_t i = 0; i < src.size(); ++i) {
            dst[i % n] += src[i];
        }
    });
    return out;
}

Var binary(BinaryKind kind, const Var& a, const Var& b, const char* name) {
    check_same_dtype(a.value(), b.value(), name);
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa != sb && !is_trailing_suffix(sb, sa) && !is_trailing_suffix(sa, sb)) {
        throw ShapeError(std::string(name) + ": shapes " + shape_str(sa) + " and " + shape_str(sb) +
                         " are not broadcastable");
    }
    const bool a_big = sa == sb || is_trailing_suffix(sb, sa);
    const Shape out_shape = a_big ? sa : sb;
    Tensor out(out_shape, a.dtype());
    dispatch(a.dtype(), [&]<class T>(std::type_identity<T>) {
        auto va = a.value().span<T>();
        auto vb = b.value().span<T>();
        auto vo = out.span<T>();
        const std::size_t na = va.size();
        const std::size_t nb = vb.size();
        for (std::size_t i = 0; i < vo.size(); ++i) {
            const T x = va[i % na];
            const T y = vb[i % nb];
            switch (kind) {
            case BinaryKind::add: vo[i] = x + y; break;
            case BinaryKind::sub: vo[i] = x - y; break;
            case BinaryKind::mul: vo[i] = x * y; break;
            }
        }
    });

    return record(
        std::move(out), {a, b},
        [kind](Node& self) {
            Node& na = *self.inputs[0];
            Node& nb = *self.inputs[1];
            const Tensor& g = *self.grad;
            auto grad_for = [&](Node& target, Node& other, bool negate) {
                if (!target.requires_grad) {
                    return;
                }
                Tensor full = g;
                if (kind == BinaryKind::mul) {
                    dispatch(g.dtype(), [&]<class T>(std::type_identity<T>) {
                        auto f = full.span<T>();
                        auto o = other.value.cspan<T>();
                        for (std::size_t i = 0; i < f.size(); ++i) {
                            f[i] *= o[i % o.size()];
                        }
                    });
                } else if (negate) {
                    full.scale_(-1.0);
                }
                if (target.value.shape() == full.shape()) {
                    accumulate_grad(target, std::move(full));
                } else {
                    accumulate_grad(target, reduce_to(full, target.value.shape()));
                }
            };
            grad_for(na, nb, false);
            grad_for(nb, na, kind == BinaryKind::sub);
        },
        name);
}

} // namespace

Var add(const Var& a, const Var& b) { return binary(BinaryKind::add, a, b, "add"); }
Var sub(const Var& a, const Var& b) { return binary(BinaryKind::sub, a, b, "sub"); }
Var mul(const Var& a, const Var& b) { return binary(BinaryKind::mul, a, b, "mul"); }

Var add(const Var& a, double s) {
    Tensor out = a.value();
    dispatch(out.dtype(), [&]<class T>(std::type_identity<T>) {
        const T c = static_cast<T>(s);
        for (auto& x : out.span<T>()) {
            x += c;
        }
    });
    return record(
        std::move(out), {a}, [](Node& self) { accumulate_grad(*self.inputs[0], *self.grad); }, "add_scalar");
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    out.scale_(s);
    return record(
        std::move(out), {a},
        [s](Node& self) {
            Tensor g = *self.grad;
            g.scale_(s);
            accumulate_grad(*self.inputs[0], std::move(g));
        },
        "scale");
}

Var relu(const Var& a) {
    Tensor out = a.value();
    dispatch(out.dtype(), [&]<class T>(std::type_identity<T>) {
        for (auto& x : out.span<T>()) {
            x = x > T(0) ? x : T(0);
        }
    });
    return record(
        std::move(out), {a},
        [](Node& self) {
            Node& in = *self.inputs[0];
            Tensor g = *self.grad;
            dispatch(g.dtype(), [&]<class T>(std::type_identity<T>) {
                auto gs = g.span<T>();
                auto xs = in.value.cspan<T>();
                for (std::size_t i = 0; i < gs.size(); ++i) {
                    if (!(xs[i] > T(0))) {
                        gs[i] = T(0);
                    }
                }
            });
            accumulate_grad(in, std::move(g));
        },
        "relu");
}

Var sum(const Var& a) {
    Tensor out({1}, a.dtype());
    dispatch(a.dtype(), [&]<class T>(std::type_identity<T>) {
        T acc = 0;
        for (auto x : a.value().span<T>()) {
            acc += x;
        }
        out.span<T>()[0] = acc;
    });
    return record(
        std::move(out), {a},
        [](Node& self) {
            Node& in = *self.inputs[0];
            accumulate_grad(in, Tensor::full(in.value.shape(), self.grad->item(0), in.value.dtype()));
        },
        "sum");
}

Var mean(const Var& a) {
    return scale(sum(a), 1.0 / static_cast<double>(a.value().numel()));
}

Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return record(
        std::move(out), {a},
        [](Node& self) {
            Node& in = *self.inputs[0];
            accumulate_grad(in, self.grad->reshaped(in.value.shape()));
        },
        "reshape");
}

Var flatten(const Var& a) {
    const std::size_t n = a.shape().at(0);
    return reshape(a, {n, a.value().numel() / n});
}

Var matmul(const Var& a, const Var& b) {
    check_same_dtype(a.value(), b.value(), "matmul");
    if (a.value().rank() != 2 || b.value().rank() != 2) {
        throw ShapeError("matmul expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const std::size_t m = a.shape()[0];
    const std::size_t k = a.shape()[1];
    const std::size_t n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw ShapeError("matmul inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    Tensor out({m, n}, a.dtype());
    dispatch(a.dtype(), [&]<class T>(std::type_identity<T>) {
        detail::gemm<T>(detail::Trans::no, detail::Trans::no, m, n, k, a.value().span<T>().data(),
                        b.value().span<T>().data(), out.span<T>().data(), false);
    });
    return record(
        std::move(out), {a, b},
        [m, k, n](Node& self) {
            Node& na = *self.inputs[0];
            Node& nb = *self.inputs[1];
            const Tensor& g = *self.grad;
            dispatch(g.dtype(), [&]<class T>(std::type_identity<T>) {
                if (na.requires_grad) {
                    Tensor ga({m, k}, g.dtype());
                    detail::gemm<T>(detail::Trans::no, detail::Trans::yes, m, k, n, g.span<T>().data(),
                                    nb.value.span<T>().data(), ga.span<T>().data(), false);
                    accumulate_grad(na, std::move(ga));
                }
                if (nb.requires_grad) {
                    Tensor gb({k, n}, g.dtype());
                    detail::gemm<T>(detail::Trans::yes, detail::Trans::no, k, n, m, na.value.span<T>().data(),
                                    g.span<T>().data(), gb.span<T>().data(), false);
                    accumulate_grad(nb, std::move(gb));
                }
            });
        },
        "matmul");
}

Var linear(const Var& input, const Var& weight, const std::optional<Var>& bias) {
    const Tensor& x = input.value();
    const Tensor& w = weight.value();
    check_same_dtype(x, w, "linear");
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
        throw ShapeError("linear expects [N,in] input and [out,in] weight, got " + shape_str(x.shape()) + " and " +
                         shape_str(w.shape()));
    }
    const std::size_t n = x.dim(0), in = x.dim(1), out_f = w.dim(0);
    if (bias) {
        check_same_dtype(x, bias->value(), "linear");
        if (bias->shape() != Shape{out_f}) {
            throw ShapeError("linear bias must be [" + std::to_string(out_f) + "], got " + shape_str(bias->shape()));
        }
    }
    Tensor out({n, out_f}, x.dtype());
    dispatch(x.dtype(), [&]<class T>(std::type_identity<T>) {
        T* os = out.span<T>().data();
        detail::gemm<T>(detail::Trans::no, detail::Trans::yes, n, out_f, in, x.cspan<T>().data(), w.cspan<T>().data(),
                        os, false);
        if (bias) {
            auto b = bias->value().cspan<T>();
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t j = 0; j < out_f; ++j) {
                    os[r * out_f + j] += b[j];
                }
            }
        }
    });
    std::vector<Var> inputs{input, weight};
    if (bias) {
        inputs.push_back(*bias);
    }
    return record(
        std::move(out), std::move(inputs),
        [n, in, out_f](Node& self) {
            Node& nx = *self.inputs[0];
            Node& nw = *self.inputs[1];
            const Tensor& g = *self.grad;
            dispatch(g.dtype(), [&]<class T>(std::type_identity<T>) {
                const T* gs = g.cspan<T>().data();
                if (nx.requires_grad) {
                    Tensor gx({n, in}, g.dtype());
                    detail::gemm<T>(detail::Trans::no, detail::Trans::no, n, in, out_f, gs, nw.value.cspan<T>().data(),
                                    gx.span<T>().data(), false);
                    accumulate_grad(nx, std::move(gx));
                }
                if (nw.requires_grad) {
                    Tensor gw({out_f, in}, g.dtype());
                    detail::gemm<T>(detail::Trans::yes, detail::Trans::no, out_f, in, n, gs, nx.value.cspan<T>().data(),
                                    gw.span<T>().data(), false);
                    accumulate_grad(nw, std::move(gw));
                }
                if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
                    Tensor gb({out_f}, g.dtype());
                    auto bs = gb.span<T>();
                    for (std::size_t r = 0; r < n; ++r) {
                        for (std::size_t j = 0; j < out_f; ++j) {
                            bs[j] += gs[r * out_f + j];
                        }
                    }
                    accumulate_grad(*self.inputs[2], std::move(gb));
                }
            });
        },
        "linear");
}

} // namespace ftk
