#include <limits>

#include "ftk/ops.hpp"
#include "gemm.hpp"

namespace ftk {

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
    if (stride == 0 || kernel == 0) {
        throw ValueError("kernel and stride must be positive");
    }
    if (in + 2 * padding < kernel) {
        throw ShapeError("kernel " + std::to_string(kernel) + " exceeds padded extent " +
                         std::to_string(in + 2 * padding));
    }
    return (in + 2 * padding - kernel) / stride + 1;
}

namespace {

struct ConvGeom {
    std::size_t n, c, h, w;
    std::size_t o, kh, kw;
    std::size_t oh, ow;
    std::size_t stride, pad;

    std::size_t patch() const { return c * kh * kw; }
    std::size_t pixels() const { return oh * ow; }
};

// cols[(c, i, j) x (y, x)] = padded input sample.
template <class T>
void im2col(const ConvGeom& g, const T* x, T* cols) {
    const std::size_t p = g.pixels();
    for (std::size_t ch = 0; ch < g.c; ++ch) {
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                T* row = cols + ((ch * g.kh + i) * g.kw + j) * p;
                for (std::size_t y = 0; y < g.oh; ++y) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(y * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
                    T* dst = row + y * g.ow;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill(dst, dst + g.ow, T(0));
                        continue;
                    }
                    const T* src = x + (ch * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t xo = 0; xo < g.ow; ++xo) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(xo * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
                        dst[xo] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T(0) : src[ix];
                    }
                }
            }
        }
    }
}

template <class T>
void col2im_add(const ConvGeom& g, const T* cols, T* dx) {
    const std::size_t p = g.pixels();
    for (std::size_t ch = 0; ch < g.c; ++ch) {
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                const T* row = cols + ((ch * g.kh + i) * g.kw + j) * p;
                for (std::size_t y = 0; y < g.oh; ++y) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(y * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        continue;
                    }
                    T* dst = dx + (ch * g.h + static_cast<std::size_t>(iy)) * g.w;
                    const T* src = row + y * g.ow;
                    for (std::size_t xo = 0; xo < g.ow; ++xo) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(xo * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) {
                            dst[ix] += src[xo];
                        }
                    }
                }
            }
        }
    }
}

} // namespace

Var conv2d(const Var& input, const Var& weight, const std::optional<Var>& bias, Conv2dOptions opts) {
    const Tensor& x = input.value();
    const Tensor& w = weight.value();
    check_same_dtype(x, w, "conv2d");
    if (x.rank() != 4 || w.rank() != 4) {
        throw ShapeError("conv2d expects [N,C,H,W] input and [O,C,kH,kW] weight, got " + shape_str(x.shape()) +
                         " and " + shape_str(w.shape()));
    }
    if (x.dim(1) != w.dim(1)) {
        throw ShapeError("conv2d channel mismatch: input " + shape_str(x.shape()) + ", weight " +
                         shape_str(w.shape()));
    }
    ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), 0, 0, opts.stride, opts.padding};
    g.oh = conv_out_extent(g.h, g.kh, g.stride, g.pad);
    g.ow = conv_out_extent(g.w, g.kw, g.stride, g.pad);
    if (bias) {
        check_same_dtype(x, bias->value(), "conv2d");
        if (bias->shape() != Shape{g.o}) {
            throw ShapeError("conv2d bias must be [" + std::to_string(g.o) + "], got " + shape_str(bias->shape()));
        }
    }

    Tensor out({g.n, g.o, g.oh, g.ow}, x.dtype());
    dispatch(x.dtype(), [&]<class T>(std::type_identity<T>) {
        std::vector<T> cols(g.patch() * g.pixels());
        const T* xs = x.span<T>().data();
        const T* ws = w.span<T>().data();
        T* os = out.span<T>().data();
        const std::size_t in_stride = g.c * g.h * g.w;
        const std::size_t out_stride = g.o * g.pixels();
        for (std::size_t s = 0; s < g.n; ++s) {
            im2col<T>(g, xs + s * in_stride, cols.data());
            T* dst = os + s * out_stride;
            detail::gemm<T>(detail::Trans::no, detail::Trans::no, g.o, g.pixels(), g.patch(), ws, cols.data(), dst,
                            false);
            if (bias) {
                auto b = bias->value().cspan<T>();
                for (std::size_t oc = 0; oc < g.o; ++oc) {
                    T* plane = dst + oc * g.pixels();
                    for (std::size_t p = 0; p < g.pixels(); ++p) {
                        plane[p] += b[oc];
                    }
                }
            }
        }
    });

    std::vector<Var> inputs{input, weight};
    if (bias) {
        inputs.push_back(*bias);
    }
    const bool has_bias = bias.has_value();
    return record(
        std::move(out), std::move(inputs),
        [g, has_bias](Node& self) {
            Node& nx = *self.inputs[0];
            Node& nw = *self.inputs[1];
            const Tensor& gout = *self.grad;
            dispatch(gout.dtype(), [&]<class T>(std::type_identity<T>) {
                const T* go = gout.cspan<T>().data();
                const std::size_t in_stride = g.c * g.h * g.w;
                const std::size_t out_stride = g.o * g.pixels();
                if (has_bias) {
                    Node& nb = *self.inputs[2];
                    if (nb.requires_grad) {
                        Tensor gb({g.o}, gout.dtype());
                        auto gbs = gb.span<T>();
                        for (std::size_t s = 0; s < g.n; ++s) {
                            for (std::size_t oc = 0; oc < g.o; ++oc) {
                                const T* plane = go + s * out_stride + oc * g.pixels();
                                T acc = 0;
                                for (std::size_t p = 0; p < g.pixels(); ++p) {
                                    acc += plane[p];
                                }
                                gbs[oc] += acc;
                            }
                        }
                        accumulate_grad(nb, std::move(gb));
                    }
                }
                if (!nx.requires_grad && !nw.requires_grad) {
                    return;
                }
                std::vector<T> cols(g.patch() * g.pixels());
                std::optional<Tensor> gw;
                std::optional<Tensor> gx;
                if (nw.requires_grad) {
                    gw.emplace(nw.value.shape(), gout.dtype());
                }
                if (nx.requires_grad) {
                    gx.emplace(nx.value.shape(), gout.dtype());
                }
                const T* xs = nx.value.cspan<T>().data();
                const T* ws = nw.value.cspan<T>().data();
                for (std::size_t s = 0; s < g.n; ++s) {
                    const T* gos = go + s * out_stride;
                    if (gw) {
                        im2col<T>(g, xs + s * in_stride, cols.data());
                        detail::gemm<T>(detail::Trans::no, detail::Trans::yes, g.o, g.patch(), g.pixels(), gos,
                                        cols.data(), gw->span<T>().data(), true);
                    }
                    if (gx) {
                        detail::gemm<T>(detail::Trans::yes, detail::Trans::no, g.patch(), g.pixels(), g.o, ws, gos,
                                        cols.data(), false);
                        col2im_add<T>(g, cols.data(), gx->span<T>().data() + s * in_stride);
                    }
                }
                if (gw) {
                    accumulate_grad(nw, std::move(*gw));
                }
                if (gx) {
                    accumulate_grad(nx, std::move(*gx));
                }
            });
        },
        "conv2d");
}

Var maxpool2d(const Var& input, std::size_t kernel, std::size_t stride, std::size_t padding) {
    const Tensor& x = input.value();
    if (x.rank() != 4) {
        throw ShapeError("maxpool2d expects [N,C,H,W], got " + shape_str(x.shape()));
    }
    if (padding >= kernel && padding > 0) {
        throw ValueError("maxpool2d padding must be smaller than the kernel");
    }
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = conv_out_extent(h, kernel, stride, padding);
    const std::size_t ow = conv_out_extent(w, kernel, stride, padding);
    Tensor out({n, c, oh, ow}, x.dtype());
    // Flat input index of the selected element for every output cell.
    std::vector<std::size_t> argmax(out.numel());
    dispatch(x.dtype(), [&]<class T>(std::type_identity<T>) {
        auto xs = x.cspan<T>();
        auto os = out.span<T>();
        std::size_t o = 0;
        for (std::size_t plane = 0; plane < n * c; ++plane) {
            const std::size_t base = plane * h * w;
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t xo = 0; xo < ow; ++xo, ++o) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_idx = std::numeric_limits<std::size_t>::max();
                    for (std::size_t i = 0; i < kernel; ++i) {
                        const std::ptrdiff_t iy =
                            static_cast<std::ptrdiff_t>(y * stride + i) - static_cast<std::ptrdiff_t>(padding);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
                            continue;
                        }
                        for (std::size_t j = 0; j < kernel; ++j) {
                            const std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(xo * stride + j) - static_cast<std::ptrdiff_t>(padding);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) {
                                continue;
                            }
                            const std::size_t idx =
                                base + static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
                            if (best_idx == std::numeric_limits<std::size_t>::max() || xs[idx] > best) {
                                best = xs[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    os[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    });
    return record(
        std::move(out), {input},
        [argmax = std::move(argmax)](Node& self) {
            Node& in = *self.inputs[0];
            Tensor gx = Tensor::zeros_like(in.value);
            dispatch(gx.dtype(), [&]<class T>(std::type_identity<T>) {
                auto gs = gx.span<T>();
                auto go = self.grad->cspan<T>();
                for (std::size_t o = 0; o < go.size(); ++o) {
                    gs[argmax[o]] += go[o];
                }
            });
            accumulate_grad(in, std::move(gx));
        },
        "maxpool2d");
}

Var global_avg_pool(const Var& input) {
    const Tensor& x = input.value();
    if (x.rank() != 4) {
        throw ShapeError("global_avg_pool expects [N,C,H,W], got " + shape_str(x.shape()));
    }
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out({n, c}, x.dtype());
    dispatch(x.dtype(), [&]<class T>(std::type_identity<T>) {
        auto xs = x.cspan<T>();
        auto os = out.span<T>();
        for (std::size_t p = 0; p < n * c; ++p) {
            T acc = 0;
            for (std::size_t i = 0; i < hw; ++i) {
                acc += xs[p * hw + i];
            }
            os[p] = acc / static_cast<T>(hw);
        }
    });
    return record(
        std::move(out), {input},
        [hw](Node& self) {
            Node& in = *self.inputs[0];
            Tensor gx = Tensor::zeros_like(in.value);
            dispatch(gx.dtype(), [&]<class T>(std::type_identity<T>) {
                auto gs = gx.span<T>();
                auto go = self.grad->cspan<T>();
                const T inv = T(1) / static_cast<T>(hw);
                for (std::size_t p = 0; p < go.size(); ++p) {
                    for (std::size_t i = 0; i < hw; ++i) {
                        gs[p * hw + i] = go[p] * inv;
                    }
                }
            });
            accumulate_grad(in, std::move(gx));
        },
        "global_avg_pool");
}

} // namespace ftk
