#include "ftk/augment.hpp"

#include <cmath>

#include "ftk/rng.hpp"

namespace ftk {

const char* aug_op_name(AugOpKind kind) {
    switch (kind) {
    case AugOpKind::gaussian_blur: return "gaussian_blur";
    case AugOpKind::hflip: return "hflip";
    case AugOpKind::vflip: return "vflip";
    case AugOpKind::rot90: return "rot90";
    case AugOpKind::resize: return "resize";
    case AugOpKind::normalize: return "normalize";
    }
    return "unknown";
}

AugOp AugOp::blur(double probability, double sigma_min, double sigma_max) {
    return {.kind = AugOpKind::gaussian_blur, .probability = probability, .sigma_min = sigma_min, .sigma_max = sigma_max};
}

AugOp AugOp::resize(std::size_t height, std::size_t width) {
    return {.kind = AugOpKind::resize, .height = height, .width = width};
}

AugOp AugOp::normalize(std::array<double, 3> mean, std::array<double, 3> std) {
    return {.kind = AugOpKind::normalize, .mean = mean, .std = std};
}

bool AugOp::stochastic() const {
    return kind != AugOpKind::resize && kind != AugOpKind::normalize;
}

void AugOp::validate() const {
    if (!(probability >= 0.0 && probability <= 1.0)) {
        throw ValueError(std::string(aug_op_name(kind)) + ": probability must be in [0, 1]");
    }
    if (kind == AugOpKind::gaussian_blur && !(sigma_min > 0.0 && sigma_min <= sigma_max)) {
        throw ValueError("gaussian_blur: need 0 < sigma_min <= sigma_max");
    }
    if (kind == AugOpKind::resize && (height == 0 || width == 0)) {
        throw ValueError("resize: target extents must be positive");
    }
    if (kind == AugOpKind::normalize) {
        for (double s : std) {
            if (!(s > 0.0)) {
                throw ValueError("normalize: std must be positive");
            }
        }
    }
}

void AugmentPipeline::validate() const {
    for (const auto& op : ops) {
        op.validate();
    }
}

AugmentPipeline AugmentPipeline::deterministic_only() const {
    AugmentPipeline out{.ops = {}, .base_seed = base_seed};
    for (const auto& op : ops) {
        if (!op.stochastic()) {
            out.ops.push_back(op);
        }
    }
    return out;
}

AugmentPipeline default_pipeline(std::size_t size, std::uint64_t seed) {
    return AugmentPipeline{
        .ops = {AugOp::blur(0.3, 0.1, 1.0), AugOp::hflip(0.5), AugOp::vflip(0.5), AugOp::rot90(1.0),
                AugOp::resize(size, size), AugOp::normalize({0.485, 0.456, 0.406}, {0.229, 0.224, 0.225})},
        .base_seed = seed,
    };
}

namespace {

struct Dims {
    std::size_t c, h, w;
};

Dims image_dims(const Tensor& image) {
    if (image.rank() != 3) {
        throw ShapeError("expected an image [C,H,W], got " + shape_str(image.shape()));
    }
    return {image.dim(0), image.dim(1), image.dim(2)};
}

// Reflect-101 index into [0, n).
std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
    if (n == 1) {
        return 0;
    }
    const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
    i %= period;
    if (i < 0) {
        i += period;
    }
    if (i >= static_cast<std::ptrdiff_t>(n)) {
        i = period - i;
    }
    return static_cast<std::size_t>(i);
}

template <class F>
Tensor remap(const Tensor& image, Shape out_shape, F&& source_index) {
    Tensor out(std::move(out_shape), image.dtype());
    const auto [c, h, w] = image_dims(image);
    const std::size_t oh = out.dim(1), ow = out.dim(2);
    dispatch(image.dtype(), [&]<class T>(std::type_identity<T>) {
        auto src = image.cspan<T>();
        auto dst = out.span<T>();
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t x = 0; x < ow; ++x) {
                    const auto [sy, sx] = source_index(y, x);
                    dst[(ch * oh + y) * ow + x] = src[(ch * h + sy) * w + sx];
                }
            }
        }
    });
    return out;
}

} // namespace

Tensor hflip(const Tensor& image) {
    const auto d = image_dims(image);
    return remap(image, image.shape(), [&](std::size_t y, std::size_t x) {
        return std::pair{y, d.w - 1 - x};
    });
}

Tensor vflip(const Tensor& image) {
    const auto d = image_dims(image);
    return remap(image, image.shape(), [&](std::size_t y, std::size_t x) {
        return std::pair{d.h - 1 - y, x};
    });
}

Tensor rot90(const Tensor& image, int quarter_turns) {
    const auto d = image_dims(image);
    const int k = ((quarter_turns % 4) + 4) % 4;
    switch (k) {
    case 0: return image;
    case 1:
        // out[y][x] = in[x][w-1-y], out is [c, w, h]
        return remap(image, {d.c, d.w, d.h}, [&](std::size_t y, std::size_t x) {
            return std::pair{x, d.w - 1 - y};
        });
    case 2:
        return remap(image, image.shape(), [&](std::size_t y, std::size_t x) {
            return std::pair{d.h - 1 - y, d.w - 1 - x};
        });
    default:
        return remap(image, {d.c, d.w, d.h}, [&](std::size_t y, std::size_t x) {
            return std::pair{d.h - 1 - x, y};
        });
    }
}

std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0)) {
        throw ValueError("gaussian sigma must be positive");
    }
    const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
        const double v = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        total += v;
    }
    for (auto& v : k) {
        v /= total;
    }
    return k;
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
    const auto [c, h, w] = image_dims(image);
    const auto kernel = gaussian_kernel(sigma);
    const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
    Tensor out(image.shape(), image.dtype());
    dispatch(image.dtype(), [&]<class T>(std::type_identity<T>) {
        auto src = image.cspan<T>();
        auto dst = out.span<T>();
        std::vector<double> tmp(h * w);
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* plane = src.data() + ch * h * w;
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    double acc = 0.0;
                    for (std::ptrdiff_t t = -radius; t <= radius; ++t) {
                        const std::size_t sx = reflect(static_cast<std::ptrdiff_t>(x) + t, w);
                        acc += kernel[static_cast<std::size_t>(t + radius)] * static_cast<double>(plane[y * w + sx]);
                    }
                    tmp[y * w + x] = acc;
                }
            }
            T* out_plane = dst.data() + ch * h * w;
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    double acc = 0.0;
                    for (std::ptrdiff_t t = -radius; t <= radius; ++t) {
                        const std::size_t sy = reflect(static_cast<std::ptrdiff_t>(y) + t, h);
                        acc += kernel[static_cast<std::size_t>(t + radius)] * tmp[sy * w + x];
                    }
                    out_plane[y * w + x] = static_cast<T>(acc);
                }
            }
        }
    });
    return out;
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
    const auto [c, h, w] = image_dims(image);
    if (height == 0 || width == 0) {
        throw ValueError("resize target extents must be positive");
    }
    if (height == h && width == w) {
        return image;
    }
    struct Tap {
        std::size_t i0, i1;
        double frac;
    };
    auto taps = [](std::size_t in, std::size_t out) {
        std::vector<Tap> t(out);
        const double scale = static_cast<double>(in) / static_cast<double>(out);
        for (std::size_t o = 0; o < out; ++o) {
            double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
            s = std::clamp(s, 0.0, static_cast<double>(in - 1));
            const auto i0 = static_cast<std::size_t>(std::floor(s));
            const std::size_t i1 = std::min(i0 + 1, in - 1);
            t[o] = {i0, i1, s - static_cast<double>(i0)};
        }
        return t;
    };
    const auto ty = taps(h, height);
    const auto tx = taps(w, width);
    Tensor out({c, height, width}, image.dtype());
    dispatch(image.dtype(), [&]<class T>(std::type_identity<T>) {
        auto src = image.cspan<T>();
        auto dst = out.span<T>();
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* p = src.data() + ch * h * w;
            for (std::size_t y = 0; y < height; ++y) {
                const Tap& a = ty[y];
                for (std::size_t x = 0; x < width; ++x) {
                    const Tap& b = tx[x];
                    const double top = (1.0 - b.frac) * p[a.i0 * w + b.i0] + b.frac * p[a.i0 * w + b.i1];
                    const double bot = (1.0 - b.frac) * p[a.i1 * w + b.i0] + b.frac * p[a.i1 * w + b.i1];
                    dst[(ch * height + y) * width + x] = static_cast<T>((1.0 - a.frac) * top + a.frac * bot);
                }
            }
        }
    });
    return out;
}

namespace {

template <class F>
Tensor per_channel(const Tensor& image, F&& f) {
    const auto [c, h, w] = image_dims(image);
    if (c != 3) {
        throw ShapeError("normalize expects 3 channels, got " + shape_str(image.shape()));
    }
    Tensor out = image;
    dispatch(out.dtype(), [&]<class T>(std::type_identity<T>) {
        auto d = out.span<T>();
        for (std::size_t ch = 0; ch < 3; ++ch) {
            for (std::size_t i = 0; i < h * w; ++i) {
                T& v = d[ch * h * w + i];
                v = static_cast<T>(f(ch, static_cast<double>(v)));
            }
        }
    });
    return out;
}

} // namespace

Tensor normalize(const Tensor& image, const std::array<double, 3>& mean, const std::array<double, 3>& std) {
    for (double s : std) {
        if (!(s > 0.0)) {
            throw ValueError("normalize: std must be positive");
        }
    }
    return per_channel(image, [&](std::size_t c, double v) { return (v - mean[c]) / std[c]; });
}

Tensor denormalize(const Tensor& image, const std::array<double, 3>& mean, const std::array<double, 3>& std) {
    return per_channel(image, [&](std::size_t c, double v) { return v * std[c] + mean[c]; });
}

Tensor augment(const Tensor& image, const AugmentPipeline& pipeline, std::uint64_t epoch, std::uint64_t index) {
    if (!image.all_finite()) {
        throw ValueError("augment: image contains non-finite values");
    }
    SplitMix64 rng(stream_seed(pipeline.base_seed, epoch, index));
    Tensor x = image;
    for (const auto& op : pipeline.ops) {
        if (op.stochastic() && !(rng.uniform() < op.probability)) {
            continue;
        }
        switch (op.kind) {
        case AugOpKind::gaussian_blur: x = gaussian_blur(x, rng.uniform(op.sigma_min, op.sigma_max)); break;
        case AugOpKind::hflip: x = hflip(x); break;
        case AugOpKind::vflip: x = vflip(x); break;
        case AugOpKind::rot90: x = rot90(x, static_cast<int>(rng.below(4))); break;
        case AugOpKind::resize: x = resize_bilinear(x, op.height, op.width); break;
        case AugOpKind::normalize: x = normalize(x, op.mean, op.std); break;
        }
    }
    return x;
}

} // namespace ftk
