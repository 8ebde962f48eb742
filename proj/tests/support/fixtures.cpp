#include "fixtures.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unistd.h>

#include "ftk/data.hpp"

namespace ftk::testing {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

namespace {

bool inside(std::size_t cls, double u, double v) {
    const double au = std::abs(u), av = std::abs(v);
    const double r = std::sqrt(u * u + v * v);
    const bool box = au <= 1.0 && av <= 1.0;
    switch (cls) {
    case 0: return r <= 1.0;
    case 1: return au <= 0.8 && av <= 0.8;
    case 2: return v <= 0.8 && v >= -0.9 && au <= (v + 0.9) / 1.7 * 0.95;
    case 3: return r >= 0.55 && r <= 1.0;
    case 4: return (au <= 0.25 && av <= 1.0) || (av <= 0.25 && au <= 1.0);
    case 5: return (std::abs(u - v) <= 0.35 || std::abs(u + v) <= 0.35) && au <= 0.9 && av <= 0.9;
    case 6: return box && static_cast<int>(std::floor((v + 1.0) * 2.5)) % 2 == 0;
    case 7: return box && static_cast<int>(std::floor((u + 1.0) * 2.5)) % 2 == 0;
    case 8: return box && (static_cast<int>(std::floor((u + 1.0) * 2.0)) + static_cast<int>(std::floor((v + 1.0) * 2.0))) % 2 == 0;
    case 9: return au + av <= 1.0;
    default: return false;
    }
}

float quantize(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<float>(std::lround(c * 255.0)) / 255.0f;
}

} // namespace

Tensor render_shape(std::size_t cls, std::size_t size, SplitMix64& rng, ShapeStyle style) {
    const double s = static_cast<double>(size);
    const double cx = rng.uniform(0.38, 0.62) * s;
    const double cy = rng.uniform(0.38, 0.62) * s;
    const double radius = rng.uniform(0.22, 0.32) * s;

    double bg0[3], bg1[3], fg[3];
    double noise = 0;
    double stripe_amp = 0, stripe_freq = 0, stripe_phase = 0;
    if (style == ShapeStyle::plain) {
        for (int c = 0; c < 3; ++c) {
            bg0[c] = bg1[c] = rng.uniform(0.0, 0.25);
            fg[c] = rng.uniform(0.65, 1.0);
        }
        noise = 0.03;
    } else {
        // Tinted: one dominant channel, the others muted.
        const std::size_t hue = rng.below(3);
        for (int c = 0; c < 3; ++c) {
            bg0[c] = rng.uniform(0.15, 0.35);
            bg1[c] = rng.uniform(0.15, 0.35);
            fg[c] = static_cast<std::size_t>(c) == hue ? rng.uniform(0.85, 1.0) : rng.uniform(0.45, 0.7);
        }
        noise = 0.08;
        stripe_amp = 0.06;
        stripe_freq = rng.uniform(0.3, 0.8);
        stripe_phase = rng.uniform(0.0, 6.283185307179586);
    }

    Tensor img({3, size, size});
    auto px = img.span<float>();
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double u = (static_cast<double>(x) + 0.5 - cx) / radius;
            const double v = (static_cast<double>(y) + 0.5 - cy) / radius;
            const bool on = inside(cls, u, v);
            const double t = (static_cast<double>(x) + static_cast<double>(y)) / (2.0 * s);
            const double stripe = stripe_amp * std::sin(stripe_freq * static_cast<double>(y) + stripe_phase);
            for (std::size_t c = 0; c < 3; ++c) {
                const double base = on ? fg[c] : bg0[c] + (bg1[c] - bg0[c]) * t + stripe;
                px[(c * size + y) * size + x] = quantize(base + noise * (2.0 * rng.uniform() - 1.0));
            }
        }
    }
    return img;
}

Samples make_shape_samples(std::size_t num_classes, std::size_t per_class, std::size_t size, std::uint64_t seed,
                           ShapeStyle style) {
    Samples out;
    for (std::size_t c = 0; c < num_classes; ++c) {
        for (std::size_t i = 0; i < per_class; ++i) {
            SplitMix64 rng(stream_seed(seed, c, i));
            out.images.push_back(render_shape(c % kShapeClasses, size, rng, style));
            out.labels.push_back(c);
        }
    }
    return out;
}

std::string class_dir_name(std::size_t cls) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "class_%02zu", cls);
    return buf;
}

void write_shape_dataset(const fs::path& root, std::size_t num_classes, std::size_t per_class, std::size_t size,
                         std::uint64_t seed, ShapeStyle style) {
    const Samples samples = make_shape_samples(num_classes, per_class, size, seed, style);
    for (std::size_t c = 0; c < num_classes; ++c) {
        fs::create_directories(root / class_dir_name(c));
    }
    for (std::size_t k = 0; k < samples.images.size(); ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "img_%03zu.ppm", k % per_class);
        write_ppm(root / class_dir_name(samples.labels[k]) / name, samples.images[k]);
    }
}

void write_config(const fs::path& path, const fs::path& data_root, const fs::path& output_dir,
                  std::size_t max_epochs, const std::string& extra) {
    std::ofstream out(path);
    out << "{\n"
        << "  \"data_root\": \"" << data_root.string() << "\",\n"
        << "  \"output_dir\": \"" << output_dir.string() << "\",\n"
        << "  \"model\": {\"arch\": \"mini_vgg\", \"input_size\": 64},\n"
        << "  \"max_epochs\": " << max_epochs << ",\n"
        << "  \"seeds\": {\"init\": 11, \"shuffle\": 12, \"augment\": 13},\n"
        << "  \"split\": {\"fraction\": 0.75, \"seed\": 5}" << (extra.empty() ? "" : ",\n  " + extra) << "\n"
        << "}\n";
}

} // namespace ftk::testing
