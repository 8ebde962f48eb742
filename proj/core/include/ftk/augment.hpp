#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ftk/tensor.hpp"

namespace ftk {

enum class AugOpKind { gaussian_blur, hflip, vflip, rot90, resize, normalize };

const char* aug_op_name(AugOpKind kind);

struct AugOp {
    AugOpKind kind = AugOpKind::hflip;
    // Application probability of stochastic ops.
    double probability = 1.0;
    // gaussian_blur: sigma ~ uniform[sigma_min, sigma_max].
    double sigma_min = 0.1;
    double sigma_max = 1.0;
    // resize target.
    std::size_t height = 0;
    std::size_t width = 0;
    // normalize constants, per RGB channel.
    std::array<double, 3> mean{0.485, 0.456, 0.406};
    std::array<double, 3> std{0.229, 0.224, 0.225};

    static AugOp blur(double probability, double sigma_min = 0.1, double sigma_max = 1.0);
    static AugOp hflip(double probability) { return {.kind = AugOpKind::hflip, .probability = probability}; }
    static AugOp vflip(double probability) { return {.kind = AugOpKind::vflip, .probability = probability}; }
    static AugOp rot90(double probability) { return {.kind = AugOpKind::rot90, .probability = probability}; }
    static AugOp resize(std::size_t height, std::size_t width);
    static AugOp normalize(std::array<double, 3> mean, std::array<double, 3> std);

    bool stochastic() const;
    void validate() const;
};

/// Ordered image transforms with per-sample randomness.
///
/// Sample (epoch, index) draws from SplitMix64 seeded with
/// stream_seed(base_seed, epoch, index). Each stochastic op draws one
/// uniform for its application test, then its parameters only if applied:
/// blur draws sigma, rot90 draws a quarter-turn count in {0, 1, 2, 3}.
struct AugmentPipeline {
    std::vector<AugOp> ops;
    std::uint64_t base_seed = 0;

    void validate() const;
    // Same pipeline with the stochastic ops removed (resize/normalize remain).
    AugmentPipeline deterministic_only() const;
};

// Blur(sigma in [0.1, 1], p 0.3), hflip(0.5), vflip(0.5), rot90(1.0),
// resize(size), normalize(ImageNet statistics).
AugmentPipeline default_pipeline(std::size_t size, std::uint64_t seed);

Tensor augment(const Tensor& image, const AugmentPipeline& pipeline, std::uint64_t epoch, std::uint64_t index);

// Individual transforms over [3 x H x W] (any channel count) images.
Tensor hflip(const Tensor& image);
Tensor vflip(const Tensor& image);
// Counter-clockwise quarter turns.
Tensor rot90(const Tensor& image, int quarter_turns);
// Separable kernel of radius ceil(3 sigma), normalized to sum 1, reflect-101 borders.
Tensor gaussian_blur(const Tensor& image, double sigma);
std::vector<double> gaussian_kernel(double sigma);
// Bilinear, pixel-center sampling (align_corners = false), edge-clamped.
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);
Tensor normalize(const Tensor& image, const std::array<double, 3>& mean, const std::array<double, 3>& std);
Tensor denormalize(const Tensor& image, const std::array<double, 3>& mean, const std::array<double, 3>& std);

} // namespace ftk
