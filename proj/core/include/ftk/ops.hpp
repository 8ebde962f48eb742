#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "ftk/autograd.hpp"

namespace ftk {

// Elementwise ops. Binary operands must have equal shapes, or the smaller
// shape must equal the trailing dimensions of the larger (bias-style).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add(const Var& a, double s);
Var scale(const Var& a, double s);
Var relu(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
Var reshape(const Var& a, Shape shape);
// [N x ...] -> [N x rest]
Var flatten(const Var& a);

Var matmul(const Var& a, const Var& b);

// Fully connected: [N x in] . weight[out x in]^T + bias[out].
Var linear(const Var& input, const Var& weight, const std::optional<Var>& bias);

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);

// Cross-correlation of [N x C x H x W] with [O x C x kH x kW], zero padding.
Var conv2d(const Var& input, const Var& weight, const std::optional<Var>& bias, Conv2dOptions opts = {});

// Windows never select padded cells; gradient goes to the first maximum in
// row-major window order.
Var maxpool2d(const Var& input, std::size_t kernel, std::size_t stride, std::size_t padding = 0);

// [N x C x H x W] -> [N x C]
Var global_avg_pool(const Var& input);

// Row-wise over [N x K].
Var log_softmax(const Var& logits);
// Mean over the batch of -logprobs[i, target_i].
Var nll_loss(const Var& logprobs, std::span<const std::size_t> targets);

/// Batch normalization over the channel axis of [N x C x H x W].
///
/// Training normalizes with biased batch statistics and blends the unbiased
/// batch variance into the running estimate:
/// running = (1 - momentum) * running + momentum * batch.
/// Evaluation normalizes with the running statistics and leaves them alone.
Var batch_norm2d(const Var& input, const Var& gamma, const Var& beta, Tensor& running_mean, Tensor& running_var,
                 double momentum, double eps, bool training);

// Inverted dropout: keep with probability 1 - p, survivors scaled by 1/(1-p).
// Returns the input unchanged when !training.
Var dropout(const Var& input, double p, bool training, std::uint64_t seed);

} // namespace ftk
