#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "ftk/ops.hpp"

namespace ftk::testing {

namespace {

double eval_at(const ScalarFn& f, const std::vector<Tensor>& inputs) {
    std::vector<Var> vars;
    for (const auto& t : inputs) {
        vars.emplace_back(t, false);
    }
    return f(vars).value().item();
}

} // namespace

GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double step) {
    std::vector<Var> leaves;
    for (const auto& t : inputs) {
        leaves.emplace_back(t, true);
    }
    Var out = f(leaves);
    out.backward();

    GradCheckResult result;
    std::vector<Tensor> probe = inputs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor analytic = leaves[i].grad() ? *leaves[i].grad() : Tensor::zeros_like(inputs[i]);
        double scale = 0;
        for (std::size_t j = 0; j < analytic.numel(); ++j) {
            scale = std::max(scale, std::abs(analytic.item(j)));
        }
        for (std::size_t j = 0; j < inputs[i].numel(); ++j) {
            const double x0 = inputs[i].item(j);
            probe[i].set(j, x0 + step);
            const double fp = eval_at(f, probe);
            probe[i].set(j, x0 - step);
            const double fm = eval_at(f, probe);
            probe[i].set(j, x0);
            const double numeric = (fp - fm) / (2 * step);
            const double a = analytic.item(j);
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3 * scale, 1e-300});
            const double err = std::abs(a - numeric) / denom;
            if (err > result.max_rel_error) {
                result.max_rel_error = err;
                char buf[160];
                std::snprintf(buf, sizeof buf, "input %zu, element %zu: analytic %.12g vs numeric %.12g", i, j, a,
                              numeric);
                result.worst = buf;
            }
        }
    }
    return result;
}

Tensor uniform_tensor(const Shape& shape, SplitMix64& rng, DType dtype, double lo, double hi) {
    Tensor t(shape, dtype);
    for (std::size_t i = 0; i < t.numel(); ++i) {
        t.set(i, rng.uniform(lo, hi));
    }
    return t;
}

Var random_projection(const Var& x, std::uint64_t seed) {
    SplitMix64 rng(seed);
    return sum(mul(x, Var(uniform_tensor(x.shape(), rng, x.dtype()))));
}

} // namespace ftk::testing
