#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace ftk::detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

enum class Trans { no, yes };

// C[m x n] (+)= op(A) * op(B), all row-major, op(A) is m x k.
template <class T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
    using Idx = Eigen::Index;
    MatMap<T> cm(c, static_cast<Idx>(m), static_cast<Idx>(n));
    auto run = [&](const auto& lhs, const auto& rhs) {
        if (accumulate) {
            cm.noalias() += lhs * rhs;
        } else {
            cm.noalias() = lhs * rhs;
        }
    };
    auto with_b = [&](const auto& lhs) {
        if (tb == Trans::no) {
            run(lhs, ConstMatMap<T>(b, static_cast<Idx>(k), static_cast<Idx>(n)));
        } else {
            run(lhs, ConstMatMap<T>(b, static_cast<Idx>(n), static_cast<Idx>(k)).transpose());
        }
    };
    if (ta == Trans::no) {
        with_b(ConstMatMap<T>(a, static_cast<Idx>(m), static_cast<Idx>(k)));
    } else {
        with_b(ConstMatMap<T>(a, static_cast<Idx>(k), static_cast<Idx>(m)).transpose());
    }
}

} // namespace ftk::detail
