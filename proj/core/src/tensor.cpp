#include "ftk/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace ftk {

const char* dtype_name(DType dtype) {
    return dtype == DType::f32 ? "f32" : "f64";
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) {
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) {
            os << 'x';
        }
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
    if (shape.empty()) {
        throw ShapeError("tensor shape must have rank >= 1");
    }
    for (auto e : shape) {
        if (e == 0) {
            throw ShapeError("tensor extents must be >= 1, got " + shape_str(shape));
        }
    }
}

} // namespace

Tensor::Tensor() : shape_{1}, data_(std::vector<float>(1, 0.0f)) {}

Tensor::Tensor(Shape shape, DType dtype) : shape_(std::move(shape)) {
    validate_shape(shape_);
    if (dtype == DType::f32) {
        data_ = std::vector<float>(numel(), 0.0f);
    } else {
        data_ = std::vector<double>(numel(), 0.0);
    }
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (std::get<0>(data_).size() != numel()) {
        throw ShapeError("data length " + std::to_string(std::get<0>(data_).size()) + " does not match shape " +
                         shape_str(shape_));
    }
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (std::get<1>(data_).size() != numel()) {
        throw ShapeError("data length " + std::to_string(std::get<1>(data_).size()) + " does not match shape " +
                         shape_str(shape_));
    }
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
    Tensor t(std::move(shape), dtype);
    t.fill(value);
    return t;
}

std::span<const std::byte> Tensor::bytes() const {
    return std::visit([](const auto& v) { return std::as_bytes(std::span(v)); }, data_);
}

double Tensor::item(std::size_t flat) const {
    return std::visit([flat](const auto& v) { return static_cast<double>(v.at(flat)); }, data_);
}

void Tensor::set(std::size_t flat, double value) {
    std::visit(
        [flat, value](auto& v) {
            using T = typename std::decay_t<decltype(v)>::value_type;
            v.at(flat) = static_cast<T>(value);
        },
        data_);
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape_));
    }
    return item(0);
}

std::vector<double> Tensor::to_vector() const {
    return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, data_);
}

Tensor Tensor::to(DType target) const {
    if (target == dtype()) {
        return *this;
    }
    return std::visit(
        [&](const auto& v) {
            if (target == DType::f32) {
                return Tensor(shape_, std::vector<float>(v.begin(), v.end()));
            }
            return Tensor(shape_, std::vector<double>(v.begin(), v.end()));
        },
        data_);
}

Tensor Tensor::reshaped(Shape shape) const& {
    Tensor copy = *this;
    return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
    validate_shape(shape);
    if (shape_numel(shape) != numel()) {
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    shape_ = std::move(shape);
    return std::move(*this);
}

void Tensor::fill(double value) {
    std::visit(
        [value](auto& v) {
            using T = typename std::decay_t<decltype(v)>::value_type;
            std::fill(v.begin(), v.end(), static_cast<T>(value));
        },
        data_);
}

void Tensor::add_(const Tensor& other) {
    check_same_dtype(*this, other, "add_");
    check_same_shape(*this, other, "add_");
    dispatch(dtype(), [&]<class T>(std::type_identity<T>) {
        auto dst = span<T>();
        auto src = other.span<T>();
        for (std::size_t i = 0; i < dst.size(); ++i) {
            dst[i] += src[i];
        }
    });
}

void Tensor::scale_(double factor) {
    dispatch(dtype(), [&]<class T>(std::type_identity<T>) {
        const T f = static_cast<T>(factor);
        for (auto& x : span<T>()) {
            x *= f;
        }
    });
}

bool Tensor::all_finite() const {
    return std::visit(
        [](const auto& v) {
            for (auto x : v) {
                if (!std::isfinite(x)) {
                    return false;
                }
            }
            return true;
        },
        data_);
}

bool Tensor::bitwise_equal(const Tensor& other) const {
    if (dtype() != other.dtype() || shape_ != other.shape_) {
        return false;
    }
    auto a = bytes();
    auto b = other.bytes();
    return std::memcmp(a.data(), b.data(), a.size()) == 0;
}

std::uint64_t Tensor::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint8_t byte) {
        h ^= byte;
        h *= 0x100000001b3ULL;
    };
    for (auto e : shape_) {
        for (int i = 0; i < 8; ++i) {
            mix(static_cast<std::uint8_t>(e >> (8 * i)));
        }
    }
    mix(static_cast<std::uint8_t>(dtype()));
    for (auto b : bytes()) {
        mix(static_cast<std::uint8_t>(b));
    }
    return h;
}

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype()) {
        throw DTypeError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                         dtype_name(b.dtype()));
    }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

} // namespace ftk
