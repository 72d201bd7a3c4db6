#pragma once

// Dense row-major tensor over float (training) or double (grad checking).
// Shapes are explicit lists; there is no broadcasting beyond what the tape
// ops implement (bias-add over the last dimension, positional tiling).

#include <cstdint>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "patchwave/common.hpp"
#include "patchwave/rng.hpp"

namespace patchwave {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
        if (d <= 0) throw shape_error("shape dimensions must be positive");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

template <class T>
struct Tensor {
    Shape shape;
    std::vector<T> data;
    bool requires_grad = false;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), T(0)) {}
    Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != shape_numel(shape)) {
            throw shape_error("data length does not match shape " + shape_str(shape));
        }
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t dim(size_t i) const { return shape.at(i); }
    int64_t rows() const { return shape.size() == 2 ? shape[0] : throw shape_error("rows(): not 2-D"); }
    int64_t cols() const { return shape.size() == 2 ? shape[1] : throw shape_error("cols(): not 2-D"); }

    T& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * shape[1] + c)]; }
    const T& at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * shape[1] + c)]; }

    bool all_finite() const {
        for (T v : data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

    static Tensor full(Shape s, T value) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), value);
        return t;
    }

    static Tensor ones(Shape s) { return full(std::move(s), T(1)); }

    // Gaussian init; draws happen in double so float/double models built from
    // the same seed sample the same underlying values.
    static Tensor randn(Shape s, CounterRng rng, double stddev = 1.0, double mean = 0.0) {
        Tensor t(std::move(s));
        for (auto& v : t.data) v = static_cast<T>(rng.gaussian(mean, stddev));
        return t;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.requires_grad = requires_grad;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

}  // namespace patchwave
