#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tta/errors.hpp"

namespace tta {

// Dense row-major tensor of doubles. Rank 1 for vectors, rank 2 for
// matrices, rank 3 (H x W x C) for images. All library math runs at
// 64-bit precision; weight files store 32-bit values (see surrogate.hpp).
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> dims)
        : dims_(std::move(dims)), data_(checked_size(dims_), 0.0) {}

    Tensor(std::vector<std::size_t> dims, std::vector<double> data)
        : dims_(std::move(dims)), data_(std::move(data)) {
        if (data_.size() != checked_size(dims_))
            throw ParameterError("tensor data length does not match dims");
    }

    static Tensor vector(std::size_t n) { return Tensor({n}); }
    static Tensor matrix(std::size_t r, std::size_t c) { return Tensor({r, c}); }

    static Tensor scalar(double v) {
        Tensor t({1});
        t.data_[0] = v;
        return t;
    }

    static Tensor from(std::initializer_list<double> values) {
        return Tensor({values.size()}, std::vector<double>(values));
    }

    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t rank() const { return dims_.size(); }
    std::size_t size() const { return data_.size(); }

    std::size_t rows() const {
        require(rank() == 2, "rows() requires a rank-2 tensor");
        return dims_[0];
    }
    std::size_t cols() const {
        require(rank() == 2, "cols() requires a rank-2 tensor");
        return dims_[1];
    }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    double at(std::size_t r, std::size_t c) const { return data_[r * dims_[1] + c]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * dims_[1] + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    // Contiguous view of matrix row r.
    std::span<const double> row_span(std::size_t r) const {
        return std::span<const double>(data_.data() + r * dims_[1], dims_[1]);
    }
    std::span<double> row_span(std::size_t r) {
        return std::span<double>(data_.data() + r * dims_[1], dims_[1]);
    }

    bool same_dims(const Tensor& other) const { return dims_ == other.dims_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    double item() const {
        require(size() == 1, "item() requires a single-element tensor");
        return data_[0];
    }

    std::string dims_string() const {
        std::string s = "[";
        for (std::size_t i = 0; i < dims_.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(dims_[i]);
        }
        return s + "]";
    }

private:
    static std::size_t checked_size(const std::vector<std::size_t>& dims) {
        if (dims.empty()) throw ParameterError("tensor rank must be >= 1");
        std::size_t n = 1;
        for (std::size_t d : dims) {
            if (d == 0) throw ParameterError("tensor extents must be positive");
            n *= d;
        }
        return n;
    }

    static void require(bool ok, const char* msg) {
        if (!ok) throw ParameterError(msg);
    }

    std::vector<std::size_t> dims_;
    std::vector<double> data_;
};

// Images are plain tensors with dims {height, width, channels}.
using ImageTensor = Tensor;

inline bool is_image_shape(const Tensor& t) { return t.rank() == 3; }

inline void check_image_range(const Tensor& t) {
    for (double v : t.values())
        if (!(v >= 0.0 && v <= 1.0))
            throw ParameterError("image values must lie in [0,1]");
}

} // namespace tta
