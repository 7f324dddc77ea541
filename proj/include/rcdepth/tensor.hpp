#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "rcdepth/common.hpp"

namespace rcdepth {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

// Dense row-major tensor of doubles. Rank is dynamic; the layouts used in
// this project are
//   matrices  : N x C           (points by channels)
//   images    : H x W x C
//   kernels   : KH x KW x Cin x Cout  (2D conv)
//               K x Cin x Cout       (point-axis transposed conv)
// Construction from explicit data rejects NaN/Inf.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

    Tensor(Shape shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
        for (double v : data_)
            if (!std::isfinite(v)) throw DataError("tensor constructed with non-finite value");
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    // Internal factory: trusted data path, skips the finiteness scan.
    static Tensor raw(Shape shape, std::vector<double> data) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        if (t.data_.size() != shape_numel(t.shape_))
            throw ShapeError("tensor data length does not match shape");
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t d) const { return shape_.at(d); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    const double& operator[](std::size_t i) const { return data_[i]; }

    // 2D accessors (N x C).
    double& at(std::size_t i, std::size_t c) { return data_[i * shape_[1] + c]; }
    const double& at(std::size_t i, std::size_t c) const { return data_[i * shape_[1] + c]; }

    // 3D accessors (H x W x C).
    double& at(std::size_t y, std::size_t x, std::size_t c) {
        return data_[(y * shape_[1] + x) * shape_[2] + c];
    }
    const double& at(std::size_t y, std::size_t x, std::size_t c) const {
        return data_[(y * shape_[1] + x) * shape_[2] + c];
    }

    // 4D accessors (KH x KW x Cin x Cout).
    double& at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
        return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }
    const double& at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
        return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }

    double item() const {
        if (numel() != 1) throw ShapeError("item() on tensor with " + std::to_string(numel()) + " elements");
        return data_[0];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
    Shape shape_;
    std::vector<double> data_;
};

inline void require_shape(const Tensor& t, const Shape& s, const char* what) {
    if (t.shape() != s)
        throw ShapeError(std::string(what) + ": expected " + shape_str(s) + ", got " + shape_str(t.shape()));
}

inline void require_rank(const Tensor& t, std::size_t r, const char* what) {
    if (t.rank() != r)
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(r) + " tensor, got " +
                         shape_str(t.shape()));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace rcdepth
