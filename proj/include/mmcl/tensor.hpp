#pragma once

// Dense row-major value buffer of rank 0 (scalar), 1 (vector) or 2 (matrix).
// Carries no gradient state; see autodiff.hpp for the differentiable handle.

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmcl {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

class Tensor {
public:
    Tensor() : shape_{}, data_(1, 0.0) {}

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {
        if (shape_.size() > 2) throw ShapeError("tensor rank > 2 unsupported");
    }

    Tensor(Shape shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_.size() > 2) throw ShapeError("tensor rank > 2 unsupported");
        if (shape_numel(shape_) != data_.size())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, double v) {
        Tensor t(std::move(shape));
        for (double& x : t.data_) x = v;
        return t;
    }

    static Tensor row_major(std::size_t rows, std::size_t cols,
                            std::initializer_list<double> vals) {
        return Tensor(Shape{rows, cols}, std::vector<double>(vals));
    }

    static Tensor vec(std::initializer_list<double> vals) {
        return vec(std::vector<double>(vals));
    }

    static Tensor vec(std::vector<double> vals) {
        const std::size_t n = vals.size();
        return Tensor(Shape{n}, std::move(vals));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool is_scalar() const { return shape_.empty(); }

    std::size_t rows() const {
        if (rank() != 2) throw ShapeError("rows() on non-matrix " + shape_str(shape_));
        return shape_[0];
    }
    std::size_t cols() const {
        if (rank() != 2) throw ShapeError("cols() on non-matrix " + shape_str(shape_));
        return shape_[1];
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    double item() const {
        if (data_.size() != 1)
            throw ShapeError("item() on tensor of shape " + shape_str(shape_));
        return data_[0];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) {
        for (double& x : data_) x = v;
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

inline bool approx_equal(const Tensor& a, const Tensor& b, double tol) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::abs(a[i] - b[i]) > tol) return false;
    return true;
}

}  // namespace mmcl
