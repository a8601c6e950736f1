// Dense row-major n-dimensional array of doubles.
#pragma once

#include <cmath>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "luc/common.hpp"

namespace luc {

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(numel_of(shape_)), 0.0);
    }
    Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

    static long numel_of(const std::vector<int>& shape) {
        long n = 1;
        for (int d : shape) {
            if (d <= 0) throw data_error("tensor dimension must be positive");
            n *= d;
        }
        return n;
    }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape_.size()); }
    long numel() const { return static_cast<long>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](long i) { return data_[static_cast<size_t>(i)]; }
    double operator[](long i) const { return data_[static_cast<size_t>(i)]; }

    // (c,h,w) indexing for rank-3 tensors, the workhorse layout.
    double& at(int c, int h, int w) { return data_[idx3(c, h, w)]; }
    double at(int c, int h, int w) const { return data_[idx3(c, h, w)]; }
    double& at(int a, int b) { return data_[static_cast<size_t>(a) * shape_[1] + b]; }
    double at(int a, int b) const { return data_[static_cast<size_t>(a) * shape_[1] + b]; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(std::vector<int> shape) const {
        if (numel_of(shape) != numel()) throw data_error("reshape changes element count");
        Tensor t = *this;
        t.shape_ = std::move(shape);
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        std::string s = "(";
        for (size_t i = 0; i < shape_.size(); ++i) s += (i ? "," : "") + std::to_string(shape_[i]);
        return s + ")";
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    size_t idx3(int c, int h, int w) const {
        return (static_cast<size_t>(c) * shape_[1] + h) * shape_[2] + w;
    }
    std::vector<int> shape_;
    std::vector<double> data_;
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

inline double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (long i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace luc
