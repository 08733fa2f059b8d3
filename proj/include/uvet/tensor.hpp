#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "uvet/error.hpp"

namespace uvet {

using Shape = std::vector<std::size_t>;

std::size_t shape_product(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major f64 tensor. Value type: copying copies the buffer.
// Immutable by convention once handed to the tape or the encoder.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double v);
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const Shape& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // 2-D accessors; checked on construction paths, not per element.
    std::size_t rows() const { return shape_.at(0); }
    std::size_t cols() const { return shape_.at(1); }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    double& at(std::size_t i) { return data_[i]; }
    double at(std::size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    double scalar_value() const;  // requires size()==1

private:
    Shape shape_;
    std::vector<double> data_;
};

// In-place metadata change; product must match.
Tensor reshape(Tensor t, Shape shape);

double max_abs_diff(const Tensor& a, const Tensor& b);
bool bitwise_equal(const Tensor& a, const Tensor& b);

void require_same_shape(const Tensor& a, const Tensor& b, const char* op);
void require_finite(const Tensor& t, const char* op);

}  // namespace uvet
