#include "uvet/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace uvet {

std::size_t shape_product(const Shape& s) {
    std::size_t p = 1;
    for (std::size_t d : s) p *= d;
    return p;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {
    for (std::size_t d : shape_) {
        if (d == 0) throw DimensionError("tensor dimension must be positive, got " + shape_str(shape_));
    }
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size()) {
        throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }
}

Tensor Tensor::full(Shape shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
}

bool Tensor::all_finite() const {
    for (double x : data_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

double Tensor::scalar_value() const {
    if (data_.size() != 1) throw DimensionError("scalar_value on tensor of size " + std::to_string(data_.size()));
    return data_[0];
}

Tensor reshape(Tensor t, Shape shape) {
    if (shape_product(shape) != t.size()) {
        throw DimensionError("reshape " + shape_str(t.shape()) + " -> " + shape_str(shape));
    }
    return Tensor(std::move(shape), std::move(t.vec()));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.at(i) - b.at(i)));
    return m;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    return a.size() == 0 ||
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

void require_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite input");
}

}  // namespace uvet
