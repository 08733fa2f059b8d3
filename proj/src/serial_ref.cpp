#include "uvet/serial_ref.hpp"

#include <cmath>

namespace uvet::serial {

namespace {

void require_2d(const Tensor& t, const char* op) {
    if (t.ndim() != 2) throw DimensionError(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "serial::matmul");
    require_2d(b, "serial::matmul");
    if (a.cols() != b.rows()) {
        throw DimensionError("serial::matmul: " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
    }
    Tensor c({a.rows(), b.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    }
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_2d(a, "serial::matmul_nt");
    require_2d(b, "serial::matmul_nt");
    if (a.cols() != b.cols()) {
        throw DimensionError("serial::matmul_nt: " + shape_str(a.shape()) + " * " + shape_str(b.shape()) + "^T");
    }
    Tensor c({a.rows(), b.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
            c(i, j) = s;
        }
    }
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require_2d(a, "serial::matmul_tn");
    require_2d(b, "serial::matmul_tn");
    if (a.rows() != b.rows()) {
        throw DimensionError("serial::matmul_tn: " + shape_str(a.shape()) + "^T * " + shape_str(b.shape()));
    }
    Tensor c({a.cols(), b.cols()});
    for (std::size_t i = 0; i < a.cols(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.rows(); ++k) s += a(k, i) * b(k, j);
            c(i, j) = s;
        }
    }
    return c;
}

Tensor softmax_rows(const Tensor& a) {
    require_2d(a, "serial::softmax_rows");
    Tensor y(a.shape());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double m = a(i, 0);
        for (std::size_t j = 1; j < a.cols(); ++j) m = std::max(m, a(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) {
            y(i, j) = std::exp(a(i, j) - m);
            z += y(i, j);
        }
        for (std::size_t j = 0; j < a.cols(); ++j) y(i, j) /= z;
    }
    return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_2d(x, "serial::layer_norm");
    const std::size_t n = x.cols();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += x(i, j);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = x(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            y(i, j) = (x(i, j) - mean) * inv * gain.at(j) + bias.at(j);
        }
    }
    return y;
}

Tensor gelu(const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x.at(i);
        y.at(i) = v * 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
    }
    return y;
}

double mse(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "serial::mse");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.at(i) - b.at(i);
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

std::vector<double> token_deviation_norms(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "serial::token_deviation_norms");
    require_2d(a, "serial::token_deviation_norms");
    std::vector<double> out(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) {
            const double d = a(i, j) - b(i, j);
            s += d * d;
        }
        out[i] = std::sqrt(s);
    }
    return out;
}

}  // namespace uvet::serial
