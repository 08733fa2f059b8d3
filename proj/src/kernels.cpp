#include "uvet/kernels.hpp"

#include <cmath>

namespace uvet::kern {

namespace {

void require_2d(const Tensor& t, const char* op) {
    if (t.ndim() != 2) throw DimensionError(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

inline std::ptrdiff_t sp(std::size_t v) { return static_cast<std::ptrdiff_t>(v); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    const bool big = m * n * k >= kParallelGrain;
#pragma omp parallel for if (big) schedule(static)
    for (std::ptrdiff_t i = 0; i < sp(m); ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            const double av = pa[i * sp(k) + sp(l)];
            const double* brow = pb + l * n;
            double* crow = pc + i * sp(n);
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul_nt");
    require_2d(b, "matmul_nt");
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_nt: " + shape_str(a.shape()) + " * " + shape_str(b.shape()) + "^T");
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    Tensor c({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    const bool big = m * n * k >= kParallelGrain;
#pragma omp parallel for if (big) schedule(static)
    for (std::ptrdiff_t i = 0; i < sp(m); ++i) {
        const double* arow = pa + i * sp(k);
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = pb + j * k;
            double s = 0.0;
            for (std::size_t l = 0; l < k; ++l) s += arow[l] * brow[l];
            pc[i * sp(n) + sp(j)] = s;
        }
    }
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul_tn");
    require_2d(b, "matmul_tn");
    if (a.rows() != b.rows()) {
        throw DimensionError("matmul_tn: " + shape_str(a.shape()) + "^T * " + shape_str(b.shape()));
    }
    const std::size_t m = a.cols(), k = a.rows(), n = b.cols();
    Tensor c({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    const bool big = m * n * k >= kParallelGrain;
#pragma omp parallel for if (big) schedule(static)
    for (std::ptrdiff_t i = 0; i < sp(m); ++i) {
        double* crow = pc + i * sp(n);
        for (std::size_t l = 0; l < k; ++l) {
            const double av = pa[l * m + static_cast<std::size_t>(i)];
            const double* brow = pb + l * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

namespace {

template <class F>
Tensor elementwise2(const Tensor& a, const Tensor& b, const char* op, F&& f) {
    require_same_shape(a, b, op);
    Tensor c(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    const std::size_t n = a.size();
#pragma omp parallel for if (n >= kParallelGrain) schedule(static)
    for (std::ptrdiff_t i = 0; i < sp(n); ++i) pc[i] = f(pa[i], pb[i]);
    return c;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return elementwise2(a, b, "add", [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return elementwise2(a, b, "sub", [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return elementwise2(a, b, "mul", [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double s) {
    Tensor c(a.shape());
    const double* pa = a.data();
    double* pc = c.data();
    const std::size_t n = a.size();
#pragma omp parallel for if (n >= kParallelGrain) schedule(static)
    for (std::ptrdiff_t i = 0; i < sp(n); ++i) pc[i] = pa[i] * s;
    return c;
}

void add_inplace(Tensor& y, const Tensor& x) {
    require_same_shape(y, x, "add_inplace");
    double* py = y.data();
    const double* px = x.data();
    const std::size_t n = y.size();
#pragma omp parallel for if (n >= kParallelGrain) schedule(static)
    for (std::ptrdiff_t i = 0; i < sp(n); ++i) py[i] += px[i];
}

void axpy_inplace(Tensor& y, double a, const Tensor& x) {
    require_same_shape(y, x, "axpy_inplace");
    double* py = y.data();
    const double* px = x.data();
    const std::size_t n = y.size();
#pragma omp parallel for if (n >= kParallelGrain) schedule(static)
    for (std::ptrdiff_t i = 0; i < sp(n); ++i) py[i] += a * px[i];
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    require_2d(a, "add_rowvec");
    if (v.size() != a.cols()) {
        throw DimensionError("add_rowvec: row vector length " + std::to_string(v.size()) + " vs cols " +
                             std::to_string(a.cols()));
    }
    const std::size_t m = a.rows(), n = a.cols();
    Tensor c(a.shape());
    const double* pa = a.data();
    const double* pv = v.data();
    double* pc = c.data();
#pragma omp parallel for if (m * n >= kParallelGrain) schedule(static)
    for (std::ptrdiff_t i = 0; i < sp(m); ++i) {
        const double* arow = pa + i * sp(n);
        double* crow = pc + i * sp(n);
        for (std::size_t j = 0; j < n; ++j) crow[j] = arow[j] + pv[j];
    }
    return c;
}

Tensor col_sum(const Tensor& a) {
    require_2d(a, "col_sum");
    Tensor c({1, a.cols()});
    // serial: fixed accumulation order regardless of thread count
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) c.at(j) += a(i, j);
    }
    return c;
}

Tensor softmax_rows(const Tensor& a) {
    require_2d(a, "softmax_rows");
    const std::size_t m = a.rows(), n = a.cols();
    Tensor y(a.shape());
#pragma omp parallel for if (m * n >= kParallelGrain) schedule(static)
    for (std::ptrdiff_t i = 0; i < sp(m); ++i) {
        const std::size_t r = static_cast<std::size_t>(i);
        double mx = a(r, 0);
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, a(r, j));
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double e = std::exp(a(r, j) - mx);
            y(r, j) = e;
            z += e;
        }
        const double inv = 1.0 / z;
        for (std::size_t j = 0; j < n; ++j) y(r, j) *= inv;
    }
    return y;
}

Tensor softmax_rows_backward(const Tensor& y, const Tensor& dy) {
    require_same_shape(y, dy, "softmax_rows_backward");
    const std::size_t m = y.rows(), n = y.cols();
    Tensor dx(y.shape());
#pragma omp parallel for if (m * n >= kParallelGrain) schedule(static)
    for (std::ptrdiff_t i = 0; i < sp(m); ++i) {
        const std::size_t r = static_cast<std::size_t>(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += dy(r, j) * y(r, j);
        for (std::size_t j = 0; j < n; ++j) dx(r, j) = y(r, j) * (dy(r, j) - dot);
    }
    return dx;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps,
                  LayerNormCache* cache) {
    require_2d(x, "layer_norm");
    if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");
    if (gain.size() != x.cols() || bias.size() != x.cols()) {
        throw DimensionError("layer_norm: gain/bias length must equal cols");
    }
    const std::size_t m = x.rows(), n = x.cols();
    Tensor y(x.shape());
    if (cache) {
        cache->xhat = Tensor(x.shape());
        cache->inv_std.assign(m, 0.0);
    }
#pragma omp parallel for if (m * n >= kParallelGrain) schedule(static)
    for (std::ptrdiff_t i = 0; i < sp(m); ++i) {
        const std::size_t r = static_cast<std::size_t>(i);
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += x(r, j);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = x(r, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            const double xh = (x(r, j) - mean) * inv;
            if (cache) cache->xhat(r, j) = xh;
            y(r, j) = xh * gain.at(j) + bias.at(j);
        }
        if (cache) cache->inv_std[r] = inv;
    }
    return y;
}

Tensor layer_norm_backward_x(const Tensor& dy, const LayerNormCache& cache, const Tensor& gain) {
    require_same_shape(dy, cache.xhat, "layer_norm_backward_x");
    const std::size_t m = dy.rows(), n = dy.cols();
    Tensor dx(dy.shape());
#pragma omp parallel for if (m * n >= kParallelGrain) schedule(static)
    for (std::ptrdiff_t i = 0; i < sp(m); ++i) {
        const std::size_t r = static_cast<std::size_t>(i);
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double dxh = dy(r, j) * gain.at(j);
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * cache.xhat(r, j);
        }
        const double invn = 1.0 / static_cast<double>(n);
        for (std::size_t j = 0; j < n; ++j) {
            const double dxh = dy(r, j) * gain.at(j);
            dx(r, j) = cache.inv_std[r] *
                       (dxh - invn * sum_dxhat - cache.xhat(r, j) * invn * sum_dxhat_xhat);
        }
    }
    return dx;
}

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Tensor gelu(const Tensor& x) {
    Tensor y(x.shape());
    const double* px = x.data();
    double* py = y.data();
    const std::size_t n = x.size();
#pragma omp parallel for if (n >= kParallelGrain) schedule(static)
    for (std::ptrdiff_t i = 0; i < sp(n); ++i) {
        py[i] = px[i] * 0.5 * (1.0 + std::erf(px[i] * kInvSqrt2));
    }
    return y;
}

Tensor gelu_backward(const Tensor& x, const Tensor& dy) {
    require_same_shape(x, dy, "gelu_backward");
    Tensor dx(x.shape());
    const double* px = x.data();
    const double* pdy = dy.data();
    double* pdx = dx.data();
    const std::size_t n = x.size();
#pragma omp parallel for if (n >= kParallelGrain) schedule(static)
    for (std::ptrdiff_t i = 0; i < sp(n); ++i) {
        const double v = px[i];
        const double phi = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        pdx[i] = pdy[i] * (phi + v * pdf);
    }
    return dx;
}

double mse(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse");
    if (a.size() == 0) throw DimensionError("mse: empty tensors");
    const std::size_t n = a.size();
    const double* pa = a.data();
    const double* pb = b.data();
    // chunked partials, folded serially in index order
    const std::size_t chunk = 4096;
    const std::size_t n_chunks = (n + chunk - 1) / chunk;
    std::vector<double> partial(n_chunks, 0.0);
#pragma omp parallel for if (n >= kParallelGrain) schedule(static)
    for (std::ptrdiff_t c = 0; c < sp(n_chunks); ++c) {
        const std::size_t lo = static_cast<std::size_t>(c) * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) {
            const double d = pa[i] - pb[i];
            s += d * d;
        }
        partial[static_cast<std::size_t>(c)] = s;
    }
    double total = 0.0;
    for (double p : partial) total += p;
    return total / static_cast<double>(n);
}

Tensor row_scale(const Tensor& x, const std::vector<double>& w) {
    require_2d(x, "row_scale");
    if (w.size() != x.rows()) {
        throw DimensionError("row_scale: weight length " + std::to_string(w.size()) + " vs rows " +
                             std::to_string(x.rows()));
    }
    const std::size_t m = x.rows(), n = x.cols();
    Tensor y(x.shape());
#pragma omp parallel for if (m * n >= kParallelGrain) schedule(static)
    for (std::ptrdiff_t i = 0; i < sp(m); ++i) {
        const std::size_t r = static_cast<std::size_t>(i);
        for (std::size_t j = 0; j < n; ++j) y(r, j) = x(r, j) * w[r];
    }
    return y;
}

}  // namespace uvet::kern
