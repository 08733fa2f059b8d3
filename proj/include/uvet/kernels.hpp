#pragma once

#include <cstddef>
#include <vector>

#include "uvet/tensor.hpp"

// OpenMP kernels behind the tensor/autodiff layer.
//
// Every kernel is bitwise thread-count invariant: each output element is
// produced by exactly one thread running a fixed-order serial accumulation,
// and cross-element reductions (mse, col_sum) fold fixed-order partials on a
// single thread. Parallel and serial runs therefore agree to the last bit.
namespace uvet::kern {

// Work sizes below this stay on one thread; the toy-scale tensors are far
// cheaper than a fork/join.
inline constexpr std::size_t kParallelGrain = 1u << 15;

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // A * B^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // A^T * B

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
void add_inplace(Tensor& y, const Tensor& x);            // y += x
void axpy_inplace(Tensor& y, double a, const Tensor& x); // y += a*x

Tensor add_rowvec(const Tensor& a, const Tensor& v);  // a[i,:] + v
Tensor col_sum(const Tensor& a);                      // 1 x cols

Tensor softmax_rows(const Tensor& a);
// dL/dx given y = softmax_rows(x) and dy = dL/dy.
Tensor softmax_rows_backward(const Tensor& y, const Tensor& dy);

struct LayerNormCache {
    Tensor xhat;                  // normalized rows before gain/bias
    std::vector<double> inv_std;  // per row
};
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps,
                  LayerNormCache* cache = nullptr);
Tensor layer_norm_backward_x(const Tensor& dy, const LayerNormCache& cache, const Tensor& gain);

Tensor gelu(const Tensor& x);
Tensor gelu_backward(const Tensor& x, const Tensor& dy);

double mse(const Tensor& a, const Tensor& b);

Tensor row_scale(const Tensor& x, const std::vector<double>& w);  // x[i,:] * w[i]

}  // namespace uvet::kern
