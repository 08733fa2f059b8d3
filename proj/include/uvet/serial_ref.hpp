#pragma once

#include <vector>

#include "uvet/tensor.hpp"

// Serial reference implementations of the hot kernels. Written as plain
// nested loops with no tiling and no threading so they stay obviously
// correct; the unit tests hold the OpenMP kernels to these, and the bench
// target compares throughput against them.
namespace uvet::serial {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // A * B^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // A^T * B

Tensor softmax_rows(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
Tensor gelu(const Tensor& x);

double mse(const Tensor& a, const Tensor& b);

// Per-row Euclidean norm of (a - b); rows are tokens.
std::vector<double> token_deviation_norms(const Tensor& a, const Tensor& b);

}  // namespace uvet::serial
