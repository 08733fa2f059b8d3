#pragma once

#include <cstdint>
#include <vector>

#include "uvet/encoder.hpp"

namespace uvet {

// Deviations of one token's layer-t representation under input perturbations
// drawn uniformly from the L-inf budget box.
struct DeviationSample {
    std::vector<std::vector<double>> deviations;  // num_samples x d
    std::size_t token = 0;
    std::size_t layer = 0;
    double budget_k = 0.0;
    std::size_t dim() const { return deviations.empty() ? 0 : deviations.front().size(); }
};

DeviationSample sample_deviations(const Tensor& image, const EncoderParams& params,
                                  const EncoderConfig& config, std::size_t token,
                                  std::size_t layer, std::size_t num_samples, double budget_k,
                                  std::uint64_t rng_seed);

struct SpectrumReport {
    std::vector<double> eigenvalues;       // descending
    std::vector<double> cumulative_ratio;  // nondecreasing to 1 (all zeros if trace is 0)
    double trace = 0.0;
    bool logdet_underflow = false;  // some eigenvalue fell below the clip floor
};

/// Unbiased (n-1) sample covariance, symmetric eigendecomposition.
SpectrumReport covariance_spectrum(const DeviationSample& sample);

// Differential entropy of the fitted Gaussian vs the trace-based upper
// bound. Eigenvalues are floor-clipped at kEigenClip before both the
// log-determinant and the trace so the bound's premise survives underflow;
// `underflow` records whether clipping fired.
inline constexpr double kEigenClip = 1e-12;

struct EntropyBound {
    double gaussian_entropy = 0.0;  // (1/2) log((2 pi e)^d det Sigma)
    double trace_bound = 0.0;       // (d/2) log(tr Sigma / d) + (d/2) log(2 pi e)
    double gap = 0.0;               // trace_bound - gaussian_entropy, >= 0 up to roundoff
    bool underflow = false;
};

EntropyBound entropy_bound_check(const DeviationSample& sample);
/// Same check on an explicit spectrum (synthetic covariances with closed forms).
EntropyBound entropy_bound_from_eigenvalues(const std::vector<double>& eigenvalues);

// Third/fourth standardized moments along the top principal directions;
// near-Gaussian samples push both toward 0.
struct GaussianityProbe {
    bool degenerate = false;  // all deviations exactly zero
    double max_abs_skewness = 0.0;
    double max_abs_excess_kurtosis = 0.0;
    std::size_t coords_probed = 0;  // top-5 principal coordinates (or d if smaller)
};

GaussianityProbe gaussianity_probe(const DeviationSample& sample);

}  // namespace uvet
