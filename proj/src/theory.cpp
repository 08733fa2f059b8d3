#include "uvet/theory.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace uvet {

DeviationSample sample_deviations(const Tensor& image, const EncoderParams& params,
                                  const EncoderConfig& config, std::size_t token,
                                  std::size_t layer, std::size_t num_samples, double budget_k,
                                  std::uint64_t rng_seed) {
    config.validate();
    if (token >= config.num_tokens()) throw ConfigError("sample_deviations: token index out of range");
    if (layer < 1 || layer > config.num_layers) {
        throw ConfigError("sample_deviations: layer index out of range");
    }
    if (budget_k < 0.0) throw ConfigError("sample_deviations: budget must be nonnegative");

    const HiddenStates clean = encode(image, params, config);
    const Tensor& base = clean.layer(layer);
    const std::size_t d = config.hidden_dim;

    DeviationSample sample;
    sample.token = token;
    sample.layer = layer;
    sample.budget_k = budget_k;
    sample.deviations.assign(num_samples, std::vector<double>(d, 0.0));

#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t s = 0; s < static_cast<std::ptrdiff_t>(num_samples); ++s) {
        Rng rng(mix_seed(rng_seed, static_cast<std::uint64_t>(s)));
        Tensor perturbed = image;
        for (std::size_t i = 0; i < perturbed.size(); ++i) {
            perturbed.at(i) += rng.uniform(-budget_k, budget_k);
        }
        const HiddenStates hs = encode(perturbed, params, config);
        const Tensor& state = hs.layer(layer);
        auto& row = sample.deviations[static_cast<std::size_t>(s)];
        for (std::size_t j = 0; j < d; ++j) row[j] = state(token, j) - base(token, j);
    }
    return sample;
}

namespace {

Eigen::MatrixXd sample_covariance(const DeviationSample& sample) {
    const std::size_t n = sample.deviations.size();
    const std::size_t d = sample.dim();
    Eigen::MatrixXd x(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = sample.deviations[i][j];
    }
    const Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;
    return (x.transpose() * x) / static_cast<double>(n - 1);
}

std::vector<double> descending_eigenvalues(const Eigen::MatrixXd& cov,
                                           Eigen::MatrixXd* eigenvectors = nullptr) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
    const Eigen::VectorXd ev = solver.eigenvalues();  // ascending
    const std::size_t d = static_cast<std::size_t>(ev.size());
    std::vector<double> out(d);
    for (std::size_t i = 0; i < d; ++i) out[i] = ev(static_cast<Eigen::Index>(d - 1 - i));
    if (eigenvectors) {
        eigenvectors->resize(cov.rows(), cov.cols());
        for (std::size_t i = 0; i < d; ++i) {
            eigenvectors->col(static_cast<Eigen::Index>(i)) =
                solver.eigenvectors().col(static_cast<Eigen::Index>(d - 1 - i));
        }
    }
    return out;
}

constexpr double kPsdTolerance = 1e-10;

void require_psd(const std::vector<double>& eigenvalues) {
    for (double v : eigenvalues) {
        if (v < -kPsdTolerance) {
            throw NumericError("covariance not PSD beyond tolerance: eigenvalue " + std::to_string(v));
        }
    }
}

EntropyBound bound_from_spectrum(const std::vector<double>& eigenvalues) {
    require_psd(eigenvalues);
    const std::size_t d = eigenvalues.size();
    if (d == 0) throw UsageError("entropy bound: empty spectrum");

    double log_det = 0.0, trace = 0.0;
    bool clipped = false;
    for (double v : eigenvalues) {
        double c = v;
        if (c < kEigenClip) {
            c = kEigenClip;
            clipped = true;
        }
        log_det += std::log(c);
        trace += c;
    }
    const double dd = static_cast<double>(d);
    const double log_2pie = std::log(2.0 * M_PI * std::exp(1.0));

    EntropyBound b;
    b.underflow = clipped;
    b.gaussian_entropy = 0.5 * (dd * log_2pie + log_det);
    b.trace_bound = 0.5 * dd * std::log(trace / dd) + 0.5 * dd * log_2pie;
    b.gap = b.trace_bound - b.gaussian_entropy;
    return b;
}

}  // namespace

SpectrumReport covariance_spectrum(const DeviationSample& sample) {
    if (sample.deviations.size() < 2) throw UsageError("covariance_spectrum: need at least 2 samples");
    const Eigen::MatrixXd cov = sample_covariance(sample);

    SpectrumReport report;
    report.eigenvalues = descending_eigenvalues(cov);
    require_psd(report.eigenvalues);
    report.trace = cov.trace();

    double total = 0.0;
    for (double v : report.eigenvalues) total += std::max(v, 0.0);
    report.cumulative_ratio.resize(report.eigenvalues.size(), 0.0);
    double running = 0.0;
    for (std::size_t i = 0; i < report.eigenvalues.size(); ++i) {
        running += std::max(report.eigenvalues[i], 0.0);
        report.cumulative_ratio[i] = total > 0.0 ? running / total : 0.0;
    }
    for (double v : report.eigenvalues) {
        if (v < kEigenClip) {
            report.logdet_underflow = true;
            break;
        }
    }
    return report;
}

EntropyBound entropy_bound_check(const DeviationSample& sample) {
    return bound_from_spectrum(covariance_spectrum(sample).eigenvalues);
}

EntropyBound entropy_bound_from_eigenvalues(const std::vector<double>& eigenvalues) {
    return bound_from_spectrum(eigenvalues);
}

GaussianityProbe gaussianity_probe(const DeviationSample& sample) {
    if (sample.deviations.size() < 100) throw UsageError("gaussianity_probe: need at least 100 samples");
    const std::size_t n = sample.deviations.size();
    const std::size_t d = sample.dim();

    GaussianityProbe probe;
    bool any_nonzero = false;
    for (const auto& row : sample.deviations) {
        for (double v : row) {
            if (v != 0.0) {
                any_nonzero = true;
                break;
            }
        }
        if (any_nonzero) break;
    }
    if (!any_nonzero) {
        probe.degenerate = true;
        return probe;
    }

    const Eigen::MatrixXd cov = sample_covariance(sample);
    Eigen::MatrixXd vecs;
    const std::vector<double> eigenvalues = descending_eigenvalues(cov, &vecs);
    require_psd(eigenvalues);

    Eigen::MatrixXd x(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = sample.deviations[i][j];
    }
    x.rowwise() -= x.colwise().mean().eval();

    const std::size_t n_coords = std::min<std::size_t>(5, d);
    probe.coords_probed = n_coords;
    for (std::size_t c = 0; c < n_coords; ++c) {
        const Eigen::VectorXd proj = x * vecs.col(static_cast<Eigen::Index>(c));
        double m2 = 0.0, m3 = 0.0, m4 = 0.0;
        for (Eigen::Index i = 0; i < proj.size(); ++i) {
            const double v = proj(i);
            m2 += v * v;
            m3 += v * v * v;
            m4 += v * v * v * v;
        }
        const double nn = static_cast<double>(n);
        m2 /= nn;
        m3 /= nn;
        m4 /= nn;
        if (m2 <= 0.0) continue;  // flat direction, no moments
        const double skew = m3 / std::pow(m2, 1.5);
        const double ex_kurt = m4 / (m2 * m2) - 3.0;
        probe.max_abs_skewness = std::max(probe.max_abs_skewness, std::fabs(skew));
        probe.max_abs_excess_kurtosis = std::max(probe.max_abs_excess_kurtosis, std::fabs(ex_kurt));
    }
    return probe;
}

}  // namespace uvet
