#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "uvet/encoder.hpp"
#include "uvet/mask.hpp"

namespace uvet {

struct AttackConfig {
    int budget_k = 3;     // L-inf budget, 0-255 pixel units
    int step_alpha = 1;   // pixel units per step
    int iterations = 200;
    // Start from image + uniform noise in [-k, k] instead of the clean image.
    std::optional<std::uint64_t> init_noise_seed;
    // Stream for the zero-gradient bootstrap noise.
    std::uint64_t rng_seed = 0;

    void validate() const;
};

struct AttackResult {
    Tensor perturbed_image;
    std::vector<double> objective_trace;  // iterations + 1 entries
    double final_epsilon_linf = 0.0;
    double final_objective() const { return objective_trace.back(); }
};

/// MSE between the final-layer representations of two runs.
double attack_objective(const HiddenStates& h_orig, const HiddenStates& h_attk);

using IterateObserver = std::function<void(std::size_t iter, const Tensor& x_hat, double objective)>;

/// Sign-gradient ascent on the feature-space MSE, projected after every step
/// onto [x-k, x+k] and [0,255] per pixel. Deterministic given the seeds.
/// The clean start has an exactly-zero gradient; the first such iterate
/// injects seeded uniform noise from rng_seed and continues.
AttackResult pgd_attack(const Tensor& image, const EncoderParams& params,
                        const EncoderConfig& config, const AttackConfig& atk,
                        const IterateObserver& observer = {});

/// Full attack -> mask pipeline per seed (uniform init noise in [-k,k]),
/// then pairwise IoU of the uncertain sets. Returns a symmetric
/// seeds x seeds matrix with unit diagonal.
std::vector<std::vector<double>> seeded_mask_consistency(
    const Tensor& image, const EncoderParams& params, const EncoderConfig& config,
    const AttackConfig& atk, const MaskConfig& mask_cfg, const std::vector<std::uint64_t>& seeds);

double mean_offdiagonal(const std::vector<std::vector<double>>& matrix);

}  // namespace uvet
