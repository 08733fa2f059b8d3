#include "uvet/attack.hpp"

#include <cassert>
#include <cmath>

#include "uvet/kernels.hpp"

namespace uvet {

void AttackConfig::validate() const {
    if (budget_k < 0) throw ConfigError("attack: budget k must be nonnegative");
    if (iterations < 0) throw ConfigError("attack: iterations must be nonnegative");
    if (iterations > 0 && step_alpha < 1) throw ConfigError("attack: step alpha must be >= 1");
}

double attack_objective(const HiddenStates& h_orig, const HiddenStates& h_attk) {
    return kern::mse(h_attk.final_state(), h_orig.final_state());
}

namespace {

// clamp the step into [x-k, x+k] then [0,255]; both are axis-aligned boxes,
// so the order is immaterial (documented for bit-exactness)
void project(Tensor& x_hat, const Tensor& x, double k) {
    for (std::size_t i = 0; i < x_hat.size(); ++i) {
        double delta = x_hat.at(i) - x.at(i);
        delta = std::clamp(delta, -k, k);
        x_hat.at(i) = std::clamp(x.at(i) + delta, 0.0, 255.0);
    }
}

void add_uniform_noise(Tensor& x_hat, Rng& rng, double k) {
    for (std::size_t i = 0; i < x_hat.size(); ++i) x_hat.at(i) += rng.uniform(-k, k);
}

#ifndef NDEBUG
bool within_budget(const Tensor& x_hat, const Tensor& x, double k) {
    for (std::size_t i = 0; i < x_hat.size(); ++i) {
        if (std::fabs(x_hat.at(i) - x.at(i)) > k) return false;
        if (x_hat.at(i) < 0.0 || x_hat.at(i) > 255.0) return false;
    }
    return true;
}
#endif

}  // namespace

AttackResult pgd_attack(const Tensor& image, const EncoderParams& params,
                        const EncoderConfig& config, const AttackConfig& atk,
                        const IterateObserver& observer) {
    atk.validate();
    require_finite(image, "pgd_attack");
    const double k = static_cast<double>(atk.budget_k);
    const double alpha = static_cast<double>(atk.step_alpha);

    const Tensor h_orig = encode(image, params, config).final_state();

    Tensor x_hat = image;
    if (atk.init_noise_seed) {
        Rng init_rng(*atk.init_noise_seed);
        add_uniform_noise(x_hat, init_rng, k);
        project(x_hat, image, k);
    }

    AttackResult result;
    result.objective_trace.reserve(static_cast<std::size_t>(atk.iterations) + 1);

    Rng bootstrap_rng(atk.rng_seed);
    bool noise_injected = false;

    for (int i = 0; i < atk.iterations; ++i) {
        ForwardOptions opts;
        opts.input_requires_grad = true;
        EncodeGraph g = encode_traced(x_hat, params, config, opts);
        ad::Tape& tape = g.tape;
        const ad::NodeId loss = tape.mse(g.final_state(), tape.leaf(h_orig));
        const double objective = tape.value(loss).scalar_value();
        result.objective_trace.push_back(objective);
        if (observer) observer(static_cast<std::size_t>(i), x_hat, objective);

        ad::GradMap grads = tape.backward(loss);
        const Tensor& grad = grads.at(g.input);

        bool all_zero = true;
        for (std::size_t j = 0; j < grad.size(); ++j) {
            if (grad.at(j) != 0.0) {
                all_zero = false;
                break;
            }
        }
        if (all_zero) {
            // flat start (clean image gives loss == 0 with zero gradient):
            // seed the ascent with uniform noise once, then keep iterating
            if (!noise_injected) {
                add_uniform_noise(x_hat, bootstrap_rng, k);
                noise_injected = true;
            }
        } else {
            for (std::size_t j = 0; j < x_hat.size(); ++j) {
                const double gj = grad.at(j);
                const double s = gj > 0.0 ? 1.0 : (gj < 0.0 ? -1.0 : 0.0);
                x_hat.at(j) += alpha * s;
            }
        }
        project(x_hat, image, k);
        assert(within_budget(x_hat, image, k));
    }

    result.objective_trace.push_back(
        kern::mse(encode(x_hat, params, config).final_state(), h_orig));
    if (observer) {
        observer(static_cast<std::size_t>(atk.iterations), x_hat, result.objective_trace.back());
    }

    double eps = 0.0;
    for (std::size_t j = 0; j < x_hat.size(); ++j) {
        eps = std::max(eps, std::fabs(x_hat.at(j) - image.at(j)));
    }
    result.final_epsilon_linf = eps;
    result.perturbed_image = std::move(x_hat);
    return result;
}

std::vector<std::vector<double>> seeded_mask_consistency(
    const Tensor& image, const EncoderParams& params, const EncoderConfig& config,
    const AttackConfig& atk, const MaskConfig& mask_cfg, const std::vector<std::uint64_t>& seeds) {
    if (seeds.size() < 2) throw UsageError("mask consistency: need at least 2 seeds");

    const HiddenStates h_orig = encode(image, params, config);
    const std::size_t cls_offset = config.include_cls ? 1 : 0;

    std::vector<BinaryMask> masks(seeds.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t s = 0; s < static_cast<std::ptrdiff_t>(seeds.size()); ++s) {
        AttackConfig seeded = atk;
        seeded.init_noise_seed = seeds[static_cast<std::size_t>(s)];
        seeded.rng_seed = seeds[static_cast<std::size_t>(s)];
        AttackResult r = pgd_attack(image, params, config, seeded);
        const HiddenStates h_attk = encode(r.perturbed_image, params, config);
        const auto devs = layerwise_deviation(h_orig, h_attk, mask_cfg.source_layers);
        const UncertaintyMap u = aggregate_uncertainty(devs, mask_cfg.source_layers, cls_offset);
        masks[static_cast<std::size_t>(s)] = binarize_mask(u, mask_cfg.sigma_th);
    }

    std::vector<std::vector<double>> iou(seeds.size(), std::vector<double>(seeds.size(), 1.0));
    for (std::size_t a = 0; a < seeds.size(); ++a) {
        for (std::size_t b = a + 1; b < seeds.size(); ++b) {
            iou[a][b] = iou[b][a] = mask_iou(masks[a], masks[b]);
        }
    }
    return iou;
}

double mean_offdiagonal(const std::vector<std::vector<double>>& matrix) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t a = 0; a < matrix.size(); ++a) {
        for (std::size_t b = a + 1; b < matrix.size(); ++b) {
            sum += matrix[a][b];
            ++count;
        }
    }
    if (count == 0) throw UsageError("mean_offdiagonal: matrix smaller than 2x2");
    return sum / static_cast<double>(count);
}

}  // namespace uvet
