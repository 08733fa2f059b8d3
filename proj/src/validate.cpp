#include <cmath>
#include <functional>

#include "uvet/attack.hpp"
#include "uvet/kernels.hpp"
#include "uvet/pipeline.hpp"
#include "uvet/serial_ref.hpp"
#include "uvet/stats.hpp"
#include "uvet/synthetic.hpp"
#include "uvet/theory.hpp"

// Runtime self-check: fast fixtures for every module's core properties.
// The acceptance binary runs the full-size versions of these.
namespace uvet {

using nlohmann::json;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = rng.uniform(lo, hi);
    return t;
}

struct PropertyGuardFlip {
    PropertyGuardFlip() { ad::testhooks::set_softmax_backward_sign_flip(true); }
    ~PropertyGuardFlip() { ad::testhooks::set_softmax_backward_sign_flip(false); }
};

bool check_softmax(std::string& detail) {
    Rng rng(11);
    const Tensor x = random_tensor(rng, {16, 16}, -4.0, 4.0);
    const Tensor y = kern::softmax_rows(x);
    for (std::size_t i = 0; i < y.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) s += y(i, j);
        if (std::fabs(s - 1.0) > 1e-12) {
            detail = "row sum off by " + std::to_string(s - 1.0);
            return false;
        }
    }
    const Tensor u = kern::softmax_rows(Tensor({1, 3}));
    for (std::size_t j = 0; j < 3; ++j) {
        if (u(0, j) != 1.0 / 3.0) {
            detail = "uniform row not exactly 1/3";
            return false;
        }
    }
    detail = "row sums within 1e-12";
    return true;
}

bool check_layer_norm(std::string& detail) {
    Rng rng(12);
    const Tensor x = random_tensor(rng, {8, 32}, 0.0, 2000.0);  // spread >> eps
    const Tensor ones = Tensor::full({1, 32}, 1.0);
    const Tensor zeros = Tensor::zeros({1, 32});
    const Tensor y = kern::layer_norm(x, ones, zeros, kLayerNormEps);
    for (std::size_t i = 0; i < y.rows(); ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) mean += y(i, j);
        mean /= static_cast<double>(y.cols());
        double var = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) {
            const double d = y(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(y.cols());
        if (std::fabs(mean) > 1e-10 || std::fabs(var - 1.0) > 1e-8) {
            detail = "mean " + std::to_string(mean) + " var " + std::to_string(var);
            return false;
        }
    }
    detail = "row moments normalized";
    return true;
}

bool check_matmul_oracle(std::string& detail) {
    Rng rng(13);
    double worst = 0.0;
    for (const auto& [m, k, n] : {std::tuple{2, 3, 2}, std::tuple{32, 32, 32}, std::tuple{7, 19, 5}}) {
        const Tensor a = random_tensor(rng, {static_cast<std::size_t>(m), static_cast<std::size_t>(k)});
        const Tensor b = random_tensor(rng, {static_cast<std::size_t>(k), static_cast<std::size_t>(n)});
        worst = std::max(worst, max_abs_diff(kern::matmul(a, b), serial::matmul(a, b)));
    }
    detail = "max diff vs triple-loop oracle " + std::to_string(worst);
    return worst < 1e-12;
}

double softmax_mse_grad_error() {
    Rng rng(14);
    const Tensor x = random_tensor(rng, {2, 8});
    const Tensor target = random_tensor(rng, {2, 8});
    return ad::grad_check(
        [&target](ad::Tape& t, ad::NodeId in) {
            return t.mse(t.softmax_rows(in), t.leaf(target));
        },
        x, 1e-6, 16, 99);
}

bool check_primitive_grads(std::string& detail) {
    Rng rng(15);
    double worst = 0.0;
    const Tensor b8 = random_tensor(rng, {8, 8});
    const Tensor v8 = random_tensor(rng, {1, 8});
    const Tensor x8 = random_tensor(rng, {8, 8});

    const std::vector<std::pair<const char*, ad::TracedFn>> cases = {
        {"matmul", [&](ad::Tape& t, ad::NodeId in) { return t.mse(t.matmul(in, t.leaf(b8)), t.leaf(x8)); }},
        {"matmul_nt", [&](ad::Tape& t, ad::NodeId in) { return t.mse(t.matmul_nt(in, t.leaf(b8)), t.leaf(x8)); }},
        {"mul", [&](ad::Tape& t, ad::NodeId in) { return t.mse(t.mul(in, t.leaf(b8)), t.leaf(x8)); }},
        {"gelu", [&](ad::Tape& t, ad::NodeId in) { return t.mse(t.gelu(in), t.leaf(x8)); }},
        {"softmax", [&](ad::Tape& t, ad::NodeId in) { return t.mse(t.softmax_rows(in), t.leaf(x8)); }},
        {"layer_norm",
         [&](ad::Tape& t, ad::NodeId in) {
             return t.mse(t.layer_norm(in, t.leaf(v8), t.leaf(v8), kLayerNormEps), t.leaf(x8));
         }},
        {"add_rowvec",
         [&](ad::Tape& t, ad::NodeId in) { return t.mse(t.add_rowvec(in, t.leaf(v8)), t.leaf(x8)); }},
        {"row_scale",
         [&](ad::Tape& t, ad::NodeId in) {
             return t.mse(t.row_scale(in, {1.0, 0.0, 0.5, 2.0, 1.0, 0.0, 1.0, 3.0}), t.leaf(x8));
         }},
    };
    for (const auto& [name, fn] : cases) {
        const double err = ad::grad_check(fn, x8, 1e-6, 12, 42);
        if (err > worst) worst = err;
        if (err > 1e-6) {
            detail = std::string(name) + " grad error " + std::to_string(err);
            return false;
        }
    }
    detail = "worst primitive grad error " + std::to_string(worst);
    return true;
}

EncoderConfig tiny_config() {
    EncoderConfig c;
    c.image_size = 16;
    c.patch_size = 8;
    c.channels = 1;
    c.num_layers = 2;
    c.hidden_dim = 16;
    c.num_heads = 2;
    c.mlp_ratio = 2.0;
    c.include_cls = true;
    return c;
}

bool check_pgd_contract(std::string& detail) {
    const EncoderConfig cfg = tiny_config();
    const EncoderParams params = init_params(cfg, 21);
    Rng rng(22);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor image = make_synthetic_image(cfg.image_size, cfg.channels, 100 + trial);
        AttackConfig atk;
        atk.budget_k = static_cast<int>(rng.below(5));
        atk.step_alpha = 1 + static_cast<int>(rng.below(3));
        atk.iterations = static_cast<int>(rng.below(6));
        atk.rng_seed = rng.next_u64();
        if (rng.uniform() < 0.5) atk.init_noise_seed = rng.next_u64();

        bool ok = true;
        const double k = atk.budget_k;
        const AttackResult r = pgd_attack(image, params, cfg, atk,
                                          [&](std::size_t, const Tensor& x_hat, double) {
                                              for (std::size_t j = 0; j < x_hat.size(); ++j) {
                                                  const double e = std::fabs(x_hat.at(j) - image.at(j));
                                                  if (e > k || x_hat.at(j) < 0.0 || x_hat.at(j) > 255.0) ok = false;
                                              }
                                          });
        if (!ok || r.final_epsilon_linf > k) {
            detail = "budget violated at trial " + std::to_string(trial);
            return false;
        }
        if (r.objective_trace.size() != static_cast<std::size_t>(atk.iterations) + 1) {
            detail = "trace length wrong";
            return false;
        }
        if (atk.budget_k == 0 && !bitwise_equal(r.perturbed_image, image)) {
            detail = "k=0 not identity";
            return false;
        }
    }
    // I = 0, clean start
    AttackConfig atk;
    atk.iterations = 0;
    const Tensor image = make_synthetic_image(cfg.image_size, cfg.channels, 5);
    const AttackResult r = pgd_attack(image, params, cfg, atk);
    if (!bitwise_equal(r.perturbed_image, image) || r.objective_trace.front() != 0.0) {
        detail = "I=0 not identity";
        return false;
    }
    detail = "20 randomized configs within budget";
    return true;
}

// literal reading of the mask formula with sign/floor
std::vector<double> mask_formula_oracle(const std::vector<double>& u, double sigma_th) {
    const double n = static_cast<double>(u.size());
    double mean = 0.0;
    for (double v : u) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : u) var += (v - mean) * (v - mean);
    var /= n;
    const double sigma = std::sqrt(var);
    std::vector<double> m(u.size(), 1.0);
    if (sigma == 0.0) return m;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double z = (u[i] - mean) / sigma - sigma_th;
        const double sgn = z > 0.0 ? 1.0 : (z < 0.0 ? -1.0 : 0.0);
        m[i] = 1.0 - 0.5 * std::floor(sgn + 1.0);
    }
    return m;
}

bool check_mask_oracle(std::string& detail) {
    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 4 + rng.below(60);
        std::vector<double> u(n);
        for (double& v : u) v = rng.uniform(0.0, 1.0);
        const double sigma_th = rng.uniform(-1.0, 2.5);
        UncertaintyMap map;
        map.values = u;
        const BinaryMask m = binarize_mask(map, sigma_th);
        const std::vector<double> oracle = mask_formula_oracle(u, sigma_th);
        for (std::size_t i = 0; i < n; ++i) {
            if (m.values[i] != oracle[i]) {
                detail = "formula mismatch at trial " + std::to_string(trial);
                return false;
            }
        }
        // monotone: raising the threshold never grows the uncertain set
        const BinaryMask m2 = binarize_mask(map, sigma_th + 0.25);
        for (std::size_t i = 0; i < n; ++i) {
            if (m.values[i] == 1.0 && m2.values[i] == 0.0) {
                detail = "monotonicity violated";
                return false;
            }
        }
    }
    // hand case
    UncertaintyMap hand;
    hand.values = {1.0, 1.0, 1.0, 5.0};
    const BinaryMask m = binarize_mask(hand, 1.0);
    if (!(m.values[0] == 1.0 && m.values[1] == 1.0 && m.values[2] == 1.0 && m.values[3] == 0.0)) {
        detail = "hand case [1,1,1,5] failed";
        return false;
    }
    detail = "200 random instances match the formula";
    return true;
}

bool check_masked_encode_bitwise(std::string& detail) {
    const EncoderConfig cfg = tiny_config();
    const EncoderParams params = init_params(cfg, 77);
    const Tensor image = make_synthetic_image(cfg.image_size, cfg.channels, 8);
    const HiddenStates plain = encode(image, params, cfg);

    const std::vector<double> ones(cfg.num_tokens(), 1.0);
    const HiddenStates masked_ones = masked_encode(image, params, cfg, ones, {1, cfg.num_layers});
    for (std::size_t l = 0; l < plain.states.size(); ++l) {
        if (!bitwise_equal(plain.states[l], masked_ones.states[l])) {
            detail = "all-ones mask not bitwise identical at layer " + std::to_string(l);
            return false;
        }
    }

    std::vector<double> zeros(cfg.num_tokens(), 0.0);
    const HiddenStates masked_none = masked_encode(image, params, cfg, zeros, LayerRange{1, 0});
    for (std::size_t l = 0; l < plain.states.size(); ++l) {
        if (!bitwise_equal(plain.states[l], masked_none.states[l])) {
            detail = "empty mask range not bitwise identical";
            return false;
        }
    }

    const LayerRange late{2, 2};
    const HiddenStates masked_late = masked_encode(image, params, cfg, zeros, late);
    for (std::size_t l = 0; l < late.first; ++l) {
        if (!bitwise_equal(plain.states[l], masked_late.states[l])) {
            detail = "pre-mask layer " + std::to_string(l) + " changed";
            return false;
        }
    }
    if (bitwise_equal(plain.states[late.first], masked_late.states[late.first])) {
        detail = "mask had no effect at the masked layer";
        return false;
    }
    detail = "bitwise contracts hold";
    return true;
}

bool check_entropy_bound(std::string& detail) {
    const double log2pie = std::log(2.0 * M_PI * std::exp(1.0));
    const EntropyBound iso = entropy_bound_from_eigenvalues({1.0, 1.0});
    if (std::fabs(iso.gap) > 1e-12 || std::fabs(iso.gaussian_entropy - log2pie) > 1e-12) {
        detail = "isotropic closed form failed";
        return false;
    }
    const EntropyBound aniso = entropy_bound_from_eigenvalues({4.0, 0.25});
    if (std::fabs(aniso.gap - std::log(17.0 / 8.0)) > 1e-12) {
        detail = "diag(4, 1/4) closed form failed";
        return false;
    }

    EncoderConfig cfg = tiny_config();
    cfg.image_size = 48;  // 37 tokens x 2 layers: more than 50 sampled pairs
    const EncoderParams params = init_params(cfg, 55);
    const Tensor image = make_synthetic_image(cfg.image_size, cfg.channels, 9);
    double min_gap = 0.0;
    std::size_t checked = 0;
    for (std::size_t token = 0; token < cfg.num_tokens(); ++token) {
        for (std::size_t layer = 1; layer <= cfg.num_layers; ++layer) {
            const DeviationSample s =
                sample_deviations(image, params, cfg, token, layer, 32, 2.0, 1000 + token);
            const SpectrumReport spec = covariance_spectrum(s);
            double eigen_sum = 0.0;
            for (double v : spec.eigenvalues) eigen_sum += v;
            if (std::fabs(eigen_sum - spec.trace) > 1e-8 * std::max(1.0, std::fabs(spec.trace))) {
                detail = "eigenvalue sum disagrees with trace";
                return false;
            }
            const EntropyBound b = entropy_bound_check(s);
            min_gap = std::min(min_gap, b.gap);
            ++checked;
        }
    }
    if (min_gap < -1e-9) {
        detail = "bound violated: min gap " + std::to_string(min_gap);
        return false;
    }
    detail = "min gap " + std::to_string(min_gap) + " over " + std::to_string(checked) + " samples";
    return true;
}

// exhaustive 2^n oracle matching the library's p-value conventions
double wilcoxon_bruteforce_two_sided(const std::vector<double>& diff) {
    const std::size_t n = diff.size();
    std::vector<double> abs_diff(n);
    for (std::size_t i = 0; i < n; ++i) abs_diff[i] = std::fabs(diff[i]);
    const std::vector<double> ranks = stats::average_ranks(abs_diff);
    double w_obs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (diff[i] > 0.0) w_obs += ranks[i];
    }
    std::size_t le = 0, ge = 0;
    const std::size_t total = 1u << n;
    for (std::size_t mask = 0; mask < total; ++mask) {
        double w = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask & (1u << i)) w += ranks[i];
        }
        if (w <= w_obs + 1e-9) ++le;
        if (w >= w_obs - 1e-9) ++ge;
    }
    const double p_le = static_cast<double>(le) / static_cast<double>(total);
    const double p_ge = static_cast<double>(ge) / static_cast<double>(total);
    return std::min(1.0, 2.0 * std::min(p_le, p_ge));
}

bool check_stats_oracles(std::string& detail) {
    const stats::SpearmanResult hand = stats::spearman_rho({1, 2, 3, 4}, {1, 3, 2, 4});
    if (hand.rho != 0.8) {
        detail = "spearman hand case returned " + std::to_string(hand.rho);
        return false;
    }

    stats::PairedSample paper;
    paper.before.assign(10, 0.0);
    paper.after = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    const stats::WilcoxonResult w = stats::wilcoxon_signed_rank(paper, stats::Alternative::two_sided);
    if (std::fabs(w.p_value - 2.0 / 1024.0) > 1e-12 || w.method != "exact") {
        detail = "all-positive n=10 case gave p " + std::to_string(w.p_value);
        return false;
    }

    Rng rng(60);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 3 + rng.below(8);
        stats::PairedSample s;
        std::vector<double> diff(n);
        for (std::size_t i = 0; i < n; ++i) {
            diff[i] = static_cast<double>(static_cast<int>(rng.below(9)) - 4);
            if (diff[i] == 0.0) diff[i] = 1.0;
            s.before.push_back(0.0);
            s.after.push_back(diff[i]);
        }
        const stats::WilcoxonResult lib = stats::wilcoxon_signed_rank(s, stats::Alternative::two_sided);
        const double brute = wilcoxon_bruteforce_two_sided(diff);
        if (std::fabs(lib.p_value - brute) > 1e-12) {
            detail = "wilcoxon mismatch vs enumeration at trial " + std::to_string(trial);
            return false;
        }
    }

    const stats::ChairScores cs = stats::chair_scores({
        {{"a", "b", "c"}, {"b"}},
        {{"d", "e"}, {}},
        {{"f", "g", "h"}, {"f", "g"}},
        {{"i", "j"}, {}},
    });
    if (cs.chair_s != 0.5 || cs.chair_i != 0.3) {
        detail = "chair hand case failed";
        return false;
    }

    const std::vector<bool> pred = {true, true, true, true, false, false, false};
    const std::vector<bool> lab = {true, true, true, false, true, true, false};
    const stats::BinaryMetrics bm = stats::binary_classification_metrics(pred, lab);
    if (!bm.precision || !bm.recall || !bm.f1 || *bm.precision != 0.75 || *bm.recall != 0.6 ||
        std::fabs(*bm.f1 - 2.0 / (1.0 / 0.75 + 1.0 / 0.6)) > 1e-15) {
        detail = "binary metrics hand case failed";
        return false;
    }
    detail = "all statistics oracles match";
    return true;
}

bool check_determinism(std::string& detail) {
    const EncoderConfig cfg = tiny_config();
    const EncoderParams params = init_params(cfg, 91);
    const Tensor image = make_synthetic_image(cfg.image_size, cfg.channels, 17);
    const HiddenStates a = encode(image, params, cfg);
    const HiddenStates b = encode(image, params, cfg);
    for (std::size_t l = 0; l < a.states.size(); ++l) {
        if (!bitwise_equal(a.states[l], b.states[l])) {
            detail = "repeated encode differs at layer " + std::to_string(l);
            return false;
        }
    }
    auto grad_of = [&] {
        ForwardOptions opts;
        opts.input_requires_grad = true;
        EncodeGraph g = encode_traced(image, params, cfg, opts);
        const ad::NodeId loss = g.tape.mse(g.final_state(), g.tape.leaf(Tensor::zeros(
                                                                g.tape.value(g.final_state()).shape())));
        return g.tape.backward(loss).at(g.input);
    };
    if (!bitwise_equal(grad_of(), grad_of())) {
        detail = "repeated backward differs";
        return false;
    }
    detail = "forward and backward bitwise reproducible";
    return true;
}

}  // namespace

CommandResult run_validate() {
    struct Property {
        const char* name;
        std::function<bool(std::string&)> fn;
    };

    const std::vector<Property> properties = {
        {"tensor.softmax_rows", check_softmax},
        {"tensor.layer_norm_moments", check_layer_norm},
        {"tensor.matmul_serial_oracle", check_matmul_oracle},
        {"autodiff.primitive_grad_checks", check_primitive_grads},
        {"autodiff.softmax_mutation_detected",
         [](std::string& detail) {
             const double clean = softmax_mse_grad_error();
             double flipped;
             {
                 PropertyGuardFlip guard;
                 flipped = softmax_mse_grad_error();
             }
             detail = "clean " + std::to_string(clean) + ", flipped " + std::to_string(flipped);
             return clean < 1e-6 && flipped > 1e-3;
         }},
        {"encoder.grad_vs_central_difference",
         [](std::string& detail) {
             const EncoderConfig cfg = tiny_config();
             const EncoderParams params = init_params(cfg, 7);
             const Tensor image = make_synthetic_image(cfg.image_size, cfg.channels, 3);
             Tensor shifted = image;
             for (std::size_t i = 0; i < shifted.size(); ++i) shifted.at(i) += (i % 5 == 0 ? 2.0 : 0.0);
             const Tensor target = encode(shifted, params, cfg).final_state();
             double analytic_err = 0.0;
             {
                 ForwardOptions opts;
                 opts.input_requires_grad = true;
                 EncodeGraph g = encode_traced(image, params, cfg, opts);
                 const ad::NodeId loss = g.tape.mse(g.final_state(), g.tape.leaf(target));
                 const Tensor grad = g.tape.backward(loss).at(g.input);
                 Rng rng(404);
                 const double h = 1e-5;
                 for (int c = 0; c < 40; ++c) {
                     const std::size_t i = static_cast<std::size_t>(rng.below(image.size()));
                     Tensor plus = image, minus = image;
                     plus.at(i) += h;
                     minus.at(i) -= h;
                     const double fp = kern::mse(encode(plus, params, cfg).final_state(), target);
                     const double fm = kern::mse(encode(minus, params, cfg).final_state(), target);
                     const double numeric = (fp - fm) / (2.0 * h);
                     const double denom = std::max({std::fabs(grad.at(i)), std::fabs(numeric), 1e-12});
                     analytic_err = std::max(analytic_err, std::fabs(grad.at(i) - numeric) / denom);
                 }
             }
             detail = "max relative error " + std::to_string(analytic_err) + " over 40 coords";
             return analytic_err < 1e-4;
         }},
        {"attack.pgd_contract", check_pgd_contract},
        {"mask.formula_oracle", check_mask_oracle},
        {"mask.masked_encode_bitwise", check_masked_encode_bitwise},
        {"theory.entropy_bound", check_entropy_bound},
        {"stats.oracles", check_stats_oracles},
        {"pipeline.determinism", check_determinism},
    };

    json records = json::array();
    bool all_pass = true;
    for (const Property& p : properties) {
        std::string detail;
        bool pass = false;
        try {
            pass = p.fn(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
            pass = false;
        }
        all_pass = all_pass && pass;
        records.push_back({{"property", p.name}, {"pass", pass}, {"detail", detail}});
    }

    CommandResult result;
    result.report["tool"] = "uvet";
    result.report["version"] = kToolVersion;
    result.report["properties"] = std::move(records);
    result.report["all_pass"] = all_pass;
    result.exit_code = all_pass ? 0 : 1;
    return result;
}

}  // namespace uvet
