#include "uvet/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "uvet/checkpoint.hpp"
#include "uvet/image_io.hpp"
#include "uvet/kernels.hpp"
#include "uvet/stats.hpp"
#include "uvet/theory.hpp"

namespace uvet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::int64_t unix_now() {
    return std::chrono::duration_cast<std::chrono::seconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::string image_stem(const std::string& path, std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "img%03zu", index);
    return std::string(buf) + "_" + fs::path(path).stem().string();
}

json layer_range_json(const LayerRange& r) { return json::array({r.first, r.last}); }

json config_echo(const RunConfig& cfg, const EncoderConfig& enc, const MaskConfig& mc) {
    json j;
    j["model"]["checkpoint"] = cfg.checkpoint;
    j["encoder"] = {{"image_size", enc.image_size},   {"patch_size", enc.patch_size},
                    {"channels", enc.channels},       {"num_layers", enc.num_layers},
                    {"hidden_dim", enc.hidden_dim},   {"num_heads", enc.num_heads},
                    {"mlp_ratio", enc.mlp_ratio},     {"include_cls", enc.include_cls}};
    j["attack"] = {{"k", cfg.attack.budget_k},
                   {"alpha", cfg.attack.step_alpha},
                   {"iterations", cfg.attack.iterations},
                   {"seed", cfg.attack.rng_seed}};
    if (cfg.attack.init_noise_seed) j["attack"]["init_noise_seed"] = *cfg.attack.init_noise_seed;
    j["mask"] = {{"source_layers", layer_range_json(mc.source_layers)},
                 {"mask_layers", layer_range_json(mc.mask_layers)},
                 {"sigma_th", mc.sigma_th},
                 {"soft_factor", cfg.soft_mask_factor},
                 {"source_layers_defaulted", !cfg.source_layers.has_value()},
                 {"mask_layers_defaulted", !cfg.mask_layers.has_value()}};
    j["mc"] = {{"dropout_p", cfg.mc_dropout_p}, {"samples", cfg.mc_samples}, {"seed", cfg.mc_seed}};
    j["run"] = {{"output_dir", cfg.out_dir},
                {"parallelism", cfg.parallelism},
                {"seed", cfg.global_seed},
                {"consistency_seeds", cfg.consistency_seeds}};
    return j;
}

double vec_min(const std::vector<double>& v, std::size_t from) {
    double m = v.at(from);
    for (std::size_t i = from; i < v.size(); ++i) m = std::min(m, v[i]);
    return m;
}

double vec_max(const std::vector<double>& v, std::size_t from) {
    double m = v.at(from);
    for (std::size_t i = from; i < v.size(); ++i) m = std::max(m, v[i]);
    return m;
}

double vec_mean(const std::vector<double>& v, std::size_t from) {
    double s = 0.0;
    for (std::size_t i = from; i < v.size(); ++i) s += v[i];
    return s / static_cast<double>(v.size() - from);
}

double median(std::vector<double> v) {
    if (v.empty()) throw UsageError("median of empty list");
    std::sort(v.begin(), v.end());
    const std::size_t mid = v.size() / 2;
    return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

double frobenius_norm(const Tensor& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) s += t.at(i) * t.at(i);
    return std::sqrt(s);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("short write: " + path.string());
}

void write_trace_csv(const fs::path& path, const std::vector<double>& trace) {
    std::ostringstream os;
    os << "iteration,loss\n";
    os.precision(17);
    for (std::size_t i = 0; i < trace.size(); ++i) os << i << "," << trace[i] << "\n";
    write_text(path, os.str());
}

// frees each worker slot independently so parallel assembly stays order-stable
struct ImageRecordSlot {
    json record;
    bool ok = false;
};

}  // namespace

json uncertainty_to_json(const UncertaintyMap& map) {
    return json{{"values", map.values},
                {"source_layers", layer_range_json(map.source_layers)},
                {"cls_offset", map.cls_offset}};
}

json mask_to_json(const BinaryMask& mask) {
    std::vector<int> bits(mask.values.size());
    for (std::size_t i = 0; i < mask.values.size(); ++i) bits[i] = mask.values[i] == 0.0 ? 0 : 1;
    return json{{"values", bits},
                {"sigma_th", mask.sigma_th},
                {"cls_offset", mask.cls_offset},
                {"num_uncertain", mask.num_uncertain},
                {"fraction_uncertain", mask.fraction_uncertain}};
}

CommandResult run_pipeline(const RunConfig& cfg, const std::vector<std::string>& image_paths) {
    if (image_paths.empty()) throw UsageError("pipeline: no images given");
    cfg.attack.validate();
    auto [enc_config, params] = load_checkpoint(cfg.checkpoint);
    const MaskConfig mask_cfg = cfg.resolve_mask_config(enc_config.num_layers);
    const std::size_t cls_offset = enc_config.include_cls ? 1 : 0;

    fs::create_directories(cfg.out_dir);

    std::vector<ImageRecordSlot> slots(image_paths.size());
    const int threads = static_cast<int>(std::max<std::size_t>(1, cfg.parallelism));

#pragma omp parallel for num_threads(threads) schedule(dynamic)
    for (std::ptrdiff_t idx = 0; idx < static_cast<std::ptrdiff_t>(image_paths.size()); ++idx) {
        const std::size_t i = static_cast<std::size_t>(idx);
        ImageRecordSlot& slot = slots[i];
        const std::string& path = image_paths[i];
        try {
            const Tensor image = read_pnm(path);

            AttackConfig atk = cfg.attack;
            const std::uint64_t image_seed = mix_seed(cfg.global_seed, i);
            atk.rng_seed = mix_seed(image_seed, cfg.attack.rng_seed);
            if (cfg.attack.init_noise_seed) {
                atk.init_noise_seed = mix_seed(image_seed, *cfg.attack.init_noise_seed);
            }

            const HiddenStates h_orig = encode(image, params, enc_config);
            const AttackResult attack = pgd_attack(image, params, enc_config, atk);
            const HiddenStates h_attk = encode(attack.perturbed_image, params, enc_config);

            const auto devs = layerwise_deviation(h_orig, h_attk, mask_cfg.source_layers);
            const UncertaintyMap u = aggregate_uncertainty(devs, mask_cfg.source_layers, cls_offset);
            const BinaryMask m = binarize_mask(u, mask_cfg.sigma_th);

            std::vector<double> weights = m.values;
            if (cfg.soft_mask_factor > 0.0) {
                for (double& w : weights) {
                    if (w == 0.0) w = cfg.soft_mask_factor;
                }
            }
            const HiddenStates masked =
                masked_encode(image, params, enc_config, weights, mask_cfg.mask_layers);
            const std::vector<double> profile = layer_deviation_profile(h_orig, h_attk);

            const double masked_change =
                frobenius_norm(kern::sub(masked.final_state(), h_orig.final_state())) /
                frobenius_norm(h_orig.final_state());

            const std::string stem = image_stem(path, i);
            const std::size_t grid = enc_config.grid();
            std::vector<double> patch_u(u.values.begin() + static_cast<std::ptrdiff_t>(cls_offset),
                                        u.values.end());
            write_pgm_unit(fs::path(cfg.out_dir) / (stem + ".U.pgm"), patch_u, grid, grid);
            std::vector<double> patch_m;
            for (std::size_t t = cls_offset; t < m.values.size(); ++t) patch_m.push_back(m.values[t]);
            write_pgm_unit(fs::path(cfg.out_dir) / (stem + ".M.pgm"), patch_m, grid, grid);
            write_text(fs::path(cfg.out_dir) / (stem + ".U.json"), uncertainty_to_json(u).dump(2) + "\n");
            write_text(fs::path(cfg.out_dir) / (stem + ".M.json"), mask_to_json(m).dump(2) + "\n");
            write_trace_csv(fs::path(cfg.out_dir) / (stem + ".trace.csv"), attack.objective_trace);

            json rec;
            rec["image"] = path;
            rec["objective"] = {{"initial", attack.objective_trace.front()},
                                {"final", attack.final_objective()},
                                {"max", vec_max(attack.objective_trace, 0)}};
            rec["final_epsilon_linf"] = attack.final_epsilon_linf;
            rec["uncertainty"] = {{"min", vec_min(u.values, cls_offset)},
                                  {"max", vec_max(u.values, cls_offset)},
                                  {"mean", vec_mean(u.values, cls_offset)}};
            rec["num_uncertain"] = m.num_uncertain;
            rec["fraction_uncertain"] = m.fraction_uncertain;
            rec["deviation_profile"] = profile;
            rec["masked_final_relative_change"] = masked_change;
            rec["artifacts"] = {{"u_pgm", stem + ".U.pgm"},
                                {"u_json", stem + ".U.json"},
                                {"m_pgm", stem + ".M.pgm"},
                                {"m_json", stem + ".M.json"},
                                {"trace_csv", stem + ".trace.csv"}};

            if (cfg.consistency_seeds.size() >= 2) {
                std::vector<std::uint64_t> seeds;
                for (std::uint64_t s : cfg.consistency_seeds) seeds.push_back(mix_seed(image_seed, s));
                const auto iou = seeded_mask_consistency(image, params, enc_config, cfg.attack,
                                                         mask_cfg, seeds);
                rec["mask_consistency"] = {{"seeds", cfg.consistency_seeds},
                                           {"pairwise_miou", iou},
                                           {"mean_miou", mean_offdiagonal(iou)}};
            }
            slot.record = std::move(rec);
            slot.ok = true;
        } catch (const Error& e) {
            slot.record = json{{"image", path}, {"error", e.what()}};
            slot.ok = false;
        }
    }

    json images = json::array();
    std::size_t n_ok = 0;
    double sum_fraction = 0.0, sum_final_obj = 0.0;
    for (const ImageRecordSlot& slot : slots) {
        images.push_back(slot.record);
        if (slot.ok) {
            ++n_ok;
            sum_fraction += slot.record["fraction_uncertain"].get<double>();
            sum_final_obj += slot.record["objective"]["final"].get<double>();
        }
    }

    json report;
    report["tool"] = "uvet";
    report["version"] = kToolVersion;
    report["generated_at_unix"] = unix_now();
    report["config"] = config_echo(cfg, enc_config, mask_cfg);
    report["images"] = std::move(images);
    report["aggregate"] = {{"images_total", image_paths.size()},
                           {"images_ok", n_ok},
                           {"images_failed", image_paths.size() - n_ok}};
    if (n_ok > 0) {
        report["aggregate"]["mean_fraction_uncertain"] = sum_fraction / static_cast<double>(n_ok);
        report["aggregate"]["mean_final_objective"] = sum_final_obj / static_cast<double>(n_ok);
    }

    write_text(fs::path(cfg.out_dir) / "report.json", report.dump(2) + "\n");

    CommandResult result;
    result.report = std::move(report);
    result.exit_code = n_ok == 0 ? 1 : 0;
    return result;
}

CommandResult run_compare(const RunConfig& cfg, const std::vector<std::string>& image_paths,
                          bool include_self_check) {
    if (image_paths.empty()) throw UsageError("compare: no images given");
    cfg.attack.validate();
    auto [enc_config, params] = load_checkpoint(cfg.checkpoint);
    const MaskConfig mask_cfg = cfg.resolve_mask_config(enc_config.num_layers);
    const std::size_t cls_offset = enc_config.include_cls ? 1 : 0;

    json images = json::array();
    std::vector<double> rhos;
    double total_adv = 0.0, total_mc = 0.0;
    std::size_t n_ok = 0;

    for (std::size_t i = 0; i < image_paths.size(); ++i) {
        const std::string& path = image_paths[i];
        json rec;
        rec["image"] = path;
        try {
            const Tensor image = read_pnm(path);
            const std::uint64_t image_seed = mix_seed(cfg.global_seed, i);

            AttackConfig atk = cfg.attack;
            atk.rng_seed = mix_seed(image_seed, cfg.attack.rng_seed);

            const double t0 = now_seconds();
            const HiddenStates h_orig = encode(image, params, enc_config);
            const AttackResult attack = pgd_attack(image, params, enc_config, atk);
            const HiddenStates h_attk = encode(attack.perturbed_image, params, enc_config);
            const auto devs = layerwise_deviation(h_orig, h_attk, mask_cfg.source_layers);
            const UncertaintyMap u = aggregate_uncertainty(devs, mask_cfg.source_layers, cls_offset);
            const double adv_seconds = now_seconds() - t0;

            const double t1 = now_seconds();
            const DropoutEstimate est = mc_dropout_encode(image, params, enc_config, cfg.mc_dropout_p,
                                                          cfg.mc_samples, mix_seed(image_seed, cfg.mc_seed));
            const double mc_seconds = now_seconds() - t1;

            rec["adversarial_seconds"] = adv_seconds;
            rec["mc_dropout_seconds"] = mc_seconds;
            total_adv += adv_seconds;
            total_mc += mc_seconds;

            std::vector<double> u_patch(u.values.begin() + static_cast<std::ptrdiff_t>(cls_offset),
                                        u.values.end());
            std::vector<double> var_patch(est.token_variance.begin() + static_cast<std::ptrdiff_t>(cls_offset),
                                          est.token_variance.end());
            try {
                const stats::SpearmanResult sr = stats::spearman_rho(u_patch, var_patch);
                rec["spearman_rho"] = sr.rho;
                rec["p_value"] = sr.p_value;
                rhos.push_back(sr.rho);
            } catch (const DegenerateError& e) {
                rec["spearman_rho"] = nullptr;
                rec["correlation_undefined"] = e.what();
            }
            if (include_self_check) {
                rec["self_check_rho"] = stats::spearman_rho(u_patch, u_patch).rho;
            }
            ++n_ok;
        } catch (const Error& e) {
            rec["error"] = e.what();
        }
        images.push_back(std::move(rec));
    }

    json report;
    report["tool"] = "uvet";
    report["version"] = kToolVersion;
    report["generated_at_unix"] = unix_now();
    report["images"] = std::move(images);
    report["aggregate"] = {{"images_total", image_paths.size()},
                           {"images_ok", n_ok},
                           {"adversarial_seconds_total", total_adv},
                           {"mc_dropout_seconds_total", total_mc}};
    if (total_adv > 0.0) report["aggregate"]["mc_over_adversarial_speedup"] = total_mc / total_adv;
    if (!rhos.empty()) report["aggregate"]["median_spearman_rho"] = median(rhos);

    CommandResult result;
    result.report = std::move(report);
    result.exit_code = n_ok == 0 ? 1 : 0;
    return result;
}

CommandResult run_spectrum(const SpectrumRequest& req) {
    auto [enc_config, params] = load_checkpoint(req.checkpoint);
    if (req.layer < 1 || req.layer > enc_config.num_layers) {
        throw ConfigError("spectrum: layer out of range");
    }
    const Tensor image = read_pnm(req.image_path);
    const std::size_t cls_offset = enc_config.include_cls ? 1 : 0;

    std::vector<std::size_t> tokens = req.tokens;
    if (tokens.empty()) {
        for (std::size_t t = cls_offset; t < enc_config.num_tokens(); ++t) tokens.push_back(t);
    }

    fs::create_directories(req.out_dir);
    std::size_t csv_target = tokens.front();
    for (std::size_t t : tokens) {
        if (t == req.csv_token) csv_target = t;
    }
    json token_reports = json::array();
    bool csv_written = false;
    for (std::size_t t : tokens) {
        const DeviationSample sample = sample_deviations(image, params, enc_config, t, req.layer,
                                                         req.num_samples, req.budget_k, req.seed);
        const SpectrumReport spec = covariance_spectrum(sample);
        const EntropyBound bound = entropy_bound_check(sample);

        json jr;
        jr["token"] = t;
        jr["layer"] = req.layer;
        jr["trace"] = spec.trace;
        jr["logdet_underflow"] = spec.logdet_underflow;
        jr["eigenvalues_top8"] = std::vector<double>(
            spec.eigenvalues.begin(),
            spec.eigenvalues.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(8, spec.eigenvalues.size())));
        const std::size_t top = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::ceil(0.01 * static_cast<double>(enc_config.hidden_dim))));
        jr["top_ratio"] = {{"components", top}, {"cumulative", spec.cumulative_ratio[top - 1]}};
        jr["entropy_bound"] = {{"gaussian_entropy", bound.gaussian_entropy},
                               {"trace_bound", bound.trace_bound},
                               {"gap", bound.gap},
                               {"underflow", bound.underflow}};
        if (req.num_samples >= 100) {
            const GaussianityProbe probe = gaussianity_probe(sample);
            jr["gaussianity"] = probe.degenerate
                                    ? json{{"degenerate", true}}
                                    : json{{"degenerate", false},
                                           {"max_abs_skewness", probe.max_abs_skewness},
                                           {"max_abs_excess_kurtosis", probe.max_abs_excess_kurtosis},
                                           {"coords_probed", probe.coords_probed}};
        }
        token_reports.push_back(std::move(jr));

        if (!csv_written && t == csv_target) {
            std::ostringstream os;
            os << "index,eigenvalue,cumulative_ratio\n";
            os.precision(17);
            for (std::size_t e = 0; e < spec.eigenvalues.size(); ++e) {
                os << e << "," << spec.eigenvalues[e] << "," << spec.cumulative_ratio[e] << "\n";
            }
            write_text(fs::path(req.out_dir) / "spectrum.csv", os.str());
            csv_written = true;
        }
    }

    json report;
    report["tool"] = "uvet";
    report["version"] = kToolVersion;
    report["generated_at_unix"] = unix_now();
    report["request"] = {{"checkpoint", req.checkpoint}, {"image", req.image_path},
                         {"layer", req.layer},           {"num_samples", req.num_samples},
                         {"budget_k", req.budget_k},     {"seed", req.seed}};
    report["tokens"] = std::move(token_reports);
    write_text(fs::path(req.out_dir) / "spectrum.json", report.dump(2) + "\n");

    CommandResult result;
    result.report = std::move(report);
    return result;
}

}  // namespace uvet
