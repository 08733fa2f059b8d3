#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "uvet/checkpoint.hpp"
#include "uvet/image_io.hpp"
#include "uvet/pipeline.hpp"
#include "uvet/stats.hpp"
#include "uvet/synthetic.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw uvet::IoError("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw uvet::FormatError("bad JSON in " + path + ": " + e.what());
    }
    return j;
}

void emit(const json& j, const std::string& output_path) {
    const std::string text = j.dump(2) + "\n";
    if (output_path.empty()) {
        std::cout << text;
    } else {
        std::ofstream out(output_path, std::ios::binary);
        if (!out) throw uvet::IoError("cannot write " + output_path);
        out << text;
    }
}

std::vector<double> json_doubles(const json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_array()) {
        throw uvet::FormatError(std::string("stats input: missing array '") + key + "'");
    }
    return j[key].get<std::vector<double>>();
}

std::vector<bool> json_yes_no(const json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_array()) {
        throw uvet::FormatError(std::string("stats input: missing array '") + key + "'");
    }
    std::vector<bool> out;
    for (const json& v : j[key]) {
        if (v.is_boolean()) {
            out.push_back(v.get<bool>());
        } else if (v.is_string()) {
            const std::string s = v.get<std::string>();
            if (s == "yes") out.push_back(true);
            else if (s == "no") out.push_back(false);
            else throw uvet::FormatError(std::string(key) + ": expected yes/no, got '" + s + "'");
        } else {
            throw uvet::FormatError(std::string(key) + ": expected yes/no strings or booleans");
        }
    }
    return out;
}

struct RunFlags {
    std::string config_path;
    std::string model_path;
    std::string out_dir;
    int k = -1, alpha = -1, iterations = -1;
    double sigma_th = std::numeric_limits<double>::quiet_NaN();
    double soft_mask = std::numeric_limits<double>::quiet_NaN();
    std::string source_layers, mask_layers;
    long long attack_seed = -1, global_seed = -1, mc_seed = -1;
    double mc_p = -1.0;
    long long mc_samples = -1;
    long long parallelism = -1;
    std::string consistency_seeds;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
    cmd->add_option("--config", f.config_path, "run config file (flat key = value)");
    cmd->add_option("--model", f.model_path, "checkpoint path");
    cmd->add_option("--out-dir", f.out_dir, "output directory");
    cmd->add_option("--k", f.k, "attack budget, pixel units");
    cmd->add_option("--alpha", f.alpha, "attack step, pixel units");
    cmd->add_option("--iters", f.iterations, "PGD iterations");
    cmd->add_option("--attack-seed", f.attack_seed, "attack rng seed");
    cmd->add_option("--sigma-th", f.sigma_th, "mask threshold (standardized units)");
    cmd->add_option("--soft-mask", f.soft_mask,
                    "attenuate uncertain tokens by this factor instead of removing them");
    cmd->add_option("--source-layers", f.source_layers, "deviation source layers, i:j");
    cmd->add_option("--mask-layers", f.mask_layers, "attention masking layers, i:j");
    cmd->add_option("--mc-p", f.mc_p, "MC dropout probability");
    cmd->add_option("--mc-samples", f.mc_samples, "MC dropout passes");
    cmd->add_option("--mc-seed", f.mc_seed, "MC dropout seed");
    cmd->add_option("--seed", f.global_seed, "global seed (per-image streams derive from it)");
    cmd->add_option("--parallelism", f.parallelism, "worker threads across images");
    cmd->add_option("--consistency-seeds", f.consistency_seeds,
                    "comma list of attack-init seeds for the mask-consistency check");
}

uvet::RunConfig resolve_run_config(const RunFlags& f) {
    uvet::RunConfig cfg;
    if (!f.config_path.empty()) cfg = uvet::parse_run_config(f.config_path);
    if (!f.model_path.empty()) cfg.checkpoint = f.model_path;
    if (!f.out_dir.empty()) cfg.out_dir = f.out_dir;
    if (const char* env = std::getenv("UVET_OUT_DIR"); env && *env) cfg.out_dir = env;
    if (f.k >= 0) cfg.attack.budget_k = f.k;
    if (f.alpha >= 0) cfg.attack.step_alpha = f.alpha;
    if (f.iterations >= 0) cfg.attack.iterations = f.iterations;
    if (f.attack_seed >= 0) cfg.attack.rng_seed = static_cast<std::uint64_t>(f.attack_seed);
    if (!std::isnan(f.sigma_th)) cfg.sigma_th = f.sigma_th;
    if (!std::isnan(f.soft_mask)) {
        if (f.soft_mask < 0.0 || f.soft_mask >= 1.0) {
            throw uvet::ConfigError("--soft-mask must be in [0, 1)");
        }
        cfg.soft_mask_factor = f.soft_mask;
    }
    if (!f.source_layers.empty()) cfg.source_layers = uvet::parse_layer_range(f.source_layers);
    if (!f.mask_layers.empty()) cfg.mask_layers = uvet::parse_layer_range(f.mask_layers);
    if (f.mc_p >= 0.0) cfg.mc_dropout_p = f.mc_p;
    if (f.mc_samples >= 0) cfg.mc_samples = static_cast<std::size_t>(f.mc_samples);
    if (f.mc_seed >= 0) cfg.mc_seed = static_cast<std::uint64_t>(f.mc_seed);
    if (f.global_seed >= 0) cfg.global_seed = static_cast<std::uint64_t>(f.global_seed);
    if (f.parallelism >= 0) cfg.parallelism = static_cast<std::size_t>(f.parallelism);
    if (!f.consistency_seeds.empty()) {
        cfg.consistency_seeds.clear();
        std::stringstream ss(f.consistency_seeds);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (!item.empty()) cfg.consistency_seeds.push_back(std::stoull(item));
        }
    }
    if (cfg.checkpoint.empty()) throw uvet::ConfigError("no checkpoint given (--model or model.checkpoint)");
    return cfg;
}

void write_binned_csv(const std::string& path, const uvet::stats::BinnedReport& r) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw uvet::IoError("cannot write " + path);
    out.precision(17);
    out << "bin,count,statistic_mean";
    const std::size_t n_metrics = r.metric_means.empty() ? 0 : r.metric_means.front().size();
    for (std::size_t m = 0; m < n_metrics; ++m) out << ",metric_" << m;
    out << "\n";
    for (std::size_t b = 0; b < r.counts.size(); ++b) {
        out << b << "," << r.counts[b] << "," << r.statistic_mean[b];
        for (std::size_t m = 0; m < n_metrics; ++m) out << "," << r.metric_means[b][m];
        out << "\n";
    }
}

int cmd_stats(const std::string& which, const std::string& input_path, const std::string& output_path,
              const std::string& alternative, long long n_bins, const std::string& csv_path) {
    const json in = read_json(input_path);
    json out;
    if (which == "spearman") {
        const auto r = uvet::stats::spearman_rho(json_doubles(in, "x"), json_doubles(in, "y"));
        out = {{"rho", r.rho}, {"p_value", r.p_value}};
    } else if (which == "wilcoxon") {
        uvet::stats::PairedSample s;
        s.before = json_doubles(in, "before");
        s.after = json_doubles(in, "after");
        std::string alt = alternative;
        if (in.contains("alternative")) alt = in["alternative"].get<std::string>();
        const auto r = uvet::stats::wilcoxon_signed_rank(s, uvet::stats::parse_alternative(alt));
        out = {{"w", r.w}, {"p_value", r.p_value}, {"method", r.method}, {"n_used", r.n_used}};
    } else if (which == "chair") {
        if (!in.contains("captions")) throw uvet::FormatError("stats input: missing 'captions'");
        std::vector<uvet::stats::CaptionObjects> captions;
        for (const json& c : in["captions"]) {
            uvet::stats::CaptionObjects co;
            for (const json& m : c.value("mentioned", json::array())) co.mentioned.insert(m.get<std::string>());
            for (const json& h : c.value("hallucinated", json::array())) co.hallucinated.insert(h.get<std::string>());
            captions.push_back(std::move(co));
        }
        const auto r = uvet::stats::chair_scores(captions);
        out = {{"chair_s", r.chair_s}, {"chair_i", r.chair_i}};
    } else if (which == "binary") {
        const auto r = uvet::stats::binary_classification_metrics(json_yes_no(in, "predictions"),
                                                                  json_yes_no(in, "labels"));
        out = {{"accuracy", r.accuracy},
               {"tp", r.tp},
               {"fp", r.fp},
               {"tn", r.tn},
               {"fn", r.fn}};
        out["precision"] = r.precision ? json(*r.precision) : json(nullptr);
        out["recall"] = r.recall ? json(*r.recall) : json(nullptr);
        out["f1"] = r.f1 ? json(*r.f1) : json(nullptr);
    } else if (which == "binned") {
        const std::vector<double> statistic = json_doubles(in, "statistic");
        std::vector<std::vector<double>> metrics;
        if (!in.contains("metrics")) throw uvet::FormatError("stats input: missing 'metrics'");
        for (const json& row : in["metrics"]) metrics.push_back(row.get<std::vector<double>>());
        long long bins = n_bins;
        if (in.contains("n_bins")) bins = in["n_bins"].get<long long>();
        const auto r = uvet::stats::binned_analysis(statistic, metrics, static_cast<std::size_t>(bins));
        out = {{"edges", r.edges},
               {"statistic_mean", r.statistic_mean},
               {"metric_means", r.metric_means},
               {"counts", r.counts},
               {"collapsed", r.collapsed}};
        if (!csv_path.empty()) write_binned_csv(csv_path, r);
    } else {
        throw uvet::ConfigError("unknown stats kind: " + which);
    }
    emit(out, output_path);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"uncertain visual token masking toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", uvet::kToolVersion);

    // init-model
    auto* init = app.add_subcommand("init-model", "create a deterministic encoder checkpoint");
    std::string init_config, init_out = "model.uvet";
    long long init_seed = 0;
    init->add_option("--config", init_config, "encoder config file (encoder.* keys)");
    init->add_option("--seed", init_seed, "init seed")->required();
    init->add_option("--out", init_out, "checkpoint path")->required();

    // pipeline
    auto* pipe = app.add_subcommand("pipeline", "attack -> uncertainty map -> mask -> masked encode");
    RunFlags pipe_flags;
    std::vector<std::string> pipe_images;
    add_run_flags(pipe, pipe_flags);
    pipe->add_option("images", pipe_images, "PGM/PPM images")->required();

    // validate
    auto* val = app.add_subcommand("validate", "run the module property suites");
    std::string val_json;
    val->add_option("--json", val_json, "also write the machine-readable report here");

    // compare-uncertainty
    auto* cmp = app.add_subcommand("compare-uncertainty",
                                   "adversarial uncertainty vs MC dropout, with wall-clock");
    RunFlags cmp_flags;
    std::vector<std::string> cmp_images;
    bool cmp_self_check = false;
    add_run_flags(cmp, cmp_flags);
    cmp->add_flag("--self-check", cmp_self_check, "also correlate the adversarial map with itself");
    cmp->add_option("images", cmp_images, "PGM/PPM images")->required();

    // stats
    auto* st = app.add_subcommand("stats", "statistics over JSON input files");
    std::string st_kind, st_input, st_output, st_csv, st_alternative = "two_sided";
    long long st_bins = 10;
    st->add_option("kind", st_kind, "spearman | wilcoxon | chair | binary | binned")->required();
    st->add_option("--input", st_input, "input JSON file")->required();
    st->add_option("--output", st_output, "output JSON file (default stdout)");
    st->add_option("--alternative", st_alternative, "wilcoxon alternative");
    st->add_option("--bins", st_bins, "bin count for 'binned'");
    st->add_option("--csv", st_csv, "also export the binned report as CSV");

    // spectrum
    auto* sp = app.add_subcommand("spectrum", "perturbation-response covariance spectrum sweep");
    uvet::SpectrumRequest sp_req;
    std::vector<std::size_t> sp_tokens;
    sp->add_option("--model", sp_req.checkpoint, "checkpoint path")->required();
    sp->add_option("--image", sp_req.image_path, "input image")->required();
    sp->add_option("--layer", sp_req.layer, "hidden-state layer (1-based)");
    sp->add_option("--token", sp_tokens, "token indices (default: all patch tokens)");
    sp->add_option("--samples", sp_req.num_samples, "perturbation draws");
    sp->add_option("--k", sp_req.budget_k, "perturbation budget");
    sp->add_option("--seed", sp_req.seed, "sampling seed");
    sp->add_option("--out-dir", sp_req.out_dir, "output directory");

    // gen-image (utility; the experiment corpus is synthetic)
    auto* gen = app.add_subcommand("gen-image", "write a deterministic synthetic test image");
    std::size_t gen_size = 32, gen_channels = 1;
    long long gen_seed = 0;
    std::string gen_out;
    gen->add_option("--size", gen_size, "side length in pixels");
    gen->add_option("--channels", gen_channels, "1 (PGM) or 3 (PPM)");
    gen->add_option("--seed", gen_seed, "image seed")->required();
    gen->add_option("--out", gen_out, "output path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (init->parsed()) {
            uvet::EncoderConfig config;
            if (!init_config.empty()) config = uvet::parse_encoder_config(init_config);
            config.validate();
            const uvet::EncoderParams params =
                uvet::init_params(config, static_cast<std::uint64_t>(init_seed));
            uvet::save_checkpoint(init_out, config, params);
            std::cout << "wrote " << init_out << " (" << params.param_count() << " parameters, "
                      << config.num_layers << " layers, " << config.num_tokens() << " tokens)\n";
            return kExitOk;
        }
        if (pipe->parsed()) {
            const uvet::RunConfig cfg = resolve_run_config(pipe_flags);
            const uvet::CommandResult r = uvet::run_pipeline(cfg, pipe_images);
            const auto& agg = r.report["aggregate"];
            std::cout << "pipeline: " << agg["images_ok"] << "/" << agg["images_total"]
                      << " images ok; report at " << cfg.out_dir << "/report.json\n";
            return r.exit_code;
        }
        if (val->parsed()) {
            const uvet::CommandResult r = uvet::run_validate();
            for (const auto& p : r.report["properties"]) {
                std::cout << (p["pass"].get<bool>() ? "[PASS] " : "[FAIL] ")
                          << p["property"].get<std::string>() << " - " << p["detail"].get<std::string>()
                          << "\n";
            }
            if (!val_json.empty()) emit(r.report, val_json);
            return r.exit_code;
        }
        if (cmp->parsed()) {
            const uvet::RunConfig cfg = resolve_run_config(cmp_flags);
            const uvet::CommandResult r = uvet::run_compare(cfg, cmp_images, cmp_self_check);
            emit(r.report, "");
            return r.exit_code;
        }
        if (st->parsed()) {
            return cmd_stats(st_kind, st_input, st_output, st_alternative, st_bins, st_csv);
        }
        if (sp->parsed()) {
            sp_req.tokens = sp_tokens;
            if (!sp_tokens.empty()) sp_req.csv_token = sp_tokens.front();
            if (const char* env = std::getenv("UVET_OUT_DIR"); env && *env) sp_req.out_dir = env;
            const uvet::CommandResult r = uvet::run_spectrum(sp_req);
            std::cout << "spectrum: " << r.report["tokens"].size() << " tokens; report at "
                      << sp_req.out_dir << "/spectrum.json\n";
            return r.exit_code;
        }
        if (gen->parsed()) {
            const uvet::Tensor img = uvet::make_synthetic_image(
                gen_size, gen_channels, static_cast<std::uint64_t>(gen_seed));
            uvet::write_pnm(gen_out, img);
            std::cout << "wrote " << gen_out << "\n";
            return kExitOk;
        }
    } catch (const uvet::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const uvet::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitConfig;
}
