#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <regex>

#include "oracles.hpp"
#include "uvet/checkpoint.hpp"
#include "uvet/image_io.hpp"
#include "uvet/pipeline.hpp"
#include "uvet/synthetic.hpp"

using namespace uvet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const char* tag)
        : path(fs::temp_directory_path() / (std::string("uvet_pl_") + tag + "_" + std::to_string(::getpid()))) {
        fs::create_directories(path);
    }
    ~TempDir() { std::error_code ec; fs::remove_all(path, ec); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// the single timestamp field is the one permitted nondeterministic byte range
std::string strip_timestamp(std::string text) {
    return std::regex_replace(text, std::regex("\"generated_at_unix\": \\d+"), "\"generated_at_unix\": 0");
}

struct Fixture {
    TempDir tmp{"fx"};
    EncoderConfig cfg = oracle::toy_encoder_config();
    std::vector<std::string> images;

    Fixture() {
        const EncoderParams params = init_params(cfg, 7);
        save_checkpoint(tmp.file("model.uvet"), cfg, params);
        for (int i = 0; i < 3; ++i) {
            const std::string p = tmp.file("img" + std::to_string(i) + ".pgm");
            write_pnm(p, make_synthetic_image(cfg.image_size, cfg.channels, 300 + i));
            images.push_back(p);
        }
    }

    RunConfig run_config(const std::string& out_tag) const {
        RunConfig rc;
        rc.checkpoint = tmp.file("model.uvet");
        rc.attack.budget_k = 3;
        rc.attack.step_alpha = 1;
        rc.attack.iterations = 12;
        rc.out_dir = tmp.file(out_tag);
        rc.mc_samples = 32;
        return rc;
    }
};

}  // namespace

TEST_CASE("pipeline end-to-end artifacts and error policy") {
    Fixture fx;
    std::vector<std::string> inputs = fx.images;
    std::ofstream(fx.tmp.file("broken.pgm")) << "not a pnm";
    inputs.push_back(fx.tmp.file("broken.pgm"));

    RunConfig rc = fx.run_config("out");
    const CommandResult r = run_pipeline(rc, inputs);
    CHECK(r.exit_code == 0);  // partial failure degrades to a record
    CHECK(r.report["aggregate"]["images_ok"] == 3);
    CHECK(r.report["aggregate"]["images_failed"] == 1);
    CHECK(r.report["images"].size() == 4);
    CHECK(r.report["images"][3].contains("error"));

    for (int i = 0; i < 3; ++i) {
        const auto& rec = r.report["images"][i];
        CHECK(rec["objective"]["final"].get<double>() > 0.0);
        CHECK(rec["final_epsilon_linf"].get<double>() <= 3.0);
        const std::string stem = rec["artifacts"]["u_pgm"].get<std::string>();
        CHECK(fs::exists(fs::path(rc.out_dir) / stem));
    }
    CHECK(fs::exists(fs::path(rc.out_dir) / "report.json"));

    // U heatmap has one pixel per patch cell
    const Tensor u_img = read_pnm((fs::path(rc.out_dir) /
                                   r.report["images"][0]["artifacts"]["u_pgm"].get<std::string>()).string());
    CHECK(u_img.shape() == Shape{fx.cfg.grid(), fx.cfg.grid(), 1});

    SUBCASE("all images failing is a total failure") {
        RunConfig rc2 = fx.run_config("out_fail");
        const CommandResult r2 = run_pipeline(rc2, {fx.tmp.file("broken.pgm")});
        CHECK(r2.exit_code == 1);
    }
}

TEST_CASE("pipeline reports are byte-identical across runs and parallelism") {
    Fixture fx;

    // identical config (same out_dir); the first report is set aside
    RunConfig a = fx.run_config("out_a");
    run_pipeline(a, fx.images);
    fs::rename(fs::path(a.out_dir) / "report.json", fs::path(a.out_dir) / "report_first.json");
    run_pipeline(a, fx.images);
    const std::string ra = slurp(fs::path(a.out_dir) / "report_first.json");
    const std::string rb = slurp(fs::path(a.out_dir) / "report.json");
    CHECK(strip_timestamp(ra) == strip_timestamp(rb));

    RunConfig par = fx.run_config("out_par");
    par.parallelism = 4;
    run_pipeline(par, fx.images);
    const std::string rp = slurp(fs::path(par.out_dir) / "report.json");
    // the config echo legitimately differs in parallelism and output_dir;
    // everything else, including every per-image record, must match
    auto normalize = [](std::string s) {
        s = std::regex_replace(s, std::regex("\"parallelism\": \\d+"), "");
        return std::regex_replace(s, std::regex("\"output_dir\": \"[^\"]*\""), "");
    };
    CHECK(normalize(strip_timestamp(ra)) == normalize(strip_timestamp(rp)));

    // artifact bytes match too
    for (const char* name : {"img000_img0.U.pgm", "img000_img0.M.json", "img000_img0.trace.csv"}) {
        CHECK(slurp(fs::path(a.out_dir) / name) == slurp(fs::path(par.out_dir) / name));
    }
}

TEST_CASE("k=0, I=0 pipeline is the end-to-end identity") {
    Fixture fx;
    RunConfig rc = fx.run_config("out_id");
    rc.attack.budget_k = 0;
    rc.attack.iterations = 0;
    const CommandResult r = run_pipeline(rc, {fx.images[0]});
    const auto& rec = r.report["images"][0];
    CHECK(rec["objective"]["final"].get<double>() == 0.0);
    CHECK(rec["fraction_uncertain"].get<double>() == 0.0);  // degenerate U -> all certain
    // all-ones mask leaves the masked forward bitwise equal to the plain one
    CHECK(rec["masked_final_relative_change"].get<double>() == 0.0);
}

TEST_CASE("the report's config echo re-runs to identical results") {
    Fixture fx;
    RunConfig rc = fx.run_config("out_echo");
    rc.sigma_th = 0.9;
    rc.attack.budget_k = 2;
    rc.global_seed = 17;
    rc.consistency_seeds = {4, 5};
    const CommandResult first = run_pipeline(rc, fx.images);

    // rebuild the run purely from the echoed config
    const auto& echo = first.report["config"];
    RunConfig rebuilt;
    rebuilt.checkpoint = echo["model"]["checkpoint"].get<std::string>();
    rebuilt.attack.budget_k = echo["attack"]["k"].get<int>();
    rebuilt.attack.step_alpha = echo["attack"]["alpha"].get<int>();
    rebuilt.attack.iterations = echo["attack"]["iterations"].get<int>();
    rebuilt.attack.rng_seed = echo["attack"]["seed"].get<std::uint64_t>();
    rebuilt.source_layers = LayerRange{echo["mask"]["source_layers"][0].get<std::size_t>(),
                                       echo["mask"]["source_layers"][1].get<std::size_t>()};
    rebuilt.mask_layers = LayerRange{echo["mask"]["mask_layers"][0].get<std::size_t>(),
                                     echo["mask"]["mask_layers"][1].get<std::size_t>()};
    rebuilt.sigma_th = echo["mask"]["sigma_th"].get<double>();
    rebuilt.soft_mask_factor = echo["mask"]["soft_factor"].get<double>();
    rebuilt.mc_dropout_p = echo["mc"]["dropout_p"].get<double>();
    rebuilt.mc_samples = echo["mc"]["samples"].get<std::size_t>();
    rebuilt.mc_seed = echo["mc"]["seed"].get<std::uint64_t>();
    rebuilt.global_seed = echo["run"]["seed"].get<std::uint64_t>();
    rebuilt.parallelism = echo["run"]["parallelism"].get<std::size_t>();
    rebuilt.consistency_seeds = echo["run"]["consistency_seeds"].get<std::vector<std::uint64_t>>();
    rebuilt.out_dir = fx.tmp.file("out_echo2");

    const CommandResult second = run_pipeline(rebuilt, fx.images);
    CHECK(first.report["images"] == second.report["images"]);
    CHECK(first.report["aggregate"] == second.report["aggregate"]);
}

TEST_CASE("soft masking attenuates instead of removing") {
    Fixture fx;
    RunConfig hard = fx.run_config("out_hard");
    hard.sigma_th = 0.5;  // make sure some tokens go uncertain
    RunConfig soft = hard;
    soft.out_dir = fx.tmp.file("out_soft");
    soft.soft_mask_factor = 0.2;

    const CommandResult rh = run_pipeline(hard, {fx.images[0]});
    const CommandResult rs = run_pipeline(soft, {fx.images[0]});
    REQUIRE(rh.report["images"][0]["num_uncertain"].get<int>() > 0);
    const double dh = rh.report["images"][0]["masked_final_relative_change"].get<double>();
    const double ds = rs.report["images"][0]["masked_final_relative_change"].get<double>();
    CHECK(ds > 0.0);
    CHECK(ds < dh);  // attenuation moves the states less than removal
    CHECK(rs.report["config"]["mask"]["soft_factor"].get<double>() == 0.2);
}

TEST_CASE("pipeline runs the consistency matrix when seeds are given") {
    Fixture fx;
    RunConfig rc = fx.run_config("out_cons");
    rc.consistency_seeds = {1, 2, 3};
    const CommandResult r = run_pipeline(rc, {fx.images[0]});
    const auto& mc = r.report["images"][0]["mask_consistency"];
    CHECK(mc["pairwise_miou"].size() == 3);
    const double mean = mc["mean_miou"].get<double>();
    CHECK(mean >= 0.0);
    CHECK(mean <= 1.0);
}

TEST_CASE("compare-uncertainty: degenerate dropout and self check") {
    Fixture fx;

    SUBCASE("p = 0 emits a correlation-undefined entry and keeps going") {
        RunConfig rc = fx.run_config("out_cmp0");
        rc.mc_dropout_p = 0.0;
        const CommandResult r = run_compare(rc, {fx.images[0], fx.images[1]});
        CHECK(r.exit_code == 0);
        for (const auto& rec : r.report["images"]) {
            CHECK(rec["spearman_rho"].is_null());
            CHECK(rec.contains("correlation_undefined"));
        }
    }

    SUBCASE("self check correlates U with itself at rho = 1") {
        RunConfig rc = fx.run_config("out_cmp1");
        rc.mc_dropout_p = 0.5;
        rc.mc_samples = 24;
        const CommandResult r = run_compare(rc, {fx.images[0]}, /*include_self_check=*/true);
        CHECK(r.report["images"][0]["self_check_rho"].get<double>() == 1.0);
        CHECK(r.report["images"][0]["adversarial_seconds"].get<double>() > 0.0);
        CHECK(r.report["images"][0]["mc_dropout_seconds"].get<double>() > 0.0);
    }
}

TEST_CASE("validate property suite passes on a fresh build") {
    const CommandResult r = run_validate();
    for (const auto& p : r.report["properties"]) {
        INFO(p["property"].get<std::string>(), ": ", p["detail"].get<std::string>());
        CHECK(p["pass"].get<bool>());
    }
    CHECK(r.exit_code == 0);
    CHECK(r.report["all_pass"].get<bool>());
}

TEST_CASE("spectrum sweep writes per-token reports and a csv") {
    Fixture fx;
    SpectrumRequest req;
    req.checkpoint = fx.tmp.file("model.uvet");
    req.image_path = fx.images[0];
    req.layer = 2;
    req.tokens = {1, 2};
    req.num_samples = 64;
    req.budget_k = 2.0;
    req.out_dir = fx.tmp.file("spec_out");
    const CommandResult r = run_spectrum(req);
    CHECK(r.report["tokens"].size() == 2);
    for (const auto& tok : r.report["tokens"]) {
        CHECK(tok["entropy_bound"]["gap"].get<double>() >= -1e-9);
        CHECK(tok["trace"].get<double>() > 0.0);
    }
    CHECK(fs::exists(fs::path(req.out_dir) / "spectrum.json"));
    CHECK(fs::exists(fs::path(req.out_dir) / "spectrum.csv"));
    const std::string csv = slurp(fs::path(req.out_dir) / "spectrum.csv");
    CHECK(csv.rfind("index,eigenvalue,cumulative_ratio\n", 0) == 0);
}
