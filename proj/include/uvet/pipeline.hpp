#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "uvet/run_config.hpp"

namespace uvet {

inline constexpr const char* kToolVersion = "0.1.0";

struct CommandResult {
    nlohmann::json report;
    int exit_code = 0;  // 0 ok, 1 total failure, 2 config error (set by CLI)
};

/// Full per-image pipeline: attack, deviation maps, aggregated U, binary M,
/// masked re-encode. Writes U/M heatmaps, mask JSON, trace CSV, and
/// report.json under cfg.out_dir. Per-image failures become report entries;
/// the exit code is 1 only when every image fails.
CommandResult run_pipeline(const RunConfig& cfg, const std::vector<std::string>& image_paths);

/// Adversarial U vs MC-dropout variance: per-image Spearman rho over patch
/// tokens plus wall-clock per method. include_self_check adds rho(U, U).
CommandResult run_compare(const RunConfig& cfg, const std::vector<std::string>& image_paths,
                          bool include_self_check = false);

/// Property suites of all modules on generated fixtures; one pass/fail
/// record per property. Exit code 1 when any property fails.
CommandResult run_validate();

/// Perturbation-response spectrum sweep: covariance eigenvalues, entropy
/// bound gap and Gaussianity probe for each requested token.
struct SpectrumRequest {
    std::string checkpoint;
    std::string image_path;
    std::size_t layer = 1;
    std::vector<std::size_t> tokens;  // empty = all patch tokens
    std::size_t num_samples = 256;
    double budget_k = 2.0;
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    std::size_t csv_token = 0;  // token whose spectrum lands in spectrum.csv
};

CommandResult run_spectrum(const SpectrumRequest& req);

nlohmann::json mask_to_json(const BinaryMask& mask);
nlohmann::json uncertainty_to_json(const UncertaintyMap& map);

}  // namespace uvet
