#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "uvet/attack.hpp"
#include "uvet/encoder.hpp"
#include "uvet/mask.hpp"

namespace uvet {

// Everything a pipeline run needs, from config file + CLI overrides.
// Layer ranges left unset resolve proportionally to the encoder depth.
struct RunConfig {
    std::string checkpoint;

    AttackConfig attack;

    std::optional<LayerRange> source_layers;
    double sigma_th = 1.1;
    std::optional<LayerRange> mask_layers;
    // weight applied to uncertain tokens during masked encoding: 0 removes
    // them (the binary mask), fractions attenuate (soft masking)
    double soft_mask_factor = 0.0;

    double mc_dropout_p = 0.5;
    std::size_t mc_samples = 1000;
    std::uint64_t mc_seed = 0;

    std::vector<std::uint64_t> consistency_seeds;

    std::string out_dir = "out";
    std::size_t parallelism = 1;
    std::uint64_t global_seed = 0;

    // Proportional defaults against a depth-L encoder: source layers
    // {1..ceil(L*10/24)}, mask layers {ceil(L*13/24)..ceil(L*17/24)},
    // mirroring the 24-layer reference ratios.
    MaskConfig resolve_mask_config(std::size_t num_layers) const;

    void apply_kv(const std::string& key, const std::string& value);  // unknown key -> ConfigError
};

LayerRange default_source_layers(std::size_t num_layers);
LayerRange default_mask_layers(std::size_t num_layers);

LayerRange parse_layer_range(const std::string& text);  // "i:j" inclusive

/// Flat `key = value` file, '#' comments, dotted section prefixes.
RunConfig parse_run_config(const std::string& path);
void apply_config_text(RunConfig& cfg, const std::string& text);

// Encoder geometry from the same file format (encoder.* keys), used by
// init-model before any checkpoint exists.
EncoderConfig parse_encoder_config(const std::string& path);

}  // namespace uvet
