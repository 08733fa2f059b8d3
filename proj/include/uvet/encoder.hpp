#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "uvet/autodiff.hpp"
#include "uvet/rng.hpp"
#include "uvet/tensor.hpp"

namespace uvet {

inline constexpr double kLayerNormEps = 1e-5;

// Inclusive 1-based block range; first > last means empty.
struct LayerRange {
    std::size_t first = 1;
    std::size_t last = 0;
    bool empty() const { return first > last; }
    bool contains(std::size_t l) const { return l >= first && l <= last; }
    std::size_t count() const { return empty() ? 0 : last - first + 1; }
    bool operator==(const LayerRange&) const = default;
};

struct EncoderConfig {
    std::size_t image_size = 32;  // pixels per side, square
    std::size_t patch_size = 8;
    std::size_t channels = 1;
    std::size_t num_layers = 4;
    std::size_t hidden_dim = 32;
    std::size_t num_heads = 4;
    double mlp_ratio = 2.0;
    bool include_cls = true;

    std::size_t grid() const { return image_size / patch_size; }
    std::size_t num_patches() const { return grid() * grid(); }
    std::size_t num_tokens() const { return num_patches() + (include_cls ? 1 : 0); }
    std::size_t head_dim() const { return hidden_dim / num_heads; }
    std::size_t patch_dim() const { return patch_size * patch_size * channels; }
    std::size_t mlp_hidden() const;

    void validate() const;  // throws ConfigError
    bool operator==(const EncoderConfig&) const = default;
};

struct LayerParams {
    Tensor ln1_gain, ln1_bias;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gain, ln2_bias;
    Tensor w1, b1, w2, b2;
};

struct EncoderParams {
    Tensor patch_weight;  // patch_dim x d
    Tensor patch_bias;    // 1 x d
    Tensor pos_embed;     // N x d
    Tensor cls_embed;     // 1 x d, present iff include_cls
    std::vector<LayerParams> layers;

    std::size_t param_count() const;
};

/// Scaled-normal init: patch embedding std 1.0 (content-dominated stream),
/// positional/CLS std 0.05, projection matrices std 1/sqrt(d), biases zero,
/// LN gain 1. Deterministic per (config, seed): fixed draw order.
EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed);

// Per-layer token states: index 0 is the embedding output, 1..L the
// post-residual block outputs. Each entry is N x d.
struct HiddenStates {
    std::vector<Tensor> states;
    const Tensor& layer(std::size_t t) const { return states.at(t); }
    const Tensor& final_state() const { return states.back(); }
    std::size_t num_layers() const { return states.size() - 1; }
};

struct ForwardOptions {
    bool input_requires_grad = false;
    // Token-wise attention-output weights (length N), applied to the
    // concatenated head outputs before the output projection, within
    // mask_layers only.
    const std::vector<double>* token_weights = nullptr;
    LayerRange mask_layers{};
    // Inverted dropout on both residual branches; masks drawn from
    // dropout_rng in graph order.
    double dropout_p = 0.0;
    Rng* dropout_rng = nullptr;
};

// Forward pass recorded on a tape, for gradient consumers.
struct EncodeGraph {
    ad::Tape tape;
    ad::NodeId input = 0;
    std::vector<ad::NodeId> states;
    ad::NodeId final_state() const { return states.back(); }
};

EncodeGraph encode_traced(const Tensor& image, const EncoderParams& params,
                          const EncoderConfig& config, const ForwardOptions& opts);

/// Plain inference: image (HxWxC, 0-255 scale) -> all L+1 layer states.
HiddenStates encode(const Tensor& image, const EncoderParams& params, const EncoderConfig& config);

/// Inference with token-wise attention-output masking inside mask_layers.
/// mask values are per-token weights ({0,1} for the binary mask; fractional
/// values give soft masking).
HiddenStates masked_encode(const Tensor& image, const EncoderParams& params,
                           const EncoderConfig& config, const std::vector<double>& mask,
                           LayerRange mask_layers);

struct DropoutEstimate {
    std::vector<double> token_variance;  // length N, >= 0
    std::size_t num_samples = 0;
    double dropout_p = 0.0;
    std::uint64_t rng_seed = 0;
};

/// MC-dropout epistemic uncertainty: num_samples stochastic passes with
/// dropout on both residual branches; per-token variance of the final-layer
/// representation (mean of per-coordinate sample variances).
DropoutEstimate mc_dropout_encode(const Tensor& image, const EncoderParams& params,
                                  const EncoderConfig& config, double dropout_p,
                                  std::size_t num_samples, std::uint64_t rng_seed);

}  // namespace uvet
