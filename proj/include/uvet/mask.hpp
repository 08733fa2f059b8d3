#pragma once

#include <vector>

#include "uvet/encoder.hpp"

namespace uvet {

struct MaskConfig {
    LayerRange source_layers;  // hidden-state layers feeding the map
    double sigma_th = 1.1;
    LayerRange mask_layers;  // attention layers where the mask is applied
};

// Per-token aggregated uncertainty, each value in [0,1]. When a CLS token
// leads the sequence it is pinned to 0 and excluded from the statistics.
struct UncertaintyMap {
    std::vector<double> values;
    LayerRange source_layers;
    std::size_t cls_offset = 0;  // 1 when token 0 is CLS
};

// Per-token {0,1} flags; 0 marks an uncertain token. CLS is always 1.
struct BinaryMask {
    std::vector<double> values;
    double sigma_th = 0.0;
    std::size_t cls_offset = 0;
    std::size_t num_uncertain = 0;
    double fraction_uncertain = 0.0;  // over patch tokens
};

/// Per-layer, per-token deviation norms u^l = ||attk - orig||_2 (Euclidean
/// norm over the feature dimension), for every layer in `source_layers`.
std::vector<std::vector<double>> layerwise_deviation(const HiddenStates& orig,
                                                     const HiddenStates& attk,
                                                     LayerRange source_layers);

/// Min-max normalize each layer map, then average across layers. A constant
/// layer (max == min) contributes zeros. Statistics run over patch tokens
/// only (cls_offset leading entries pinned to 0).
UncertaintyMap aggregate_uncertainty(const std::vector<std::vector<double>>& deviations,
                                     LayerRange source_layers, std::size_t cls_offset = 0);

/// Standardize U over patch tokens (population mean/stddev) and mark tokens
/// with standardized value strictly above sigma_th as uncertain (0). A
/// degenerate stddev of 0 marks everything certain.
BinaryMask binarize_mask(const UncertaintyMap& map, double sigma_th);

/// Per-layer relative deviation ||attk^l - orig^l||_F / ||orig^l||_F for
/// layers 1..L.
std::vector<double> layer_deviation_profile(const HiddenStates& orig, const HiddenStates& attk);

/// IoU of the uncertain sets; 1.0 when both are empty, 0.0 when exactly one is.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

}  // namespace uvet
