#include "uvet/mask.hpp"

#include <algorithm>
#include <cmath>

namespace uvet {

std::vector<std::vector<double>> layerwise_deviation(const HiddenStates& orig,
                                                     const HiddenStates& attk,
                                                     LayerRange source_layers) {
    if (orig.states.size() != attk.states.size()) {
        throw DimensionError("layerwise_deviation: layer count mismatch");
    }
    if (source_layers.empty() || source_layers.first < 1 ||
        source_layers.last > orig.num_layers()) {
        throw ConfigError("layerwise_deviation: source layers out of range");
    }
    std::vector<std::vector<double>> maps;
    maps.reserve(source_layers.count());
    for (std::size_t l = source_layers.first; l <= source_layers.last; ++l) {
        const Tensor& o = orig.layer(l);
        const Tensor& a = attk.layer(l);
        require_same_shape(o, a, "layerwise_deviation");
        std::vector<double> u(o.rows(), 0.0);
        for (std::size_t i = 0; i < o.rows(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < o.cols(); ++j) {
                const double d = a(i, j) - o(i, j);
                s += d * d;
            }
            u[i] = std::sqrt(s);
        }
        maps.push_back(std::move(u));
    }
    return maps;
}

UncertaintyMap aggregate_uncertainty(const std::vector<std::vector<double>>& deviations,
                                     LayerRange source_layers, std::size_t cls_offset) {
    if (deviations.empty()) throw UsageError("aggregate_uncertainty: empty layer list");
    const std::size_t n = deviations.front().size();
    for (const auto& u : deviations) {
        if (u.size() != n) throw DimensionError("aggregate_uncertainty: layer map length mismatch");
    }
    if (cls_offset >= n) throw UsageError("aggregate_uncertainty: no patch tokens");

    UncertaintyMap map;
    map.values.assign(n, 0.0);
    map.source_layers = source_layers;
    map.cls_offset = cls_offset;

    const double inv_layers = 1.0 / static_cast<double>(deviations.size());
    for (const auto& u : deviations) {
        double lo = u[cls_offset], hi = u[cls_offset];
        for (std::size_t i = cls_offset; i < n; ++i) {
            lo = std::min(lo, u[i]);
            hi = std::max(hi, u[i]);
        }
        if (hi == lo) continue;  // constant layer: contributes zeros
        const double inv_range = 1.0 / (hi - lo);
        for (std::size_t i = cls_offset; i < n; ++i) {
            map.values[i] += (u[i] - lo) * inv_range * inv_layers;
        }
    }
    return map;
}

BinaryMask binarize_mask(const UncertaintyMap& map, double sigma_th) {
    const std::size_t n = map.values.size();
    const std::size_t off = map.cls_offset;
    if (n < off + 2) throw UsageError("binarize_mask: need at least 2 patch tokens");

    const double count = static_cast<double>(n - off);
    double mean = 0.0;
    for (std::size_t i = off; i < n; ++i) mean += map.values[i];
    mean /= count;
    double var = 0.0;
    for (std::size_t i = off; i < n; ++i) {
        const double d = map.values[i] - mean;
        var += d * d;
    }
    var /= count;  // population variance over the token population
    const double sigma = std::sqrt(var);

    BinaryMask m;
    m.values.assign(n, 1.0);
    m.sigma_th = sigma_th;
    m.cls_offset = off;
    if (sigma > 0.0) {
        for (std::size_t i = off; i < n; ++i) {
            // uncertain iff standardized value strictly exceeds the threshold
            if ((map.values[i] - mean) / sigma > sigma_th) {
                m.values[i] = 0.0;
                ++m.num_uncertain;
            }
        }
    }
    m.fraction_uncertain = static_cast<double>(m.num_uncertain) / count;
    return m;
}

std::vector<double> layer_deviation_profile(const HiddenStates& orig, const HiddenStates& attk) {
    if (orig.states.size() != attk.states.size()) {
        throw DimensionError("layer_deviation_profile: layer count mismatch");
    }
    std::vector<double> profile;
    profile.reserve(orig.num_layers());
    for (std::size_t l = 1; l <= orig.num_layers(); ++l) {
        const Tensor& o = orig.layer(l);
        const Tensor& a = attk.layer(l);
        require_same_shape(o, a, "layer_deviation_profile");
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < o.size(); ++i) {
            const double d = a.at(i) - o.at(i);
            num += d * d;
            den += o.at(i) * o.at(i);
        }
        if (den == 0.0) throw NumericError("layer_deviation_profile: zero-norm clean layer");
        profile.push_back(std::sqrt(num) / std::sqrt(den));
    }
    return profile;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
    if (a.values.size() != b.values.size()) throw DimensionError("mask_iou: length mismatch");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const bool ua = a.values[i] == 0.0;
        const bool ub = b.values[i] == 0.0;
        inter += ua && ub;
        uni += ua || ub;
    }
    if (uni == 0) return 1.0;  // both uncertain sets empty
    return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace uvet
