#include "uvet/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "uvet/rng.hpp"

namespace uvet {

Tensor make_synthetic_image(std::size_t size, std::size_t channels, std::uint64_t seed) {
    if (channels != 1 && channels != 3) throw ConfigError("synthetic image: channels must be 1 or 3");
    Rng rng(seed);
    const double s = static_cast<double>(size);

    // dark, nearly flat background; shapes span solid-bright, textured and
    // mid-level regions, so patches range from signal-free to high-contrast
    Tensor img({size, size, channels});
    const double bg = rng.uniform(3.0, 25.0);
    for (std::size_t i = 0; i < img.size(); ++i) img.at(i) = bg;

    const std::size_t n_shapes = 4 + rng.below(4);
    for (std::size_t k = 0; k < n_shapes; ++k) {
        const int kind = static_cast<int>(rng.below(3));
        const double cx = rng.uniform(0.0, s);
        const double cy = rng.uniform(0.0, s);
        const double half = rng.uniform(s / 10.0, s / 3.5);
        const bool disk = rng.uniform() < 0.5;
        const double level = kind == 0   ? rng.uniform(170.0, 250.0)
                             : kind == 1 ? rng.uniform(90.0, 220.0)
                                         : rng.uniform(45.0, 110.0);
        const double texture = kind == 1 ? rng.uniform(40.0, 90.0) : 0.0;
        Rng tex_rng(rng.next_u64());
        for (std::size_t y = 0; y < size; ++y) {
            for (std::size_t x = 0; x < size; ++x) {
                const double dx = static_cast<double>(x) - cx;
                const double dy = static_cast<double>(y) - cy;
                const bool inside = disk ? (dx * dx + dy * dy <= half * half)
                                         : (std::fabs(dx) <= half && std::fabs(dy) <= half);
                if (!inside) continue;
                double v = level;
                if (texture > 0.0) v += tex_rng.uniform(-texture, texture);
                for (std::size_t c = 0; c < channels; ++c) {
                    img.at((y * size + x) * channels + c) = v;
                }
            }
        }
    }

    for (std::size_t i = 0; i < img.size(); ++i) {
        img.at(i) = std::clamp(std::floor(img.at(i) + 0.5), 0.0, 255.0);
    }
    return img;
}

}  // namespace uvet
