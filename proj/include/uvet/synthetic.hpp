#pragma once

#include <cstdint>

#include "uvet/tensor.hpp"

namespace uvet {

// Deterministic synthetic image: smooth gradient background plus seeded
// rectangles, disks and textured patches, quantized to integer pixel values
// in [0,255]. Regions differ in contrast and texture so patch tokens carry
// heterogeneous sensitivity.
Tensor make_synthetic_image(std::size_t size, std::size_t channels, std::uint64_t seed);

}  // namespace uvet
