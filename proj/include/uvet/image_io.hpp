#pragma once

#include <string>
#include <vector>

#include "uvet/tensor.hpp"

// Binary PNM: P5 (grayscale) and P6 (RGB), 8-bit, maxval 255. Images are
// H x W x C tensors holding pixel values on the 0-255 scale.
namespace uvet {

Tensor read_pnm(const std::string& path);
void write_pnm(const std::string& path, const Tensor& image);  // P5 if C==1, P6 if C==3

// Grayscale PGM from values in [0,1] (values * 255, rounded half-up).
void write_pgm_unit(const std::string& path, const std::vector<double>& values,
                    std::size_t rows, std::size_t cols);

}  // namespace uvet
