#pragma once

#include <filesystem>

#include "dpanet/tensor.hpp"

namespace dpanet {

/// 8-bit RGB PNG -> 1 x 3 x h x w tensor in [0, 1]. Grayscale and alpha
/// inputs are converted to RGB. Throws std::runtime_error naming the file.
Tensor<float> read_png(const std::filesystem::path& path);

/// Writes item `index` of an n x 3 x h x w tensor as 8-bit RGB, clamping to
/// [0, 1] and rounding to the nearest level.
void write_png(const std::filesystem::path& path, const Tensor<float>& image, int index = 0);

}  // namespace dpanet
