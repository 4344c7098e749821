#pragma once

#include <filesystem>

#include "adsy/tensor.hpp"

namespace adsy {

// Writes a [H,W] tensor of values in [lo,hi] as a 16-bit binary PGM (P5,
// maxval 65535, big-endian samples per the format).
void write_pgm16(const Tensor<float>& image, const std::filesystem::path& path, float lo = 0.0f,
                 float hi = 1.0f);

}  // namespace adsy
