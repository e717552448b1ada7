#pragma once

// 8-bit binary PPM (P6). Internal values in [-1,1] map linearly to 0..255,
// rounding half to even.

#include <cstdint>
#include <string>

#include "tidm/tensor.hpp"

namespace tidm {

std::uint8_t to_byte(float v);
float from_byte(std::uint8_t b);
/// Snap a value to the nearest representable 8-bit level.
inline float quantize(float v) { return from_byte(to_byte(v)); }

/// image [3,H,W] in [-1,1].
void write_ppm(const std::string& path, const Tensor<float>& image);
/// -> [3,H,W]
Tensor<float> read_ppm(const std::string& path);

/// mask [1,H,W] of 0/1 stored as a grey PPM.
void write_mask(const std::string& path, const Tensor<float>& mask);
Tensor<float> read_mask(const std::string& path);

}  // namespace tidm
