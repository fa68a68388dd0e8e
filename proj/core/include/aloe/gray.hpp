#pragma once

#include <cstdint>
#include <utility>

#include "aloe/bitvec.hpp"

namespace aloe {

// Affine quantizer + 16-bit Gray encoder per dimension. A 2D point becomes a
// 32-bit configuration: bits 0..15 hold dimension one (most significant
// first), bits 16..31 dimension two.
struct GrayCodec {
  double lo = -5.0;
  double hi = 5.0;
  static constexpr int bits_per_dim = 16;
  static constexpr int levels = 1 << bits_per_dim;

  double step() const { return (hi - lo) / double(levels); }
  void validate() const;
};

uint16_t gray_encode(uint16_t level);
uint16_t gray_decode(uint16_t code);

// Out-of-range values clamp to the bounds before quantization.
uint16_t float_to_code(const GrayCodec& codec, double v);
// Returns the bin-center value of the decoded level.
double code_to_float(const GrayCodec& codec, uint16_t code);

BitVector encode_point(const GrayCodec& codec, double a, double b);
std::pair<double, double> decode_point(const GrayCodec& codec, const BitVector& x);

}  // namespace aloe
