#include "aloe/gray.hpp"

#include <cmath>
#include <stdexcept>

namespace aloe {

void GrayCodec::validate() const {
  if (!(lo < hi)) throw std::invalid_argument("GrayCodec: lo < hi required");
}

uint16_t gray_encode(uint16_t level) { return uint16_t(level ^ (level >> 1)); }

uint16_t gray_decode(uint16_t code) {
  uint16_t level = code;
  for (int shift = 1; shift < 16; shift <<= 1) level ^= uint16_t(level >> shift);
  return level;
}

uint16_t float_to_code(const GrayCodec& codec, double v) {
  codec.validate();
  const double clamped = std::min(std::max(v, codec.lo), codec.hi);
  int64_t level = int64_t(std::floor((clamped - codec.lo) / codec.step()));
  if (level < 0) level = 0;
  if (level >= GrayCodec::levels) level = GrayCodec::levels - 1;
  return gray_encode(uint16_t(level));
}

double code_to_float(const GrayCodec& codec, uint16_t code) {
  codec.validate();
  return codec.lo + (double(gray_decode(code)) + 0.5) * codec.step();
}

BitVector encode_point(const GrayCodec& codec, double a, double b) {
  BitVector x(32, 2);
  const uint16_t ca = float_to_code(codec, a);
  const uint16_t cb = float_to_code(codec, b);
  for (int i = 0; i < 16; ++i) {
    x.values[size_t(i)] = uint8_t((ca >> (15 - i)) & 1);
    x.values[size_t(16 + i)] = uint8_t((cb >> (15 - i)) & 1);
  }
  return x;
}

std::pair<double, double> decode_point(const GrayCodec& codec, const BitVector& x) {
  if (x.d != 32 || x.K != 2)
    throw std::invalid_argument("decode_point: 32-bit binary configuration expected");
  uint16_t ca = 0, cb = 0;
  for (int i = 0; i < 16; ++i) {
    ca = uint16_t((ca << 1) | x.values[size_t(i)]);
    cb = uint16_t((cb << 1) | x.values[size_t(16 + i)]);
  }
  return {code_to_float(codec, ca), code_to_float(codec, cb)};
}

}  // namespace aloe
