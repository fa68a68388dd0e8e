#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "aloe/rng.hpp"

namespace aloe {

// Fixed-length discrete configuration x in {0..K-1}^d. K = 2 is the common
// case (plain bit vectors); larger K is supported throughout.
struct BitVector {
  int d = 0;
  int K = 2;
  std::vector<uint8_t> values;

  BitVector() = default;
  BitVector(int d_, int K_) : d(d_), K(K_), values(size_t(d_), 0) {}

  uint8_t operator[](int i) const { return values[size_t(i)]; }
  uint8_t& operator[](int i) { return values[size_t(i)]; }

  bool operator==(const BitVector&) const = default;

  void validate() const;
  std::string to_string() const;  // e.g. "01101" for K=2, "0.2.1" for K>2
};

// Width of the real-valued network input encoding a configuration:
// raw 0/1 entries for K = 2, concatenated one-hots for K > 2.
int input_width(int d, int K);

// Writes the encoding of x into column `col` of X (X.rows() == input_width).
void write_input_column(const BitVector& x, Eigen::MatrixXd& X, int col);
Eigen::VectorXd to_input_vector(const BitVector& x);
void states_to_inputs(std::span<const BitVector> xs, Eigen::MatrixXd& X);

uint64_t num_states(int d, int K);  // K^d, throws if it would exceed 2^62
uint64_t state_index(const BitVector& x);
BitVector state_from_index(uint64_t index, int d, int K);

int hamming_distance(const BitVector& a, const BitVector& b);

BitVector uniform_random_state(int d, int K, Rng& rng);

}  // namespace aloe
