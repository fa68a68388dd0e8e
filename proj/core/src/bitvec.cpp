#include "aloe/bitvec.hpp"

#include <stdexcept>

namespace aloe {

void BitVector::validate() const {
  if (d <= 0 || K < 2) throw std::invalid_argument("BitVector: d > 0 and K >= 2 required");
  if (int(values.size()) != d) throw std::invalid_argument("BitVector: length mismatch");
  for (uint8_t v : values)
    if (v >= K) throw std::invalid_argument("BitVector: entry out of range");
}

std::string BitVector::to_string() const {
  std::string s;
  for (int i = 0; i < d; ++i) {
    if (K == 2) {
      s += char('0' + values[size_t(i)]);
    } else {
      if (i) s += '.';
      s += std::to_string(int(values[size_t(i)]));
    }
  }
  return s;
}

int input_width(int d, int K) { return K == 2 ? d : d * K; }

void write_input_column(const BitVector& x, Eigen::MatrixXd& X, int col) {
  if (x.K == 2) {
    for (int i = 0; i < x.d; ++i) X(i, col) = double(x.values[size_t(i)]);
  } else {
    X.col(col).setZero();
    for (int i = 0; i < x.d; ++i) X(i * x.K + x.values[size_t(i)], col) = 1.0;
  }
}

Eigen::VectorXd to_input_vector(const BitVector& x) {
  Eigen::MatrixXd X(input_width(x.d, x.K), 1);
  write_input_column(x, X, 0);
  return X.col(0);
}

void states_to_inputs(std::span<const BitVector> xs, Eigen::MatrixXd& X) {
  if (xs.empty()) {
    X.resize(0, 0);
    return;
  }
  X.resize(input_width(xs[0].d, xs[0].K), Eigen::Index(xs.size()));
  for (size_t c = 0; c < xs.size(); ++c) write_input_column(xs[c], X, int(c));
}

uint64_t num_states(int d, int K) {
  uint64_t n = 1;
  for (int i = 0; i < d; ++i) {
    if (n > (uint64_t(1) << 62) / uint64_t(K))
      throw std::invalid_argument("num_states: K^d too large");
    n *= uint64_t(K);
  }
  return n;
}

uint64_t state_index(const BitVector& x) {
  uint64_t idx = 0;
  for (int i = 0; i < x.d; ++i) idx = idx * uint64_t(x.K) + x.values[size_t(i)];
  return idx;
}

BitVector state_from_index(uint64_t index, int d, int K) {
  BitVector x(d, K);
  for (int i = d - 1; i >= 0; --i) {
    x.values[size_t(i)] = uint8_t(index % uint64_t(K));
    index /= uint64_t(K);
  }
  return x;
}

int hamming_distance(const BitVector& a, const BitVector& b) {
  if (a.d != b.d || a.K != b.K)
    throw std::invalid_argument("hamming_distance: incompatible shapes");
  int h = 0;
  for (int i = 0; i < a.d; ++i) h += a.values[size_t(i)] != b.values[size_t(i)];
  return h;
}

BitVector uniform_random_state(int d, int K, Rng& rng) {
  BitVector x(d, K);
  for (int i = 0; i < d; ++i) x.values[size_t(i)] = uint8_t(rng.uniform_int(uint64_t(K)));
  return x;
}

}  // namespace aloe
