#include "aloe/evaluation.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "aloe/gibbs.hpp"
#include "aloe/threading.hpp"

namespace aloe {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Pairwise linear-Hamming kernel sums via packed words when K = 2, d <= 64.
struct PackedSet {
  bool packed = false;
  int d = 0;
  std::vector<uint64_t> words;
};

PackedSet pack(std::span<const BitVector> xs) {
  PackedSet s;
  if (xs.empty()) return s;
  s.d = xs[0].d;
  if (xs[0].K != 2 || xs[0].d > 64) return s;
  s.packed = true;
  s.words.reserve(xs.size());
  for (const auto& x : xs) {
    uint64_t w = 0;
    for (int i = 0; i < x.d; ++i) w |= uint64_t(x.values[size_t(i)]) << i;
    s.words.push_back(w);
  }
  return s;
}

double kernel_sum(std::span<const BitVector> X, std::span<const BitVector> Y,
                  const PackedSet& px, const PackedSet& py, bool skip_diagonal) {
  const double d = double(X[0].d);
  double total = 0.0;
  for (size_t i = 0; i < X.size(); ++i) {
    for (size_t j = 0; j < Y.size(); ++j) {
      if (skip_diagonal && i == j) continue;
      int h;
      if (px.packed && py.packed)
        h = std::popcount(px.words[i] ^ py.words[j]);
      else
        h = hamming_distance(X[i], Y[j]);
      total += d - double(h);
    }
  }
  return total;
}

}  // namespace

double mmd_hamming(std::span<const BitVector> X, std::span<const BitVector> Y,
                   MmdEstimator estimator) {
  if (X.empty() || Y.empty()) throw std::invalid_argument("mmd_hamming: empty sample set");
  const double n = double(X.size());
  const double m = double(Y.size());
  if (estimator == MmdEstimator::unbiased && (X.size() < 2 || Y.size() < 2))
    throw std::invalid_argument("mmd_hamming: unbiased estimator needs >= 2 samples per set");
  const PackedSet px = pack(X), py = pack(Y);
  const bool skip = estimator == MmdEstimator::unbiased;
  const double xx = kernel_sum(X, X, px, px, skip) / (skip ? n * (n - 1.0) : n * n);
  const double yy = kernel_sum(Y, Y, py, py, skip) / (skip ? m * (m - 1.0) : m * m);
  const double xy = kernel_sum(X, Y, px, py, false) / (n * m);
  return xx + yy - 2.0 * xy;
}

MatrixXd heatmap_scores(const EnergyModel& model, const GrayCodec& codec, int resolution,
                        int threads) {
  if (resolution < 2) throw std::invalid_argument("heatmap_scores: resolution >= 2 required");
  const double lo = -4.0, hi = 4.0;
  const double cell = (hi - lo) / double(resolution);
  MatrixXd grid(resolution, resolution);
  parallel_blocks(int64_t(resolution) * resolution, threads, [&](int64_t lo_idx, int64_t hi_idx) {
    std::vector<BitVector> xs;
    xs.reserve(size_t(hi_idx - lo_idx));
    for (int64_t k = lo_idx; k < hi_idx; ++k) {
      const int i = int(k / resolution), j = int(k % resolution);
      const double a = lo + (double(i) + 0.5) * cell;
      const double b = lo + (double(j) + 0.5) * cell;
      xs.push_back(encode_point(codec, a, b));
    }
    MatrixXd X;
    states_to_inputs(xs, X);
    VectorXd e;
    energy_batch(model, X, e);
    for (int64_t k = lo_idx; k < hi_idx; ++k)
      grid(int(k / resolution), int(k % resolution)) = e[k - lo_idx];
  });
  return grid;
}

void write_heatmap_csv(const std::string& path, const MatrixXd& grid) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  char buf[64];
  for (int i = 0; i < grid.rows(); ++i) {
    for (int j = 0; j < grid.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", grid(i, j));
      out << buf << (j + 1 < grid.cols() ? "," : "");
    }
    out << "\n";
  }
}

void write_heatmap_pgm(const std::string& path, const MatrixXd& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  const double lo = grid.minCoeff(), hi = grid.maxCoeff();
  const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
  out << "P5\n" << grid.cols() << " " << grid.rows() << "\n255\n";
  for (int i = 0; i < grid.rows(); ++i)
    for (int j = 0; j < grid.cols(); ++j) {
      const int v = int(std::lround((grid(i, j) - lo) * scale));
      out.put(char(std::min(255, std::max(0, v))));
    }
}

NllEstimate nll_importance_estimate(const EnergyModel& f, const InitSampler& q0,
                                    std::span<const BitVector> data, int n_is, Rng& rng,
                                    int threads) {
  if (n_is < 1) throw std::invalid_argument("nll_importance_estimate: n_is >= 1 required");
  Rng draw_rng = rng.split(0x4e11);
  const std::vector<BitVector> xs = init_sample_batch(q0, n_is, draw_rng, threads);
  std::vector<double> logq(xs.size());
  init_logprob_batch(q0, xs, logq, threads);
  const VectorXd fx = energies(f, xs, threads);
  double m = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < xs.size(); ++i) m = std::max(m, fx[Eigen::Index(i)] - logq[i]);
  double acc = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) acc += std::exp(fx[Eigen::Index(i)] - logq[i] - m);
  NllEstimate est;
  est.log_z = m + std::log(acc / double(n_is));
  est.nll = est.log_z - (data.empty() ? 0.0 : energies(f, data, threads).mean());
  return est;
}

double gradient_variance(const MatrixXd& per_sample_grads) {
  const Eigen::Index n = per_sample_grads.cols();
  if (n < 2) throw std::invalid_argument("gradient_variance: need >= 2 estimates");
  const VectorXd mean = per_sample_grads.rowwise().mean();
  const VectorXd sq = (per_sample_grads.colwise() - mean).rowwise().squaredNorm();
  return (sq / double(n - 1)).mean();
}

std::vector<BitVector> sample_model_gibbs(const EnergyModel& model, const EvalProtocol& proto,
                                          Rng& rng, int threads) {
  std::vector<BitVector> xs;
  xs.reserve(size_t(proto.n_samples));
  std::vector<Rng> chain_rngs;
  chain_rngs.reserve(size_t(proto.n_samples));
  for (int i = 0; i < proto.n_samples; ++i) {
    Rng init_rng = rng.split(0x11c, uint64_t(i));
    xs.push_back(uniform_random_state(model.d, model.K, init_rng));
    chain_rngs.push_back(rng.split(0x11d, uint64_t(i)));
  }
  gibbs_sweeps_inplace(model, xs, proto.sweeps, chain_rngs, threads);
  return xs;
}

}  // namespace aloe
