#include "aloe/gibbs.hpp"

#include <cmath>
#include <stdexcept>

#include "aloe/threading.hpp"

namespace aloe {

using Eigen::MatrixXd;
using Eigen::VectorXd;

VectorXd conditional_distribution(const EnergyModel& model, const BitVector& x, int i) {
  if (i < 0 || i >= x.d) throw std::out_of_range("conditional_distribution: index out of range");
  BitVector y = x;
  VectorXd logits(x.K);
  for (int b = 0; b < x.K; ++b) {
    y.values[size_t(i)] = uint8_t(b);
    logits[b] = energy(model, y);
  }
  return softmax_probs(logits);
}

namespace {

std::vector<int> scan_permutation(int d, ScanOrder order, Rng& rng) {
  std::vector<int> perm(size_t(d));
  for (int i = 0; i < d; ++i) perm[size_t(i)] = i;
  if (order == ScanOrder::random_permutation) {
    for (int i = d - 1; i > 0; --i)
      std::swap(perm[size_t(i)], perm[rng.uniform_int(uint64_t(i) + 1)]);
  }
  return perm;
}

// Advances a contiguous block of chains by `sweeps` full passes, keeping an
// input matrix and current energies in sync with the states.
void sweep_block(const EnergyModel& model, std::span<BitVector> xs,
                 std::span<Rng> rngs, int sweeps, ScanOrder order) {
  const int B = int(xs.size());
  const int d = model.d;
  const int K = model.K;
  MatrixXd X;
  states_to_inputs(std::span<const BitVector>(xs.data(), xs.size()), X);
  VectorXd e_cur;
  energy_batch(model, X, e_cur);

  MatrixXd Xcand = X;
  VectorXd e_cand;
  std::vector<std::vector<int>> perms(size_t(B));
  VectorXd logits(K);
  // One conditional per (sweep, scan slot, chain); candidate energies for a
  // whole slot are evaluated as one batch.
  for (int s = 0; s < sweeps; ++s) {
    for (int b = 0; b < B; ++b) perms[size_t(b)] = scan_permutation(d, order, rngs[size_t(b)]);
    for (int slot = 0; slot < d; ++slot) {
      if (K == 2) {
        Xcand = X;
        for (int b = 0; b < B; ++b) {
          const int c = perms[size_t(b)][size_t(slot)];
          Xcand(c, b) = 1.0 - Xcand(c, b);
        }
        energy_batch(model, Xcand, e_cand);
        for (int b = 0; b < B; ++b) {
          const int c = perms[size_t(b)][size_t(slot)];
          const uint8_t cur = xs[size_t(b)].values[size_t(c)];
          logits[cur] = e_cur[b];
          logits[1 - cur] = e_cand[b];
          const int pick = pick_from_probs(softmax_probs(logits), rngs[size_t(b)].uniform());
          if (pick != cur) {
            xs[size_t(b)].values[size_t(c)] = uint8_t(pick);
            X(c, b) = double(pick);
            e_cur[b] = e_cand[b];
          }
        }
      } else {
        // K-ary: evaluate the K-1 alternative values, one batch per value slot.
        MatrixXd alt_e(K - 1, B);
        for (int a = 0; a < K - 1; ++a) {
          Xcand = X;
          for (int b = 0; b < B; ++b) {
            const int c = perms[size_t(b)][size_t(slot)];
            const uint8_t cur = xs[size_t(b)].values[size_t(c)];
            const int v = (cur + 1 + a) % K;
            Xcand(c * K + cur, b) = 0.0;
            Xcand(c * K + v, b) = 1.0;
          }
          energy_batch(model, Xcand, e_cand);
          alt_e.row(a) = e_cand.transpose();
        }
        for (int b = 0; b < B; ++b) {
          const int c = perms[size_t(b)][size_t(slot)];
          const uint8_t cur = xs[size_t(b)].values[size_t(c)];
          VectorXd lg(K);
          lg[cur] = e_cur[b];
          for (int a = 0; a < K - 1; ++a) lg[(cur + 1 + a) % K] = alt_e(a, b);
          const int pick = pick_from_probs(softmax_probs(lg), rngs[size_t(b)].uniform());
          if (pick != cur) {
            X(c * K + cur, b) = 0.0;
            X(c * K + pick, b) = 1.0;
            xs[size_t(b)].values[size_t(c)] = uint8_t(pick);
            e_cur[b] = lg[pick];
          }
        }
      }
    }
  }
}

}  // namespace

BitVector gibbs_sweep(const EnergyModel& model, const BitVector& x, Rng& rng, ScanOrder order) {
  std::vector<BitVector> xs{x};
  std::span<Rng> rngs(&rng, 1);
  sweep_block(model, xs, rngs, 1, order);
  return xs[0];
}

std::vector<BitVector> gibbs_chain(const EnergyModel& model, const BitVector& x0,
                                   int n_sweeps, Rng& rng, ScanOrder order) {
  if (n_sweeps < 0) throw std::invalid_argument("gibbs_chain: n_sweeps must be >= 0");
  std::vector<BitVector> out;
  out.reserve(size_t(n_sweeps) + 1);
  out.push_back(x0);
  for (int s = 0; s < n_sweeps; ++s) out.push_back(gibbs_sweep(model, out.back(), rng, order));
  return out;
}

void gibbs_sweeps_inplace(const EnergyModel& model, std::vector<BitVector>& xs,
                          int sweeps, std::span<Rng> chain_rngs, int threads,
                          ScanOrder order) {
  if (xs.size() != chain_rngs.size())
    throw std::invalid_argument("gibbs_sweeps_inplace: one rng stream per chain required");
  parallel_blocks(int64_t(xs.size()), threads, [&](int64_t lo, int64_t hi) {
    sweep_block(model, std::span<BitVector>(xs.data() + lo, size_t(hi - lo)),
                std::span<Rng>(chain_rngs.data() + lo, size_t(hi - lo)), sweeps, order);
  });
}

VectorXd distribution_after_sweep(const EnergyModel& model, const VectorXd& p, int threads) {
  const uint64_t n = num_states(model.d, model.K);
  if (n > kEnumerationCap)
    throw std::invalid_argument("distribution_after_sweep: space too large; refusing");
  if (uint64_t(p.size()) != n)
    throw std::invalid_argument("distribution_after_sweep: distribution size mismatch");
  const VectorXd e = all_state_energies(model, threads);
  const int K = model.K;
  VectorXd cur = p, next(p.size());
  VectorXd logits(K), member_mass(K);
  for (int i = 0; i < model.d; ++i) {
    uint64_t place = 1;
    for (int j = 0; j < model.d - 1 - i; ++j) place *= uint64_t(K);
    const uint64_t outer = n / (place * uint64_t(K));
    for (uint64_t a = 0; a < outer; ++a) {
      for (uint64_t r = 0; r < place; ++r) {
        const uint64_t base = a * place * uint64_t(K) + r;
        double mass = 0.0;
        for (int b = 0; b < K; ++b) {
          const uint64_t idx = base + uint64_t(b) * place;
          logits[b] = e[Eigen::Index(idx)];
          mass += cur[Eigen::Index(idx)];
        }
        const VectorXd cond = softmax_probs(logits);
        for (int b = 0; b < K; ++b)
          next[Eigen::Index(base + uint64_t(b) * place)] = mass * cond[b];
      }
    }
    std::swap(cur, next);
  }
  return cur;
}

}  // namespace aloe
