#pragma once

#include <span>
#include <vector>

#include "aloe/bitvec.hpp"
#include "aloe/nn.hpp"

namespace aloe {

// Scalar score network f over configurations; the model distribution is
// p_f(x) = exp(f(x)) / Z_f with Z_f summed over the whole space.
struct EnergyModel {
  int d = 32;
  int K = 2;
  DenseNetSpec spec;
  ParamVector params;

  static EnergyModel make(int d, int K, const std::vector<int>& hidden, Rng& rng);
  void validate() const;
};

double energy(const EnergyModel& model, const BitVector& x);
void energy_batch(const EnergyModel& model, const Eigen::MatrixXd& X,
                  Eigen::VectorXd& out, NetCache* cache = nullptr);
Eigen::VectorXd energies(const EnergyModel& model, std::span<const BitVector> xs,
                         int threads = 1);

// Exact oracles by enumeration of all K^d states. They refuse to run above
// the cap rather than fall back to an estimate.
inline constexpr uint64_t kEnumerationCap = uint64_t(1) << 20;

double log_partition_exact(const EnergyModel& model, int threads = 1);
std::vector<double> exact_distribution(const EnergyModel& model, int threads = 1);

// Energies of every state in state_index order (enumeration sizes only).
Eigen::VectorXd all_state_energies(const EnergyModel& model, int threads = 1);

// sum_i weights[i] * d f(x_i) / d params, computed batched.
ParamVector weighted_energy_gradient(const EnergyModel& model,
                                     std::span<const BitVector> xs,
                                     std::span<const double> weights,
                                     int threads = 1);

// Ascent direction of the data log-likelihood: mean over positives of the
// parameter gradient of f minus the same mean over negatives.
ParamVector mle_param_gradient(const EnergyModel& model,
                               std::span<const BitVector> positives,
                               std::span<const BitVector> negatives,
                               int threads = 1);

}  // namespace aloe
