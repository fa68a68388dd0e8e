#pragma once

#include <span>
#include <vector>

#include "aloe/energy.hpp"

namespace aloe {

enum class ScanOrder { systematic, random_permutation };

struct GibbsConfig {
  int sweeps = 1;
  ScanOrder scan_order = ScanOrder::systematic;
  uint64_t rng_seed = 0;
};

// p(b) proportional to exp f(x with coordinate i set to b).
Eigen::VectorXd conditional_distribution(const EnergyModel& model,
                                         const BitVector& x, int i);

// One pass over all coordinates, resampling each from its conditional.
// Consumes exactly one uniform per coordinate from rng (plus the permutation
// draws when scan_order is random_permutation).
BitVector gibbs_sweep(const EnergyModel& model, const BitVector& x, Rng& rng,
                      ScanOrder order = ScanOrder::systematic);

// States after each of n_sweeps sweeps; n_sweeps = 0 returns {x0}.
std::vector<BitVector> gibbs_chain(const EnergyModel& model, const BitVector& x0,
                                   int n_sweeps, Rng& rng,
                                   ScanOrder order = ScanOrder::systematic);

// Advances many chains in place, one rng stream per chain. Chains are
// processed in fixed-size blocks so results do not depend on thread count.
void gibbs_sweeps_inplace(const EnergyModel& model, std::vector<BitVector>& xs,
                          int sweeps, std::span<Rng> chain_rngs, int threads,
                          ScanOrder order = ScanOrder::systematic);

// Exact action of one systematic sweep on a distribution over all states
// (row vector times the sweep transition matrix). Enumeration sizes only.
Eigen::VectorXd distribution_after_sweep(const EnergyModel& model,
                                         const Eigen::VectorXd& p, int threads = 1);

}  // namespace aloe
