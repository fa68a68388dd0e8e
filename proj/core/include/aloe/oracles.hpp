#pragma once

#include <string>
#include <vector>

#include "aloe/energy.hpp"
#include "aloe/gibbs.hpp"
#include "aloe/sampler.hpp"

namespace aloe::oracle {

// Exact systematic-sweep transition matrix over all K^d states.
Eigen::MatrixXd sweep_transition_matrix(const EnergyModel& model);

// ||p_f P - p_f||_inf for the exact sweep kernel applied to the exact
// model distribution.
double stationarity_gap(const EnergyModel& model, int threads = 1);

// |1 - sum over every trajectory of exp(logprob)|, by forward enumeration
// from every start state.
double trajectory_mass_error(const SamplerParams& q);

// |1 - sum_x exp(marginal_logprob_exact(x))|, by backward enumeration.
double marginal_normalization_error(const SamplerParams& q);

// Max-abs difference between the exhaustively weighted SNIS gradient (full
// backward-walk proposal support, each trajectory weighted by its exact
// draw probability) and the posterior-enumeration gradient of log q(x).
double posterior_gradient_identity_gap(const SamplerParams& q, const BitVector& x,
                                       double geo_p);

struct GradCheckItem {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 1e-4;
  bool pass() const { return max_rel_error < tolerance; }
};

struct GradCheckReport {
  std::vector<GradCheckItem> items;
  bool all_pass() const;
  double worst() const;
};

// Central-difference checks over every network family used in the repo,
// full-size shapes checked on random parameter subsets, small shapes in full.
GradCheckReport finite_difference_suite(uint64_t seed);

struct OracleSuiteResult {
  std::vector<std::pair<std::string, bool>> lines;  // printable name, pass
  bool all_pass() const;
};

// The full exact-check battery: stationarity on random nets, trajectory
// measure normalization, the posterior-gradient identity, and the finite
// difference suite.
OracleSuiteResult run_oracle_suite(uint64_t seed, bool print = true);

}  // namespace aloe::oracle
