#pragma once

#include <span>
#include <string>
#include <vector>

#include "aloe/energy.hpp"
#include "aloe/gray.hpp"
#include "aloe/sampler.hpp"

namespace aloe {

enum class MmdEstimator { unbiased, biased };

// MMD with the linear kernel k(a, b) = d - Hamming(a, b). The unbiased
// U-statistic drops the diagonal of the within-set sums and can be negative.
double mmd_hamming(std::span<const BitVector> X, std::span<const BitVector> Y,
                   MmdEstimator estimator = MmdEstimator::unbiased);

// Energies over a resolution x resolution grid of cell centers spanning
// [-4, 4]^2; entry (i, j) scores x = centers[i], y = centers[j].
Eigen::MatrixXd heatmap_scores(const EnergyModel& model, const GrayCodec& codec,
                               int resolution, int threads = 1);
void write_heatmap_csv(const std::string& path, const Eigen::MatrixXd& grid);
// 8-bit grayscale, min-max normalized.
void write_heatmap_pgm(const std::string& path, const Eigen::MatrixXd& grid);

// log Z estimate via importance sampling from a tractable q0:
// log-mean-exp of f(x_i) - log q0(x_i); NLL = log Z_hat - mean_data f.
struct NllEstimate {
  double nll = 0.0;
  double log_z = 0.0;
};
NllEstimate nll_importance_estimate(const EnergyModel& f, const InitSampler& q0,
                                    std::span<const BitVector> data, int n_is, Rng& rng,
                                    int threads = 1);

// Mean over parameters of the per-parameter unbiased variance across the
// columns of per_sample_grads (params x samples).
double gradient_variance(const Eigen::MatrixXd& per_sample_grads);

// The evaluation sampling protocol: chains start from uniform random states
// and run the given number of full Gibbs passes.
struct EvalProtocol {
  int n_samples = 4000;
  int sweeps = 20;
};
std::vector<BitVector> sample_model_gibbs(const EnergyModel& model, const EvalProtocol& proto,
                                          Rng& rng, int threads = 1);

}  // namespace aloe
