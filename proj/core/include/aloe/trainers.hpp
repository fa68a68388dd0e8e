#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "aloe/energy.hpp"
#include "aloe/gibbs.hpp"
#include "aloe/sampler.hpp"

namespace aloe {

// Shared split labels so that trainers with structurally matching phases
// (contrastive f-step fed by Gibbs chains) consume identical streams.
inline constexpr uint64_t kSplitNegatives = 1;
inline constexpr uint64_t kSplitGibbs = 2;
inline constexpr uint64_t kSplitSampler = 3;
inline constexpr uint64_t kSplitSlots = 4;
inline constexpr uint64_t kSplitRestart = 5;

struct AloeConfig {
  int batch_size = 128;
  double f_learning_rate = 1e-3;
  double q_learning_rate = 1e-3;
  int n_power_iter = 1;
  int n_snis_samples = 5;
  ProposalKind proposal = ProposalKind::inverse;
  double geo_p = 0.8;
  int gibbs_sweeps = 1;
  int64_t total_steps = 2000;
  uint64_t rng_seed = 0;
  int q_batch_size = 0;  // 0 -> batch_size
  bool compute_grad_variance = false;
  int threads = 1;

  int effective_q_batch() const { return q_batch_size > 0 ? q_batch_size : batch_size; }
};

// Adam states for every trainable block of a SamplerParams; steps ascend.
struct SamplerOptimizer {
  std::vector<OptimizerState> states;  // aligned with sampler_param_blocks
  static SamplerOptimizer make(SamplerParams& q, AdamConfig cfg);
  void ascend(SamplerParams& q, const SamplerGrads& grads);
};

// Adam states for a bare q0 (the ADE trainer); steps ascend.
struct InitOptimizer {
  std::vector<OptimizerState> states;
  static InitOptimizer make(InitSampler& q0, AdamConfig cfg);
  void ascend(InitSampler& q0, const std::vector<ParamVector>& grads);
};

// Test hook: replaces the learned negative sampler inside aloe_step.
struct NegativeSource {
  virtual ~NegativeSource() = default;
  virtual std::vector<BitVector> draw(int n, Rng& rng) = 0;
};

struct ContrastiveMetrics {
  double f_grad_norm = 0.0;
  double positive_energy_mean = 0.0;
  double negative_energy_mean = 0.0;
};

ContrastiveMetrics contrastive_f_update(EnergyModel& f, OptimizerState& f_opt,
                                        std::span<const BitVector> positives,
                                        std::span<const BitVector> negatives,
                                        int threads = 1);

struct SamplerUpdateMetrics {
  double q_grad_norm = 0.0;
  double snis_ess_mean = 0.0;
  double q_grad_variance = -1.0;  // -1 when not computed
  int64_t proposal_rejected = 0;
  int64_t proposal_dropped = 0;
};

// n_power_iter rounds of: draw from q, one kernel application, ascend the
// self-normalized gradient of log q at the evolved samples.
SamplerUpdateMetrics sampler_update(SamplerParams& q, SamplerOptimizer& q_opt,
                                    const EnergyModel& f, const AloeConfig& cfg,
                                    Rng& rng);

struct AloeStepMetrics {
  ContrastiveMetrics f;
  SamplerUpdateMetrics q;
};

AloeStepMetrics aloe_step(EnergyModel& f, OptimizerState& f_opt, SamplerParams& q,
                          SamplerOptimizer& q_opt, const std::vector<BitVector>& data_batch,
                          const AloeConfig& cfg, Rng& rng,
                          NegativeSource* negatives_override = nullptr);

// ---------------------------------------------------------------------------
// Persistent contrastive divergence with replay buffer and random restart.
// ---------------------------------------------------------------------------

struct ReplayBuffer {
  int capacity = 0;
  double restart_probability = 0.1;
  std::vector<BitVector> storage;

  static ReplayBuffer initialized(int capacity, int d, int K, double restart_probability,
                                  Rng& rng);
};

struct PcdConfig {
  int batch_size = 128;
  double f_learning_rate = 1e-3;
  int k_sweeps = 10;
  int64_t total_steps = 2000;
  uint64_t rng_seed = 0;
  int threads = 1;
};

ContrastiveMetrics pcd_step(EnergyModel& f, OptimizerState& f_opt, ReplayBuffer& buffer,
                            const std::vector<BitVector>& data_batch, const PcdConfig& cfg,
                            Rng& rng);

// ---------------------------------------------------------------------------
// ADE-style baseline: q0 negatives, score-function sampler update with an
// exponential-moving-average scalar baseline.
// ---------------------------------------------------------------------------

struct AdeConfig {
  int batch_size = 128;
  double f_learning_rate = 1e-3;
  double sampler_lr_ratio = 1.0;   // q0 learning rate = ratio * f rate
  int f_update_every = 1;          // energy side of the alternation schedule
  int q_update_every = 1;
  double baseline_decay = 0.99;
  int64_t total_steps = 2000;
  uint64_t rng_seed = 0;
  bool compute_grad_variance = false;
  int threads = 1;
};

struct AdeStepMetrics {
  ContrastiveMetrics f;
  double q_grad_norm = 0.0;
  double q_grad_variance = -1.0;
  double baseline = 0.0;
  double reward_mean = 0.0;
};

AdeStepMetrics ade_step(EnergyModel& f, OptimizerState& f_opt, InitSampler& q0,
                        InitOptimizer& q0_opt, double& baseline,
                        const std::vector<BitVector>& data_batch, const AdeConfig& cfg,
                        Rng& rng, int64_t step_index);

// Streaming per-parameter variance over per-sample gradient estimates.
class GradVarianceAccumulator {
 public:
  void add(const Eigen::VectorXd& sample);
  double mean_parameter_variance() const;  // unbiased, needs >= 2 samples
  int64_t count() const { return n_; }

 private:
  Eigen::VectorXd sum_, sumsq_;
  int64_t n_ = 0;
};

}  // namespace aloe
