#include "aloe/trainers.hpp"

#include <cmath>
#include <stdexcept>

#include "aloe/threading.hpp"

namespace aloe {

using Eigen::VectorXd;

namespace {

double mean_energy(const EnergyModel& f, std::span<const BitVector> xs, int threads) {
  if (xs.empty()) return 0.0;
  return energies(f, xs, threads).mean();
}

double grad_norm(const ParamVector& g) {
  double s = 0.0;
  for (double v : g) s += v * v;
  return std::sqrt(s);
}

void adam_ascend(OptimizerState& state, ParamVector& params, const ParamVector& grad) {
  ParamVector neg(grad.size());
  for (size_t i = 0; i < grad.size(); ++i) neg[i] = -grad[i];
  optimizer_step(state, params, neg);
}

std::vector<const ParamVector*> grads_blocks(const SamplerGrads& g) {
  std::vector<const ParamVector*> blocks;
  for (const auto& part : g.q0) blocks.push_back(&part);
  blocks.push_back(&g.editor_position);
  blocks.push_back(&g.editor_value);
  blocks.push_back(&g.stop);
  return blocks;
}

}  // namespace

SamplerOptimizer SamplerOptimizer::make(SamplerParams& q, AdamConfig cfg) {
  SamplerOptimizer opt;
  for (ParamVector* block : sampler_param_blocks(q))
    opt.states.emplace_back(block ? int64_t(block->size()) : 0, cfg);
  return opt;
}

void SamplerOptimizer::ascend(SamplerParams& q, const SamplerGrads& grads) {
  const auto params = sampler_param_blocks(q);
  const auto gs = grads_blocks(grads);
  if (params.size() != gs.size() || params.size() != states.size())
    throw std::invalid_argument("SamplerOptimizer: block count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    if (!params[i] || params[i]->empty()) continue;
    adam_ascend(states[i], *params[i], *gs[i]);
  }
}

InitOptimizer InitOptimizer::make(InitSampler& q0, AdamConfig cfg) {
  InitOptimizer opt;
  for (ParamVector* block : init_param_blocks(q0))
    opt.states.emplace_back(int64_t(block->size()), cfg);
  return opt;
}

void InitOptimizer::ascend(InitSampler& q0, const std::vector<ParamVector>& grads) {
  const auto params = init_param_blocks(q0);
  if (params.size() != grads.size() || params.size() != states.size())
    throw std::invalid_argument("InitOptimizer: block count mismatch");
  for (size_t i = 0; i < params.size(); ++i) adam_ascend(states[i], *params[i], grads[i]);
}

ContrastiveMetrics contrastive_f_update(EnergyModel& f, OptimizerState& f_opt,
                                        std::span<const BitVector> positives,
                                        std::span<const BitVector> negatives,
                                        int threads) {
  ContrastiveMetrics m;
  m.positive_energy_mean = mean_energy(f, positives, threads);
  m.negative_energy_mean = mean_energy(f, negatives, threads);
  const ParamVector grad = mle_param_gradient(f, positives, negatives, threads);
  m.f_grad_norm = grad_norm(grad);
  adam_ascend(f_opt, f.params, grad);
  return m;
}

void GradVarianceAccumulator::add(const VectorXd& sample) {
  if (n_ == 0) {
    sum_ = VectorXd::Zero(sample.size());
    sumsq_ = VectorXd::Zero(sample.size());
  }
  sum_ += sample;
  sumsq_ += sample.cwiseProduct(sample);
  ++n_;
}

double GradVarianceAccumulator::mean_parameter_variance() const {
  if (n_ < 2) throw std::invalid_argument("gradient variance needs at least 2 estimates");
  const double n = double(n_);
  const VectorXd var = (sumsq_ - sum_.cwiseProduct(sum_) / n) / (n - 1.0);
  return var.mean();
}

SamplerUpdateMetrics sampler_update(SamplerParams& q, SamplerOptimizer& q_opt,
                                    const EnergyModel& f, const AloeConfig& cfg,
                                    Rng& rng) {
  q.validate();
  SamplerUpdateMetrics metrics;
  const int qb = cfg.effective_q_batch();

  for (int round = 0; round < cfg.n_power_iter; ++round) {
    Rng round_rng = rng.split(0x9a, uint64_t(round));

    // x ~ q, then one finite kernel application toward p_f.
    Rng draw_rng = round_rng.split(0);
    const std::vector<Trajectory> drawn =
        sample_trajectories_batch(q, qb, draw_rng, cfg.threads);
    std::vector<BitVector> targets;
    targets.reserve(size_t(qb));
    for (const auto& t : drawn) targets.push_back(t.endpoint());
    std::vector<Rng> chain_rngs;
    chain_rngs.reserve(size_t(qb));
    for (int i = 0; i < qb; ++i) chain_rngs.push_back(round_rng.split(1, uint64_t(i)));
    gibbs_sweeps_inplace(f, targets, cfg.gibbs_sweeps, chain_rngs, cfg.threads);

    // Proposal trajectories for every target, scored and weighted in one
    // batched pass; weights are softmax within each target's group.
    SnisReport report;
    std::vector<Trajectory> all_trajs;
    std::vector<double> log_density;
    std::vector<std::pair<int, int>> group(size_t(qb));  // [begin, end) per target
    for (int b = 0; b < qb; ++b) {
      Rng prop_rng = round_rng.split(2, uint64_t(b));
      auto draws = draw_proposals(q, targets[size_t(b)], cfg.proposal, cfg.n_snis_samples,
                                  cfg.geo_p, prop_rng, &report);
      group[size_t(b)].first = int(all_trajs.size());
      for (auto& d : draws) {
        all_trajs.push_back(std::move(d.traj));
        log_density.push_back(d.log_density);
      }
      group[size_t(b)].second = int(all_trajs.size());
    }

    const std::vector<double> logq = trajectory_logprob_batch(q, all_trajs, cfg.threads);
    std::vector<double> weights(all_trajs.size(), 0.0);
    double ess_total = 0.0;
    for (int b = 0; b < qb; ++b) {
      const auto [lo, hi] = group[size_t(b)];
      double m = -std::numeric_limits<double>::infinity();
      for (int j = lo; j < hi; ++j) m = std::max(m, logq[size_t(j)] - log_density[size_t(j)]);
      double total = 0.0;
      for (int j = lo; j < hi; ++j) {
        weights[size_t(j)] = std::exp(logq[size_t(j)] - log_density[size_t(j)] - m);
        total += weights[size_t(j)];
      }
      double sumsq = 0.0;
      for (int j = lo; j < hi; ++j) {
        weights[size_t(j)] /= total;
        sumsq += weights[size_t(j)] * weights[size_t(j)];
      }
      ess_total += 1.0 / sumsq;
    }

    SamplerGrads grads = SamplerGrads::zeros_like(q);
    {
      std::vector<double> scaled = weights;
      for (auto& w : scaled) w /= double(qb);
      trajectory_grad_batch(q, all_trajs, scaled, grads, cfg.threads);
    }

    if (cfg.compute_grad_variance) {
      GradVarianceAccumulator acc;
      for (int b = 0; b < qb; ++b) {
        const auto [lo, hi] = group[size_t(b)];
        SamplerGrads gb = SamplerGrads::zeros_like(q);
        trajectory_grad_batch(q,
                              std::span<const Trajectory>(all_trajs.data() + lo, size_t(hi - lo)),
                              std::span<const double>(weights.data() + lo, size_t(hi - lo)), gb,
                              cfg.threads);
        acc.add(gb.flattened());
      }
      metrics.q_grad_variance = acc.mean_parameter_variance();
    }

    q_opt.ascend(q, grads);

    metrics.q_grad_norm = std::sqrt(grads.squared_norm());
    metrics.snis_ess_mean = ess_total / double(qb);
    metrics.proposal_rejected += report.rejected_draws;
    metrics.proposal_dropped += report.dropped_slots;
  }
  return metrics;
}

AloeStepMetrics aloe_step(EnergyModel& f, OptimizerState& f_opt, SamplerParams& q,
                          SamplerOptimizer& q_opt, const std::vector<BitVector>& data_batch,
                          const AloeConfig& cfg, Rng& rng, NegativeSource* negatives_override) {
  if (data_batch.empty()) throw std::invalid_argument("aloe_step: empty data batch");
  AloeStepMetrics metrics;
  const int B = int(data_batch.size());

  // Negatives: trajectory endpoints from q, evolved by the kernel.
  std::vector<BitVector> negatives;
  if (negatives_override) {
    Rng neg_rng = rng.split(kSplitNegatives);
    negatives = negatives_override->draw(B, neg_rng);
  } else {
    Rng neg_rng = rng.split(kSplitNegatives);
    const std::vector<Trajectory> trajs = sample_trajectories_batch(q, B, neg_rng, cfg.threads);
    negatives.reserve(size_t(B));
    for (const auto& t : trajs) negatives.push_back(t.endpoint());
  }
  std::vector<Rng> chain_rngs;
  chain_rngs.reserve(size_t(B));
  for (int i = 0; i < B; ++i) chain_rngs.push_back(rng.split(kSplitGibbs, uint64_t(i)));
  gibbs_sweeps_inplace(f, negatives, cfg.gibbs_sweeps, chain_rngs, cfg.threads);

  metrics.f = contrastive_f_update(f, f_opt, data_batch, negatives, cfg.threads);

  Rng q_rng = rng.split(kSplitSampler);
  metrics.q = sampler_update(q, q_opt, f, cfg, q_rng);
  return metrics;
}

ReplayBuffer ReplayBuffer::initialized(int capacity, int d, int K,
                                       double restart_probability, Rng& rng) {
  ReplayBuffer buffer;
  buffer.capacity = capacity;
  buffer.restart_probability = restart_probability;
  buffer.storage.reserve(size_t(capacity));
  for (int i = 0; i < capacity; ++i) buffer.storage.push_back(uniform_random_state(d, K, rng));
  return buffer;
}

ContrastiveMetrics pcd_step(EnergyModel& f, OptimizerState& f_opt, ReplayBuffer& buffer,
                            const std::vector<BitVector>& data_batch, const PcdConfig& cfg,
                            Rng& rng) {
  if (buffer.storage.empty()) throw std::invalid_argument("pcd_step: buffer not initialized");
  const int B = int(data_batch.size());

  Rng slot_rng = rng.split(kSplitSlots);
  std::vector<int> slots(size_t(B));
  for (int i = 0; i < B; ++i) slots[size_t(i)] = int(slot_rng.uniform_int(uint64_t(buffer.capacity)));

  Rng restart_rng = rng.split(kSplitRestart);
  std::vector<BitVector> chains;
  chains.reserve(size_t(B));
  for (int i = 0; i < B; ++i) {
    if (restart_rng.uniform() < buffer.restart_probability)
      chains.push_back(uniform_random_state(f.d, f.K, restart_rng));
    else
      chains.push_back(buffer.storage[size_t(slots[size_t(i)])]);
  }

  std::vector<Rng> chain_rngs;
  chain_rngs.reserve(size_t(B));
  for (int i = 0; i < B; ++i) chain_rngs.push_back(rng.split(kSplitGibbs, uint64_t(i)));
  gibbs_sweeps_inplace(f, chains, cfg.k_sweeps, chain_rngs, cfg.threads);

  const ContrastiveMetrics m = contrastive_f_update(f, f_opt, data_batch, chains, cfg.threads);

  for (int i = 0; i < B; ++i) buffer.storage[size_t(slots[size_t(i)])] = chains[size_t(i)];
  return m;
}

AdeStepMetrics ade_step(EnergyModel& f, OptimizerState& f_opt, InitSampler& q0,
                        InitOptimizer& q0_opt, double& baseline,
                        const std::vector<BitVector>& data_batch, const AdeConfig& cfg,
                        Rng& rng, int64_t step_index) {
  if (data_batch.empty()) throw std::invalid_argument("ade_step: empty data batch");
  AdeStepMetrics metrics;
  const int B = int(data_batch.size());

  Rng neg_rng = rng.split(kSplitNegatives);
  std::vector<BitVector> negatives = init_sample_batch(q0, B, neg_rng, cfg.threads);

  if (step_index % cfg.f_update_every == 0)
    metrics.f = contrastive_f_update(f, f_opt, data_batch, negatives, cfg.threads);

  if (step_index % cfg.q_update_every == 0) {
    // Entropy-regularized score-function update: reward f(x) - log q0(x) - 1,
    // centered by a scalar moving-average baseline.
    std::vector<double> logq(negatives.size());
    init_logprob_batch(q0, negatives, logq, cfg.threads);
    const VectorXd fx = energies(f, negatives, cfg.threads);
    std::vector<double> reward(negatives.size());
    double reward_mean = 0.0;
    for (size_t i = 0; i < negatives.size(); ++i) {
      reward[i] = fx[Eigen::Index(i)] - logq[i] - 1.0;
      reward_mean += reward[i];
    }
    reward_mean /= double(B);

    std::vector<double> weights(negatives.size());
    for (size_t i = 0; i < negatives.size(); ++i)
      weights[i] = (reward[i] - baseline) / double(B);

    std::vector<ParamVector> grads;
    for (ParamVector* block : init_param_blocks(q0)) grads.emplace_back(block->size(), 0.0);
    init_logprob_grad_batch(q0, negatives, weights, grads, cfg.threads);

    if (cfg.compute_grad_variance) {
      GradVarianceAccumulator acc;
      std::vector<ParamVector> gb;
      for (ParamVector* block : init_param_blocks(q0)) gb.emplace_back(block->size(), 0.0);
      for (size_t i = 0; i < negatives.size(); ++i) {
        for (auto& g : gb) std::fill(g.begin(), g.end(), 0.0);
        init_logprob_grad(q0, negatives[i], reward[i] - baseline, gb);
        int64_t total = 0;
        for (const auto& g : gb) total += int64_t(g.size());
        VectorXd flat(total);
        int64_t at = 0;
        for (const auto& g : gb)
          for (double v : g) flat[at++] = v;
        acc.add(flat);
      }
      metrics.q_grad_variance = acc.mean_parameter_variance();
    }

    double norm2 = 0.0;
    for (const auto& g : grads)
      for (double v : g) norm2 += v * v;
    metrics.q_grad_norm = std::sqrt(norm2);
    metrics.reward_mean = reward_mean;

    q0_opt.ascend(q0, grads);
    baseline = cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * reward_mean;
  }
  metrics.baseline = baseline;
  return metrics;
}

}  // namespace aloe
