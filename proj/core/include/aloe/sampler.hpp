#pragma once

#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "aloe/bitvec.hpp"
#include "aloe/nn.hpp"

namespace aloe {

// ---------------------------------------------------------------------------
// Initial distribution q0: either an independent per-position logit table or
// an autoregressive stack of per-position prefix networks feeding one shared
// predictor head. Never shared across positions; the prefix net for position
// i reads the one-hot encoding of the first i values (width i*K), and the
// position-0 net reads a constant 1.
// ---------------------------------------------------------------------------

struct FactorizedInit {
  int d = 0;
  int K = 2;
  ParamVector logits;  // d*K, position-major
};

struct AutoregressiveInit {
  int d = 0;
  int K = 2;
  int embed_dim = 256;
  std::vector<DenseNetSpec> embed_specs;
  std::vector<ParamVector> embed_params;
  DenseNetSpec head_spec;  // [embed_dim, ..., K] with log_softmax
  ParamVector head_params;
};

using InitSampler = std::variant<FactorizedInit, AutoregressiveInit>;

FactorizedInit make_factorized_init(int d, int K);
AutoregressiveInit make_autoregressive_init(int d, int K, Rng& rng,
                                            const std::vector<int>& embed_hidden = {512, 512},
                                            int embed_dim = 256,
                                            const std::vector<int>& head_hidden = {512});

int init_dim(const InitSampler& q0);
int init_categories(const InitSampler& q0);

std::pair<BitVector, double> init_sample(const InitSampler& q0, Rng& rng);
double init_logprob(const InitSampler& q0, const BitVector& x);
std::vector<BitVector> init_sample_batch(const InitSampler& q0, int n, Rng& parent,
                                         int threads = 1);
void init_logprob_batch(const InitSampler& q0, std::span<const BitVector> xs,
                        std::span<double> out, int threads = 1);

// ---------------------------------------------------------------------------
// Editor: one local modification. A position network picks the coordinate;
// for K = 2 the bit at that coordinate is flipped, for K > 2 a value network
// scores the K values with the current one masked out.
// ---------------------------------------------------------------------------

struct Editor {
  int d = 0;
  int K = 2;
  DenseNetSpec position_spec;  // [input_width, ..., d] log_softmax
  ParamVector position_params;
  DenseNetSpec value_spec;     // K > 2 only: [input_width + d, ..., K] identity
  ParamVector value_params;

  bool has_value_net() const { return K > 2; }
};

Editor make_editor(int d, int K, Rng& rng, const std::vector<int>& hidden = {512, 512});

std::pair<BitVector, double> edit_step(const Editor& editor, const BitVector& x, Rng& rng);
double edit_logprob(const Editor& editor, const BitVector& from, const BitVector& to);

struct StopPolicy {
  DenseNetSpec spec;  // [input_width, ..., 1] log_sigmoid
  ParamVector params;
};

StopPolicy make_stop_policy(int d, int K, Rng& rng, const std::vector<int>& hidden = {512, 512});

struct StopEval {
  double log_stop;      // log q_stop(x)
  double log_continue;  // log (1 - q_stop(x))
};
StopEval stop_eval(const StopPolicy& stop, const BitVector& x);

// ---------------------------------------------------------------------------
// Full local-search sampler. When the editor is absent every trajectory has
// length zero and the sampler reduces to q0 exactly (the no-edit ablation).
// ---------------------------------------------------------------------------

struct SamplerParams {
  InitSampler q0;
  std::optional<Editor> editor;
  std::optional<StopPolicy> stop;
  int max_steps = 16;

  int horizon() const { return editor.has_value() ? max_steps : 0; }
  void validate() const;
};

struct Trajectory {
  std::vector<BitVector> states;
  bool forced_stop = false;  // true iff the walk hit the horizon

  int t() const { return int(states.size()) - 1; }
  const BitVector& endpoint() const { return states.back(); }
};

void validate_trajectory(const SamplerParams& q, const Trajectory& traj);
std::string trajectory_json_line(const Trajectory& traj);

std::pair<Trajectory, double> sample_trajectory(const SamplerParams& q, Rng& rng);
std::vector<Trajectory> sample_trajectories_batch(const SamplerParams& q, int n,
                                                  Rng& parent, int threads = 1);

double trajectory_logprob(const SamplerParams& q, const Trajectory& traj);
std::vector<double> trajectory_logprob_batch(const SamplerParams& q,
                                             std::span<const Trajectory> trajs,
                                             int threads = 1);

// Gradients with respect to every trainable block of a SamplerParams.
struct SamplerGrads {
  std::vector<ParamVector> q0;  // factorized: {logits}; autoregressive: embeds then head
  ParamVector editor_position;
  ParamVector editor_value;
  ParamVector stop;

  static SamplerGrads zeros_like(const SamplerParams& q);
  void add_scaled(const SamplerGrads& other, double a);
  void scale(double a);
  void set_zero();
  int64_t total_size() const;
  double squared_norm() const;
  double inf_norm() const;
  Eigen::VectorXd flattened() const;
};

void init_logprob_grad(const InitSampler& q0, const BitVector& x, double weight,
                       std::vector<ParamVector>& q0_grads);
void init_logprob_grad_batch(const InitSampler& q0, std::span<const BitVector> xs,
                             std::span<const double> weights,
                             std::vector<ParamVector>& q0_grads, int threads = 1);

// Mutable views of the trainable blocks, in the same order as SamplerGrads.
std::vector<ParamVector*> init_param_blocks(InitSampler& q0);
std::vector<ParamVector*> sampler_param_blocks(SamplerParams& q);
void trajectory_logprob_grad(const SamplerParams& q, const Trajectory& traj,
                             double weight, SamplerGrads& grads);
// weights[j] multiplies trajectory j's gradient; the result is accumulated
// into grads with a fixed reduction order regardless of thread count.
void trajectory_grad_batch(const SamplerParams& q, std::span<const Trajectory> trajs,
                           std::span<const double> weights, SamplerGrads& grads,
                           int threads = 1);

// ---------------------------------------------------------------------------
// Exact marginal by trajectory enumeration (oracle sizes only).
// ---------------------------------------------------------------------------

inline constexpr int64_t kTrajectoryEnumerationCap = int64_t(1) << 22;

std::vector<Trajectory> enumerate_endpoint_trajectories(
    const SamplerParams& q, const BitVector& x,
    int64_t cap = kTrajectoryEnumerationCap);
double marginal_logprob_exact(const SamplerParams& q, const BitVector& x,
                              int64_t cap = kTrajectoryEnumerationCap);

// ---------------------------------------------------------------------------
// Trajectory proposals conditioned on the endpoint.
// ---------------------------------------------------------------------------

enum class ProposalKind { inverse, edit_distance };

struct ProposalDraw {
  Trajectory traj;  // always ends at the conditioning state
  double log_density;
};

// Backward walk from x: a truncated-geometric number of edits, positions
// drawn as the leading entries of a uniform permutation (distinct mode) or
// uniformly per step (with_replacement = full support over trajectories).
ProposalDraw inverse_proposal(const BitVector& x, double geo_p, int T, Rng& rng,
                              bool distinct_positions = true);
std::vector<ProposalDraw> inverse_proposal_support(const BitVector& x, double geo_p,
                                                   int T, bool with_replacement,
                                                   int64_t cap = kTrajectoryEnumerationCap);

// Shortest-edit path from a q0 draw to x in a uniformly random coordinate
// order; returns nothing when the path is longer than the horizon.
std::optional<ProposalDraw> edit_distance_proposal(const InitSampler& q0,
                                                   const BitVector& x, int T, Rng& rng);

// ---------------------------------------------------------------------------
// Self-normalized importance-sampled gradient of log q(x).
// ---------------------------------------------------------------------------

// softmax(log_weights) combined with per-trajectory gradients. The weights
// are treated as constants; no gradient flows through the normalization.
SamplerGrads snis_weighted_grad(const SamplerParams& q,
                                std::span<const Trajectory> trajs,
                                std::span<const double> log_weights,
                                int threads = 1, double* ess = nullptr);

struct SnisReport {
  int64_t rejected_draws = 0;
  int64_t dropped_slots = 0;
  double ess = 0.0;
};

// N proposal draws for the endpoint x; edit_distance rejections are retried
// up to retry_cap per slot and then dropped. Throws if nothing survives.
std::vector<ProposalDraw> draw_proposals(const SamplerParams& q, const BitVector& x,
                                         ProposalKind kind, int n_samples, double geo_p,
                                         Rng& rng, SnisReport* report = nullptr,
                                         int retry_cap = 20);

SamplerGrads snis_grad_log_marginal(const SamplerParams& q, const BitVector& x,
                                    ProposalKind kind, int n_samples, double geo_p,
                                    Rng& rng, SnisReport* report = nullptr,
                                    int retry_cap = 20, int threads = 1);

}  // namespace aloe
