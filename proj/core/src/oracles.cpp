#include "aloe/oracles.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <stdexcept>

namespace aloe::oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd sweep_transition_matrix(const EnergyModel& model) {
  const uint64_t n = num_states(model.d, model.K);
  if (n > 4096) throw std::invalid_argument("sweep_transition_matrix: space too large");
  MatrixXd P(n, n);
  VectorXd delta = VectorXd::Zero(Eigen::Index(n));
  for (uint64_t i = 0; i < n; ++i) {
    delta[Eigen::Index(i)] = 1.0;
    P.row(Eigen::Index(i)) = distribution_after_sweep(model, delta).transpose();
    delta[Eigen::Index(i)] = 0.0;
  }
  return P;
}

double stationarity_gap(const EnergyModel& model, int threads) {
  const std::vector<double> p = exact_distribution(model, threads);
  VectorXd pv(Eigen::Index(p.size()));
  for (size_t i = 0; i < p.size(); ++i) pv[Eigen::Index(i)] = p[i];
  const VectorXd after = distribution_after_sweep(model, pv, threads);
  return (after - pv).cwiseAbs().maxCoeff();
}

namespace {

// Every trajectory of the sampler, built forward from every start state.
std::vector<Trajectory> enumerate_all_trajectories(const SamplerParams& q, int64_t cap) {
  const int d = init_dim(q.q0);
  const int K = init_categories(q.q0);
  const int T = q.horizon();
  std::vector<Trajectory> out;
  std::vector<BitVector> seq;
  std::function<void(int)> dfs = [&](int t) {
    Trajectory traj;
    traj.states = seq;
    traj.forced_stop = (t == T);
    out.push_back(std::move(traj));
    if (int64_t(out.size()) > cap)
      throw std::invalid_argument("enumerate_all_trajectories: too many; refusing");
    if (t == T) return;
    BitVector next = seq.back();
    for (int i = 0; i < d; ++i) {
      const uint8_t cur = next.values[size_t(i)];
      for (int v = 0; v < K; ++v) {
        if (v == cur) continue;
        next.values[size_t(i)] = uint8_t(v);
        seq.push_back(next);
        dfs(t + 1);
        seq.pop_back();
      }
      next.values[size_t(i)] = cur;
    }
  };
  const uint64_t n = num_states(d, K);
  for (uint64_t s = 0; s < n; ++s) {
    seq = {state_from_index(s, d, K)};
    dfs(0);
  }
  return out;
}

}  // namespace

double trajectory_mass_error(const SamplerParams& q) {
  const auto trajs = enumerate_all_trajectories(q, kTrajectoryEnumerationCap);
  const std::vector<double> lp = trajectory_logprob_batch(q, trajs);
  double total = 0.0;
  for (double v : lp) total += std::exp(v);
  return std::abs(1.0 - total);
}

double marginal_normalization_error(const SamplerParams& q) {
  const int d = init_dim(q.q0);
  const int K = init_categories(q.q0);
  const uint64_t n = num_states(d, K);
  double total = 0.0;
  for (uint64_t s = 0; s < n; ++s)
    total += std::exp(marginal_logprob_exact(q, state_from_index(s, d, K)));
  return std::abs(1.0 - total);
}

double posterior_gradient_identity_gap(const SamplerParams& q, const BitVector& x,
                                       double geo_p) {
  // Left side: the SNIS estimator evaluated on the whole proposal support,
  // each trajectory entering with its exact draw probability.
  const auto support = inverse_proposal_support(x, geo_p, q.horizon(), /*with_replacement=*/true);
  std::vector<Trajectory> trajs;
  trajs.reserve(support.size());
  for (const auto& s : support) trajs.push_back(s.traj);
  const std::vector<double> logq = trajectory_logprob_batch(q, trajs);
  std::vector<double> lw(trajs.size());
  for (size_t j = 0; j < lw.size(); ++j)
    lw[j] = support[j].log_density + (logq[j] - support[j].log_density);
  const SamplerGrads lhs = snis_weighted_grad(q, trajs, lw);

  // Right side: posterior-weighted enumeration of d log q(x) / d phi.
  const auto endpoint = enumerate_endpoint_trajectories(q, x);
  const std::vector<double> logq2 = trajectory_logprob_batch(q, endpoint);
  const double marginal = marginal_logprob_exact(q, x);
  std::vector<double> w(endpoint.size());
  for (size_t j = 0; j < w.size(); ++j) w[j] = std::exp(logq2[j] - marginal);
  SamplerGrads rhs = SamplerGrads::zeros_like(q);
  trajectory_grad_batch(q, endpoint, w, rhs);

  return (lhs.flattened() - rhs.flattened()).cwiseAbs().maxCoeff();
}

bool GradCheckReport::all_pass() const {
  for (const auto& item : items)
    if (!item.pass()) return false;
  return true;
}
double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& item : items) w = std::max(w, item.max_rel_error);
  return w;
}

namespace {

GradCheckItem check_energy_net(const char* name, int d, const std::vector<int>& hidden,
                               uint64_t seed, int64_t subset, double tol) {
  Rng rng(seed);
  EnergyModel model = EnergyModel::make(d, 2, hidden, rng);
  const BitVector x = uniform_random_state(d, 2, rng);
  const std::vector<double> w{1.0};
  const ParamVector analytic =
      weighted_energy_gradient(model, std::span<const BitVector>(&x, 1), w);
  auto loss = [&](const ParamVector& p) {
    EnergyModel m = model;
    m.params = p;
    return energy(m, x);
  };
  Rng pick = rng.split(1);
  const double err = gradient_check(loss, model.params, analytic, 1e-5, subset, &pick);
  return {name, err, tol};
}

SamplerParams small_sampler(int d, uint64_t seed, bool autoregressive, int T) {
  Rng rng(seed);
  SamplerParams q;
  if (autoregressive)
    q.q0 = make_autoregressive_init(d, 2, rng, {16}, 8, {12});
  else {
    FactorizedInit f = make_factorized_init(d, 2);
    Rng lr = rng.split(9);
    for (auto& v : f.logits) v = 0.5 * (2.0 * lr.uniform() - 1.0);
    q.q0 = f;
  }
  q.editor = make_editor(d, 2, rng, {16, 16});
  q.stop = make_stop_policy(d, 2, rng, {16, 16});
  q.max_steps = T;
  return q;
}

// FD check of one parameter block of a sampler against the analytic
// trajectory gradient.
GradCheckItem check_sampler_block(const char* name, SamplerParams& q,
                                  const Trajectory& traj, ParamVector& block,
                                  const ParamVector& analytic_block, uint64_t seed,
                                  int64_t subset, double tol) {
  auto loss = [&](const ParamVector& p) {
    ParamVector keep = block;
    block = p;
    const double v = trajectory_logprob(q, traj);
    block = keep;
    return v;
  };
  Rng pick(seed);
  const double err = gradient_check(loss, block, analytic_block, 1e-5, subset, &pick);
  return {name, err, tol};
}

}  // namespace

GradCheckReport finite_difference_suite(uint64_t seed) {
  GradCheckReport report;
  Rng root(seed);

  {
    // One-parameter sanity case: quadratic loss.
    ParamVector p{1.0};
    ParamVector analytic{2.0 * (p[0] - 3.0)};
    auto loss = [](const ParamVector& v) { return (v[0] - 3.0) * (v[0] - 3.0); };
    report.items.push_back({"quadratic_1param", gradient_check(loss, p, analytic), 1e-8});
  }

  report.items.push_back(check_energy_net("energy_net_full_shape", 32, {256, 256, 256},
                                          root.split(2).base_seed(), 200, 1e-4));
  report.items.push_back(check_energy_net("energy_net_small_exhaustive", 6, {16},
                                          root.split(3).base_seed(), 0, 1e-4));

  {
    // Full production shapes for q0, editor and stop, checked on subsets
    // through the log-probability of one sampled trajectory.
    Rng rng = root.split(4);
    SamplerParams q;
    q.q0 = make_autoregressive_init(32, 2, rng);
    q.editor = make_editor(32, 2, rng);
    q.stop = make_stop_policy(32, 2, rng);
    q.max_steps = 16;
    Rng traj_rng = rng.split(1);
    auto [traj, lp] = sample_trajectory(q, traj_rng);
    (void)lp;
    if (traj.t() == 0) {
      // A zero-length walk exercises neither net; force a couple of edits.
      Trajectory forced = traj;
      BitVector a = forced.states.back();
      a.values[0] ^= 1;
      forced.states.push_back(a);
      BitVector b = a;
      b.values[5] ^= 1;
      forced.states.push_back(b);
      forced.forced_stop = false;
      traj = forced;
    }
    SamplerGrads grads = SamplerGrads::zeros_like(q);
    trajectory_logprob_grad(q, traj, 1.0, grads);
    auto& ar = std::get<AutoregressiveInit>(q.q0);
    report.items.push_back(check_sampler_block("trajectory_q0_head_full_shape", q, traj,
                                               ar.head_params, grads.q0.back(),
                                               root.split(5).base_seed(), 60, 1e-4));
    report.items.push_back(check_sampler_block("trajectory_q0_embed31_full_shape", q, traj,
                                               ar.embed_params[31], grads.q0[31],
                                               root.split(6).base_seed(), 60, 1e-4));
    report.items.push_back(check_sampler_block("trajectory_editor_full_shape", q, traj,
                                               q.editor->position_params, grads.editor_position,
                                               root.split(7).base_seed(), 60, 1e-4));
    report.items.push_back(check_sampler_block("trajectory_stop_full_shape", q, traj,
                                               q.stop->params, grads.stop,
                                               root.split(8).base_seed(), 60, 1e-4));
  }

  {
    // Small sampler checked in full, factorized q0.
    SamplerParams q = small_sampler(5, root.split(9).base_seed(), false, 4);
    Rng traj_rng(root.split(10).base_seed());
    auto [traj, lp] = sample_trajectory(q, traj_rng);
    (void)lp;
    SamplerGrads grads = SamplerGrads::zeros_like(q);
    trajectory_logprob_grad(q, traj, 1.0, grads);
    auto& fac = std::get<FactorizedInit>(q.q0);
    report.items.push_back(check_sampler_block("trajectory_small_q0", q, traj, fac.logits,
                                               grads.q0[0], root.split(11).base_seed(), 0, 1e-4));
    report.items.push_back(check_sampler_block("trajectory_small_editor", q, traj,
                                               q.editor->position_params, grads.editor_position,
                                               root.split(12).base_seed(), 0, 1e-4));
    report.items.push_back(check_sampler_block("trajectory_small_stop", q, traj,
                                               q.stop->params, grads.stop,
                                               root.split(13).base_seed(), 0, 1e-4));
  }

  {
    // Marginal log-probability: analytic posterior-enumeration gradient
    // against finite differences, exercised per block.
    SamplerParams q = small_sampler(3, root.split(14).base_seed(), true, 2);
    const BitVector x = state_from_index(5, 3, 2);
    const auto endpoint = enumerate_endpoint_trajectories(q, x);
    const std::vector<double> logq = trajectory_logprob_batch(q, endpoint);
    const double marginal = marginal_logprob_exact(q, x);
    std::vector<double> w(endpoint.size());
    for (size_t j = 0; j < w.size(); ++j) w[j] = std::exp(logq[j] - marginal);
    SamplerGrads grads = SamplerGrads::zeros_like(q);
    trajectory_grad_batch(q, endpoint, w, grads);

    auto check_block = [&](const char* name, ParamVector& block, const ParamVector& analytic,
                           uint64_t s) {
      auto loss = [&](const ParamVector& p) {
        ParamVector keep = block;
        block = p;
        const double v = marginal_logprob_exact(q, x);
        block = keep;
        return v;
      };
      Rng pick(s);
      report.items.push_back({name, gradient_check(loss, block, analytic, 1e-5, 40, &pick), 1e-4});
    };
    auto& ar = std::get<AutoregressiveInit>(q.q0);
    check_block("marginal_q0_head", ar.head_params, grads.q0.back(), root.split(15).base_seed());
    check_block("marginal_editor", q.editor->position_params, grads.editor_position,
                root.split(16).base_seed());
    check_block("marginal_stop", q.stop->params, grads.stop, root.split(17).base_seed());
  }

  {
    // MLE objective: E_data f - log Z against its enumeration gradient.
    Rng rng = root.split(18);
    EnergyModel model = EnergyModel::make(4, 2, {8}, rng);
    std::vector<BitVector> data;
    for (uint64_t s : {1ull, 7ull, 11ull, 14ull}) data.push_back(state_from_index(s, 4, 2));
    const std::vector<double> wdata(data.size(), 1.0 / double(data.size()));
    const std::vector<double> p = exact_distribution(model);
    std::vector<BitVector> all;
    for (uint64_t s = 0; s < 16; ++s) all.push_back(state_from_index(s, 4, 2));
    ParamVector analytic = weighted_energy_gradient(model, data, wdata);
    const ParamVector neg = weighted_energy_gradient(model, all, p);
    for (size_t i = 0; i < analytic.size(); ++i) analytic[i] -= neg[i];
    auto loss = [&](const ParamVector& pv) {
      EnergyModel m = model;
      m.params = pv;
      double mean = 0.0;
      for (const auto& x : data) mean += energy(m, x);
      return mean / double(data.size()) - log_partition_exact(m);
    };
    report.items.push_back(
        {"mle_objective_vs_enumeration", gradient_check(loss, model.params, analytic), 1e-6});
  }

  return report;
}

bool OracleSuiteResult::all_pass() const {
  for (const auto& [name, ok] : lines)
    if (!ok) return false;
  return true;
}

OracleSuiteResult run_oracle_suite(uint64_t seed, bool print) {
  OracleSuiteResult result;
  auto emit = [&](const std::string& name, bool ok, double value, double tol) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-44s %s  (%.3e < %.0e)", name.c_str(),
                  ok ? "PASS" : "FAIL", value, tol);
    if (print) std::printf("%s\n", buf);
    result.lines.emplace_back(name, ok);
  };
  Rng root(seed);

  for (int k = 0; k < 5; ++k) {
    Rng rng = root.split(100, uint64_t(k));
    EnergyModel model = EnergyModel::make(6, 2, {32, 32}, rng);
    const double gap = stationarity_gap(model);
    emit("gibbs_stationarity_d6_net" + std::to_string(k), gap < 1e-10, gap, 1e-10);
  }

  for (int variant = 0; variant < 2; ++variant) {
    SamplerParams q = small_sampler(3, root.split(200, uint64_t(variant)).base_seed(),
                                    variant == 1, 2);
    const double mass = trajectory_mass_error(q);
    const double marg = marginal_normalization_error(q);
    const std::string tag = variant ? "autoregressive" : "factorized";
    emit("trajectory_mass_" + tag, mass < 1e-10, mass, 1e-10);
    emit("marginal_normalization_" + tag, marg < 1e-10, marg, 1e-10);
  }

  {
    SamplerParams q = small_sampler(3, root.split(300).base_seed(), true, 2);
    double worst = 0.0;
    for (uint64_t s : {0ull, 3ull, 6ull})
      worst = std::max(worst,
                       posterior_gradient_identity_gap(q, state_from_index(s, 3, 2), 0.8));
    emit("posterior_gradient_identity", worst < 1e-8, worst, 1e-8);
  }

  {
    const GradCheckReport fd = finite_difference_suite(root.split(400).base_seed());
    for (const auto& item : fd.items)
      emit("gradcheck_" + item.name, item.pass(), item.max_rel_error, item.tolerance);
  }

  return result;
}

}  // namespace aloe::oracle
