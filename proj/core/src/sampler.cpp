#include "aloe/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "aloe/threading.hpp"

namespace aloe {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Position 0 has an empty prefix; its net reads a constant 1 instead.
int prefix_width(int i, int K) { return i == 0 ? 1 : i * K; }

void write_prefix_column(const BitVector& x, int i, MatrixXd& X, int col) {
  if (i == 0) {
    X(0, col) = 1.0;
    return;
  }
  X.col(col).setZero();
  for (int j = 0; j < i; ++j) X(j * x.K + x.values[size_t(j)], col) = 1.0;
}

double logsumexp2(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

std::vector<double> trunc_geometric_logpmf(double geo_p, int t_max) {
  if (!(geo_p > 0.0 && geo_p < 1.0))
    throw std::invalid_argument("geometric parameter must lie in (0, 1)");
  std::vector<double> logw(size_t(t_max) + 1);
  for (int t = 0; t <= t_max; ++t) logw[size_t(t)] = double(t) * std::log(geo_p);
  double lse = logw[0];
  for (int t = 1; t <= t_max; ++t) lse = logsumexp2(lse, logw[size_t(t)]);
  for (auto& w : logw) w -= lse;
  return logw;
}

// Accumulates per-block partial gradients so the final reduction order is
// independent of the thread count.
struct BlockAccum {
  std::vector<ParamVector> parts;
  int64_t psize = 0;

  BlockAccum(int64_t n_items, int64_t param_size) : psize(param_size) {
    const int64_t nblocks = n_items <= 0 ? 0 : (n_items + kBatchBlock - 1) / kBatchBlock;
    parts.assign(size_t(nblocks), ParamVector(size_t(param_size), 0.0));
  }
  ParamVector& at(int64_t lo) { return parts[size_t(lo / kBatchBlock)]; }
  void reduce_into(ParamVector& out) {
    for (const auto& p : parts)
      for (size_t i = 0; i < out.size(); ++i) out[i] += p[i];
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// q0
// ---------------------------------------------------------------------------

FactorizedInit make_factorized_init(int d, int K) {
  FactorizedInit q;
  q.d = d;
  q.K = K;
  q.logits.assign(size_t(d) * size_t(K), 0.0);
  return q;
}

AutoregressiveInit make_autoregressive_init(int d, int K, Rng& rng,
                                            const std::vector<int>& embed_hidden,
                                            int embed_dim,
                                            const std::vector<int>& head_hidden) {
  AutoregressiveInit q;
  q.d = d;
  q.K = K;
  q.embed_dim = embed_dim;
  for (int i = 0; i < d; ++i) {
    std::vector<int> sizes{prefix_width(i, K)};
    if (i > 0)
      for (int h : embed_hidden) sizes.push_back(h);
    sizes.push_back(embed_dim);
    q.embed_specs.push_back(DenseNetSpec::mlp(std::move(sizes)));
    Rng r = rng.split(0x71a0, uint64_t(i));
    q.embed_params.push_back(init_params(q.embed_specs.back(), r));
  }
  std::vector<int> head_sizes{embed_dim};
  for (int h : head_hidden) head_sizes.push_back(h);
  head_sizes.push_back(K);
  q.head_spec = DenseNetSpec::mlp(std::move(head_sizes), OutputTransform::log_softmax);
  Rng r = rng.split(0x71a0, uint64_t(d));
  q.head_params = init_params(q.head_spec, r);
  return q;
}

int init_dim(const InitSampler& q0) {
  return std::visit([](const auto& q) { return q.d; }, q0);
}
int init_categories(const InitSampler& q0) {
  return std::visit([](const auto& q) { return q.K; }, q0);
}

namespace {

// Per-position log-softmax rows of a factorized table.
VectorXd factorized_row_logprobs(const FactorizedInit& q, int i) {
  VectorXd z(q.K);
  for (int v = 0; v < q.K; ++v) z[v] = q.logits[size_t(i) * q.K + v];
  const double m = z.maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  return z.array() - lse;
}

// Forward through position i's prefix net and the shared head for a batch of
// prefixes. Returns log-softmax outputs; caches are optional.
void autoregressive_position_forward(const AutoregressiveInit& q, int i,
                                     const MatrixXd& prefix, MatrixXd& logp,
                                     NetCache* embed_cache, NetCache* head_cache) {
  MatrixXd embed;
  net_forward(q.embed_specs[size_t(i)], q.embed_params[size_t(i)], prefix, embed, embed_cache);
  net_forward(q.head_spec, q.head_params, embed, logp, head_cache);
}

}  // namespace

std::pair<BitVector, double> init_sample(const InitSampler& q0, Rng& rng) {
  const int d = init_dim(q0);
  const int K = init_categories(q0);
  BitVector x(d, K);
  double logp = 0.0;
  if (const auto* fac = std::get_if<FactorizedInit>(&q0)) {
    for (int i = 0; i < d; ++i) {
      const VectorXd row = factorized_row_logprobs(*fac, i);
      VectorXd z(K);
      for (int v = 0; v < K; ++v) z[v] = fac->logits[size_t(i) * K + v];
      const int pick = pick_from_probs(softmax_probs(z), rng.uniform());
      x.values[size_t(i)] = uint8_t(pick);
      logp += row[pick];
    }
    return {x, logp};
  }
  const auto& ar = std::get<AutoregressiveInit>(q0);
  MatrixXd prefix, lp;
  NetCache ec, hc;
  for (int i = 0; i < d; ++i) {
    prefix.resize(prefix_width(i, K), 1);
    write_prefix_column(x, i, prefix, 0);
    autoregressive_position_forward(ar, i, prefix, lp, &ec, &hc);
    const int pick = pick_from_probs(softmax_probs(hc.last_z().col(0)), rng.uniform());
    x.values[size_t(i)] = uint8_t(pick);
    logp += lp(pick, 0);
  }
  return {x, logp};
}

double init_logprob(const InitSampler& q0, const BitVector& x) {
  double out;
  init_logprob_batch(q0, std::span<const BitVector>(&x, 1), std::span<double>(&out, 1));
  return out;
}

void init_logprob_batch(const InitSampler& q0, std::span<const BitVector> xs,
                        std::span<double> out, int threads) {
  if (xs.size() != out.size()) throw std::invalid_argument("init_logprob_batch: size mismatch");
  if (xs.empty()) return;
  const int d = init_dim(q0);
  const int K = init_categories(q0);
  for (const auto& x : xs)
    if (x.d != d || x.K != K) throw std::invalid_argument("init_logprob_batch: shape mismatch");
  std::fill(out.begin(), out.end(), 0.0);

  if (const auto* fac = std::get_if<FactorizedInit>(&q0)) {
    for (int i = 0; i < d; ++i) {
      const VectorXd row = factorized_row_logprobs(*fac, i);
      for (size_t c = 0; c < xs.size(); ++c) out[c] += row[xs[c].values[size_t(i)]];
    }
    return;
  }
  const auto& ar = std::get<AutoregressiveInit>(q0);
  parallel_blocks(int64_t(xs.size()), threads, [&](int64_t lo, int64_t hi) {
    const int64_t m = hi - lo;
    MatrixXd prefix, lp;
    for (int i = 0; i < d; ++i) {
      prefix.resize(prefix_width(i, K), m);
      for (int64_t c = lo; c < hi; ++c) write_prefix_column(xs[size_t(c)], i, prefix, int(c - lo));
      autoregressive_position_forward(ar, i, prefix, lp, nullptr, nullptr);
      for (int64_t c = lo; c < hi; ++c) out[size_t(c)] += lp(xs[size_t(c)].values[size_t(i)], int(c - lo));
    }
  });
}

std::vector<BitVector> init_sample_batch(const InitSampler& q0, int n, Rng& parent,
                                         int threads) {
  const int d = init_dim(q0);
  const int K = init_categories(q0);
  std::vector<BitVector> xs(size_t(n), BitVector(d, K));
  if (n == 0) return xs;
  if (const auto* fac = std::get_if<FactorizedInit>(&q0)) {
    parallel_blocks(n, threads, [&](int64_t lo, int64_t hi) {
      for (int64_t c = lo; c < hi; ++c) {
        Rng rng = parent.split(0x5a11, uint64_t(c));
        for (int i = 0; i < d; ++i) {
          VectorXd z(K);
          for (int v = 0; v < K; ++v) z[v] = fac->logits[size_t(i) * K + v];
          xs[size_t(c)].values[size_t(i)] =
              uint8_t(pick_from_probs(softmax_probs(z), rng.uniform()));
        }
      }
    });
    return xs;
  }
  const auto& ar = std::get<AutoregressiveInit>(q0);
  parallel_blocks(n, threads, [&](int64_t lo, int64_t hi) {
    const int64_t m = hi - lo;
    std::vector<Rng> rngs;
    rngs.reserve(size_t(m));
    for (int64_t c = lo; c < hi; ++c) rngs.push_back(parent.split(0x5a11, uint64_t(c)));
    MatrixXd prefix, lp;
    NetCache ec, hc;
    for (int i = 0; i < d; ++i) {
      prefix.resize(prefix_width(i, K), m);
      for (int64_t c = lo; c < hi; ++c) write_prefix_column(xs[size_t(c)], i, prefix, int(c - lo));
      autoregressive_position_forward(ar, i, prefix, lp, &ec, &hc);
      for (int64_t c = lo; c < hi; ++c) {
        const int pick = pick_from_probs(softmax_probs(hc.last_z().col(c - lo)),
                                         rngs[size_t(c - lo)].uniform());
        xs[size_t(c)].values[size_t(i)] = uint8_t(pick);
      }
    }
  });
  return xs;
}

void init_logprob_grad(const InitSampler& q0, const BitVector& x, double weight,
                       std::vector<ParamVector>& q0_grads) {
  const double w[1] = {weight};
  init_logprob_grad_batch(q0, std::span<const BitVector>(&x, 1), std::span<const double>(w, 1),
                          q0_grads);
}

void init_logprob_grad_batch(const InitSampler& q0, std::span<const BitVector> xs,
                             std::span<const double> weights,
                             std::vector<ParamVector>& q0_grads, int threads) {
  if (xs.size() != weights.size())
    throw std::invalid_argument("init_logprob_grad_batch: size mismatch");
  if (xs.empty()) return;
  if (const auto* fac = std::get_if<FactorizedInit>(&q0)) {
    ParamVector& g = q0_grads.at(0);
    for (int i = 0; i < fac->d; ++i) {
      VectorXd z(fac->K);
      for (int v = 0; v < fac->K; ++v) z[v] = fac->logits[size_t(i) * fac->K + v];
      const VectorXd p = softmax_probs(z);
      for (size_t c = 0; c < xs.size(); ++c) {
        if (weights[c] == 0.0) continue;
        for (int v = 0; v < fac->K; ++v)
          g[size_t(i) * fac->K + v] +=
              weights[c] * ((v == xs[c].values[size_t(i)] ? 1.0 : 0.0) - p[v]);
      }
    }
    return;
  }
  const auto& ar = std::get<AutoregressiveInit>(q0);
  const int64_t m = int64_t(xs.size());
  for (int i = 0; i < ar.d; ++i) {
    BlockAccum embed_acc(m, int64_t(ar.embed_params[size_t(i)].size()));
    BlockAccum head_acc(m, int64_t(ar.head_params.size()));
    parallel_blocks(m, threads, [&](int64_t lo, int64_t hi) {
      MatrixXd prefix(prefix_width(i, ar.K), hi - lo), lp;
      for (int64_t c = lo; c < hi; ++c) write_prefix_column(xs[size_t(c)], i, prefix, int(c - lo));
      NetCache ec, hc;
      autoregressive_position_forward(ar, i, prefix, lp, &ec, &hc);
      MatrixXd upstream = MatrixXd::Zero(ar.K, hi - lo);
      for (int64_t c = lo; c < hi; ++c)
        upstream(xs[size_t(c)].values[size_t(i)], c - lo) = weights[size_t(c)];
      MatrixXd d_embed;
      net_backward(ar.head_spec, ar.head_params, hc, upstream, head_acc.at(lo), &d_embed);
      net_backward(ar.embed_specs[size_t(i)], ar.embed_params[size_t(i)], ec, d_embed,
                   embed_acc.at(lo));
    });
    embed_acc.reduce_into(q0_grads.at(size_t(i)));
    head_acc.reduce_into(q0_grads.at(size_t(ar.d)));
  }
}

std::vector<ParamVector*> init_param_blocks(InitSampler& q0) {
  std::vector<ParamVector*> blocks;
  if (auto* fac = std::get_if<FactorizedInit>(&q0)) {
    blocks.push_back(&fac->logits);
  } else {
    auto& ar = std::get<AutoregressiveInit>(q0);
    for (auto& p : ar.embed_params) blocks.push_back(&p);
    blocks.push_back(&ar.head_params);
  }
  return blocks;
}

std::vector<ParamVector*> sampler_param_blocks(SamplerParams& q) {
  std::vector<ParamVector*> blocks = init_param_blocks(q.q0);
  blocks.push_back(q.editor ? &q.editor->position_params : nullptr);
  blocks.push_back(q.editor ? &q.editor->value_params : nullptr);
  blocks.push_back(q.stop ? &q.stop->params : nullptr);
  return blocks;
}

// ---------------------------------------------------------------------------
// Editor and stop policy
// ---------------------------------------------------------------------------

Editor make_editor(int d, int K, Rng& rng, const std::vector<int>& hidden) {
  Editor e;
  e.d = d;
  e.K = K;
  std::vector<int> pos_sizes{input_width(d, K)};
  for (int h : hidden) pos_sizes.push_back(h);
  pos_sizes.push_back(d);
  e.position_spec = DenseNetSpec::mlp(std::move(pos_sizes), OutputTransform::log_softmax);
  Rng r1 = rng.split(0xed17, 0);
  e.position_params = init_params(e.position_spec, r1);
  if (K > 2) {
    std::vector<int> val_sizes{input_width(d, K) + d};
    for (int h : hidden) val_sizes.push_back(h);
    val_sizes.push_back(K);
    e.value_spec = DenseNetSpec::mlp(std::move(val_sizes));
    Rng r2 = rng.split(0xed17, 1);
    e.value_params = init_params(e.value_spec, r2);
  }
  return e;
}

StopPolicy make_stop_policy(int d, int K, Rng& rng, const std::vector<int>& hidden) {
  StopPolicy s;
  std::vector<int> sizes{input_width(d, K)};
  for (int h : hidden) sizes.push_back(h);
  sizes.push_back(1);
  s.spec = DenseNetSpec::mlp(std::move(sizes), OutputTransform::log_sigmoid);
  Rng r = rng.split(0x5709);
  s.params = init_params(s.spec, r);
  return s;
}

namespace {

void value_net_input(const BitVector& x, int pos, MatrixXd& X, int col) {
  write_input_column(x, X, col);
  const int base = input_width(x.d, x.K);
  for (int i = 0; i < x.d; ++i) X(base + i, col) = (i == pos) ? 1.0 : 0.0;
}

// Masked log-softmax over values != current.
double masked_value_logprob(const VectorXd& z, int current, int value) {
  double lse = -std::numeric_limits<double>::infinity();
  for (int v = 0; v < z.size(); ++v)
    if (v != current) lse = logsumexp2(lse, z[v]);
  return z[value] - lse;
}

VectorXd masked_value_probs(const VectorXd& z, int current) {
  VectorXd masked = z;
  double m = -std::numeric_limits<double>::infinity();
  for (int v = 0; v < z.size(); ++v)
    if (v != current) m = std::max(m, z[v]);
  VectorXd p = VectorXd::Zero(z.size());
  double total = 0.0;
  for (int v = 0; v < z.size(); ++v) {
    if (v == current) continue;
    p[v] = std::exp(z[v] - m);
    total += p[v];
  }
  p /= total;
  return p;
}

}  // namespace

std::pair<BitVector, double> edit_step(const Editor& editor, const BitVector& x, Rng& rng) {
  NetCache cache;
  MatrixXd logp;
  MatrixXd in(input_width(x.d, x.K), 1);
  write_input_column(x, in, 0);
  net_forward(editor.position_spec, editor.position_params, in, logp, &cache);
  const int pos = pick_from_probs(softmax_probs(cache.last_z().col(0)), rng.uniform());
  double lp = logp(pos, 0);

  BitVector y = x;
  if (x.K == 2) {
    y.values[size_t(pos)] = uint8_t(1 - y.values[size_t(pos)]);
  } else {
    MatrixXd vin(input_width(x.d, x.K) + x.d, 1), vz;
    value_net_input(x, pos, vin, 0);
    net_forward(editor.value_spec, editor.value_params, vin, vz);
    const int cur = x.values[size_t(pos)];
    const int v = pick_from_probs(masked_value_probs(vz.col(0), cur), rng.uniform());
    lp += masked_value_logprob(vz.col(0), cur, v);
    y.values[size_t(pos)] = uint8_t(v);
  }
  return {y, lp};
}

double edit_logprob(const Editor& editor, const BitVector& from, const BitVector& to) {
  int pos = -1;
  for (int i = 0; i < from.d; ++i) {
    if (from.values[size_t(i)] != to.values[size_t(i)]) {
      if (pos >= 0) throw std::invalid_argument("edit_logprob: states differ in more than one coordinate");
      pos = i;
    }
  }
  if (pos < 0) throw std::invalid_argument("edit_logprob: states are identical");
  MatrixXd in(input_width(from.d, from.K), 1), logp;
  write_input_column(from, in, 0);
  net_forward(editor.position_spec, editor.position_params, in, logp);
  double lp = logp(pos, 0);
  if (from.K > 2) {
    MatrixXd vin(input_width(from.d, from.K) + from.d, 1), vz;
    value_net_input(from, pos, vin, 0);
    net_forward(editor.value_spec, editor.value_params, vin, vz);
    lp += masked_value_logprob(vz.col(0), from.values[size_t(pos)], to.values[size_t(pos)]);
  }
  return lp;
}

StopEval stop_eval(const StopPolicy& stop, const BitVector& x) {
  NetCache cache;
  MatrixXd in(input_width(x.d, x.K), 1), y;
  write_input_column(x, in, 0);
  net_forward(stop.spec, stop.params, in, y, &cache);
  const double z = cache.last_z()(0, 0);
  return {y(0, 0), log_sigmoid(-z)};
}

// ---------------------------------------------------------------------------
// SamplerParams and trajectories
// ---------------------------------------------------------------------------

void SamplerParams::validate() const {
  if (editor.has_value() != stop.has_value())
    throw std::invalid_argument("SamplerParams: editor and stop policy go together");
  if (max_steps < 1) throw std::invalid_argument("SamplerParams: max_steps must be >= 1");
  if (editor) {
    if (editor->d != init_dim(q0) || editor->K != init_categories(q0))
      throw std::invalid_argument("SamplerParams: editor shape mismatch");
  }
}

void validate_trajectory(const SamplerParams& q, const Trajectory& traj) {
  if (traj.states.empty()) throw std::invalid_argument("Trajectory: empty");
  const int d = init_dim(q.q0);
  const int K = init_categories(q.q0);
  for (const auto& s : traj.states)
    if (s.d != d || s.K != K) throw std::invalid_argument("Trajectory: state shape mismatch");
  for (size_t i = 1; i < traj.states.size(); ++i)
    if (hamming_distance(traj.states[i - 1], traj.states[i]) != 1)
      throw std::invalid_argument("Trajectory: consecutive states must differ in exactly one coordinate");
  const int T = q.horizon();
  if (traj.t() > T) throw std::invalid_argument("Trajectory: longer than the horizon");
  if (traj.forced_stop != (traj.t() == T))
    throw std::invalid_argument("Trajectory: forced_stop flag inconsistent with horizon");
}

std::string trajectory_json_line(const Trajectory& traj) {
  std::string s = "{\"states\":[";
  for (size_t i = 0; i < traj.states.size(); ++i) {
    if (i) s += ',';
    s += '"';
    s += traj.states[i].to_string();
    s += '"';
  }
  s += "],\"forced_stop\":";
  s += traj.forced_stop ? "true" : "false";
  s += "}";
  return s;
}

std::pair<Trajectory, double> sample_trajectory(const SamplerParams& q, Rng& rng) {
  q.validate();
  auto [x0, lp0] = init_sample(q.q0, rng);
  Trajectory traj;
  traj.states.push_back(std::move(x0));
  double logp = lp0;
  const int T = q.horizon();
  for (;;) {
    if (traj.t() == T) {
      traj.forced_stop = true;
      break;
    }
    const StopEval se = stop_eval(*q.stop, traj.states.back());
    if (rng.uniform() < std::exp(se.log_stop)) {
      logp += se.log_stop;
      traj.forced_stop = false;
      break;
    }
    logp += se.log_continue;
    auto [y, elp] = edit_step(*q.editor, traj.states.back(), rng);
    logp += elp;
    traj.states.push_back(std::move(y));
  }
  return {traj, logp};
}

std::vector<Trajectory> sample_trajectories_batch(const SamplerParams& q, int n,
                                                  Rng& parent, int threads) {
  q.validate();
  std::vector<Trajectory> out(size_t(n));
  if (n == 0) return out;
  const int d = init_dim(q.q0);
  const int K = init_categories(q.q0);
  const int T = q.horizon();
  const int in_w = input_width(d, K);

  parallel_blocks(n, threads, [&](int64_t lo, int64_t hi) {
    const int64_t m = hi - lo;
    std::vector<Rng> rngs;
    rngs.reserve(size_t(m));
    for (int64_t c = lo; c < hi; ++c) rngs.push_back(parent.split(0x77aa, uint64_t(c)));

    // q0 draws, batched per position across the block.
    {
      std::vector<BitVector> x0(size_t(m), BitVector(d, K));
      if (const auto* fac = std::get_if<FactorizedInit>(&q.q0)) {
        for (int64_t c = 0; c < m; ++c)
          for (int i = 0; i < d; ++i) {
            VectorXd z(K);
            for (int v = 0; v < K; ++v) z[v] = fac->logits[size_t(i) * K + v];
            x0[size_t(c)].values[size_t(i)] =
                uint8_t(pick_from_probs(softmax_probs(z), rngs[size_t(c)].uniform()));
          }
      } else {
        const auto& ar = std::get<AutoregressiveInit>(q.q0);
        MatrixXd prefix, lp;
        NetCache ec, hc;
        for (int i = 0; i < d; ++i) {
          prefix.resize(prefix_width(i, K), m);
          for (int64_t c = 0; c < m; ++c) write_prefix_column(x0[size_t(c)], i, prefix, int(c));
          autoregressive_position_forward(ar, i, prefix, lp, &ec, &hc);
          for (int64_t c = 0; c < m; ++c)
            x0[size_t(c)].values[size_t(i)] = uint8_t(
                pick_from_probs(softmax_probs(hc.last_z().col(c)), rngs[size_t(c)].uniform()));
        }
      }
      for (int64_t c = 0; c < m; ++c) out[size_t(lo + c)].states.push_back(std::move(x0[size_t(c)]));
    }

    if (T == 0) {
      for (int64_t c = 0; c < m; ++c) out[size_t(lo + c)].forced_stop = true;
      return;
    }

    std::vector<int> active;
    for (int64_t c = 0; c < m; ++c) active.push_back(int(c));
    MatrixXd in, y;
    NetCache cache;
    for (int round = 0; !active.empty(); ++round) {
      // Stop decision for every active walk at its current state.
      if (round == T) {
        for (int c : active) out[size_t(lo + c)].forced_stop = true;
        break;
      }
      in.resize(in_w, Eigen::Index(active.size()));
      for (size_t k = 0; k < active.size(); ++k)
        write_input_column(out[size_t(lo + active[k])].states.back(), in, int(k));
      net_forward(q.stop->spec, q.stop->params, in, y, &cache);
      std::vector<int> continuing;
      for (size_t k = 0; k < active.size(); ++k) {
        const int c = active[k];
        if (rngs[size_t(c)].uniform() < std::exp(y(0, Eigen::Index(k))))
          out[size_t(lo + c)].forced_stop = false;
        else
          continuing.push_back(c);
      }
      active = std::move(continuing);
      if (active.empty()) break;

      // One edit for each walk that continues.
      in.resize(in_w, Eigen::Index(active.size()));
      for (size_t k = 0; k < active.size(); ++k)
        write_input_column(out[size_t(lo + active[k])].states.back(), in, int(k));
      net_forward(q.editor->position_spec, q.editor->position_params, in, y, &cache);
      std::vector<int> positions(active.size());
      for (size_t k = 0; k < active.size(); ++k)
        positions[k] = pick_from_probs(softmax_probs(cache.last_z().col(Eigen::Index(k))),
                                       rngs[size_t(active[k])].uniform());
      if (K == 2) {
        for (size_t k = 0; k < active.size(); ++k) {
          BitVector next = out[size_t(lo + active[k])].states.back();
          next.values[size_t(positions[k])] ^= 1;
          out[size_t(lo + active[k])].states.push_back(std::move(next));
        }
      } else {
        MatrixXd vin(in_w + d, Eigen::Index(active.size())), vz;
        for (size_t k = 0; k < active.size(); ++k)
          value_net_input(out[size_t(lo + active[k])].states.back(), positions[k], vin, int(k));
        net_forward(q.editor->value_spec, q.editor->value_params, vin, vz);
        for (size_t k = 0; k < active.size(); ++k) {
          BitVector next = out[size_t(lo + active[k])].states.back();
          const int cur = next.values[size_t(positions[k])];
          const int v = pick_from_probs(masked_value_probs(vz.col(Eigen::Index(k)), cur),
                                        rngs[size_t(active[k])].uniform());
          next.values[size_t(positions[k])] = uint8_t(v);
          out[size_t(lo + active[k])].states.push_back(std::move(next));
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Trajectory scoring and gradients, batched per network over all steps.
// ---------------------------------------------------------------------------

namespace {

struct EditColumn {
  int traj;
  int step;  // edit from states[step-1] to states[step]
  int pos;
  int to_value;
};
struct StopColumn {
  int traj;
  int state;
  bool is_stop;  // stop factor vs continue factor
};

struct TrajColumns {
  std::vector<EditColumn> edits;
  std::vector<StopColumn> stops;
};

TrajColumns collect_columns(const SamplerParams& q, std::span<const Trajectory> trajs) {
  TrajColumns cols;
  for (size_t j = 0; j < trajs.size(); ++j) {
    validate_trajectory(q, trajs[j]);
    const auto& traj = trajs[j];
    for (int s = 1; s <= traj.t(); ++s) {
      int pos = -1;
      for (int i = 0; i < traj.states[0].d; ++i)
        if (traj.states[size_t(s - 1)].values[size_t(i)] != traj.states[size_t(s)].values[size_t(i)])
          pos = i;
      cols.edits.push_back({int(j), s, pos, int(traj.states[size_t(s)].values[size_t(pos)])});
    }
    for (int s = 0; s < traj.t(); ++s) cols.stops.push_back({int(j), s, false});
    if (!traj.forced_stop) cols.stops.push_back({int(j), traj.t(), true});
  }
  return cols;
}

}  // namespace

std::vector<double> trajectory_logprob_batch(const SamplerParams& q,
                                             std::span<const Trajectory> trajs,
                                             int threads) {
  q.validate();
  std::vector<double> out(trajs.size(), 0.0);
  if (trajs.empty()) return out;
  const TrajColumns cols = collect_columns(q, trajs);
  const int d = init_dim(q.q0);
  const int K = init_categories(q.q0);
  const int in_w = input_width(d, K);

  {
    std::vector<BitVector> x0s;
    x0s.reserve(trajs.size());
    for (const auto& t : trajs) x0s.push_back(t.states.front());
    std::vector<double> lp(trajs.size());
    init_logprob_batch(q.q0, x0s, lp, threads);
    for (size_t j = 0; j < trajs.size(); ++j) out[j] += lp[j];
  }

  if (!cols.edits.empty()) {
    std::vector<double> edit_lp(cols.edits.size());
    parallel_blocks(int64_t(cols.edits.size()), threads, [&](int64_t lo, int64_t hi) {
      MatrixXd in(in_w, hi - lo), y;
      for (int64_t c = lo; c < hi; ++c) {
        const auto& ec = cols.edits[size_t(c)];
        write_input_column(trajs[size_t(ec.traj)].states[size_t(ec.step - 1)], in, int(c - lo));
      }
      net_forward(q.editor->position_spec, q.editor->position_params, in, y);
      for (int64_t c = lo; c < hi; ++c)
        edit_lp[size_t(c)] = y(cols.edits[size_t(c)].pos, c - lo);
      if (K > 2) {
        MatrixXd vin(in_w + d, hi - lo), vz;
        for (int64_t c = lo; c < hi; ++c) {
          const auto& ec = cols.edits[size_t(c)];
          value_net_input(trajs[size_t(ec.traj)].states[size_t(ec.step - 1)], ec.pos, vin, int(c - lo));
        }
        net_forward(q.editor->value_spec, q.editor->value_params, vin, vz);
        for (int64_t c = lo; c < hi; ++c) {
          const auto& ec = cols.edits[size_t(c)];
          const int cur = trajs[size_t(ec.traj)].states[size_t(ec.step - 1)].values[size_t(ec.pos)];
          edit_lp[size_t(c)] += masked_value_logprob(vz.col(c - lo), cur, ec.to_value);
        }
      }
    });
    for (size_t c = 0; c < cols.edits.size(); ++c) out[size_t(cols.edits[c].traj)] += edit_lp[c];
  }

  if (!cols.stops.empty()) {
    std::vector<double> stop_lp(cols.stops.size());
    parallel_blocks(int64_t(cols.stops.size()), threads, [&](int64_t lo, int64_t hi) {
      MatrixXd in(in_w, hi - lo), y;
      NetCache cache;
      for (int64_t c = lo; c < hi; ++c) {
        const auto& sc = cols.stops[size_t(c)];
        write_input_column(trajs[size_t(sc.traj)].states[size_t(sc.state)], in, int(c - lo));
      }
      net_forward(q.stop->spec, q.stop->params, in, y, &cache);
      for (int64_t c = lo; c < hi; ++c) {
        const double z = cache.last_z()(0, c - lo);
        stop_lp[size_t(c)] = cols.stops[size_t(c)].is_stop ? y(0, c - lo) : log_sigmoid(-z);
      }
    });
    for (size_t c = 0; c < cols.stops.size(); ++c) out[size_t(cols.stops[c].traj)] += stop_lp[c];
  }
  return out;
}

double trajectory_logprob(const SamplerParams& q, const Trajectory& traj) {
  return trajectory_logprob_batch(q, std::span<const Trajectory>(&traj, 1))[0];
}

// ---------------------------------------------------------------------------
// SamplerGrads
// ---------------------------------------------------------------------------

SamplerGrads SamplerGrads::zeros_like(const SamplerParams& q) {
  SamplerGrads g;
  if (const auto* fac = std::get_if<FactorizedInit>(&q.q0)) {
    g.q0.emplace_back(fac->logits.size(), 0.0);
  } else {
    const auto& ar = std::get<AutoregressiveInit>(q.q0);
    for (const auto& p : ar.embed_params) g.q0.emplace_back(p.size(), 0.0);
    g.q0.emplace_back(ar.head_params.size(), 0.0);
  }
  if (q.editor) {
    g.editor_position.assign(q.editor->position_params.size(), 0.0);
    g.editor_value.assign(q.editor->value_params.size(), 0.0);
    g.stop.assign(q.stop->params.size(), 0.0);
  }
  return g;
}

namespace {
template <typename F>
void for_each_part(SamplerGrads& g, F&& f) {
  for (auto& part : g.q0) f(part);
  f(g.editor_position);
  f(g.editor_value);
  f(g.stop);
}
template <typename F>
void for_each_part2(SamplerGrads& g, const SamplerGrads& h, F&& f) {
  for (size_t i = 0; i < g.q0.size(); ++i) f(g.q0[i], h.q0[i]);
  f(g.editor_position, h.editor_position);
  f(g.editor_value, h.editor_value);
  f(g.stop, h.stop);
}
}  // namespace

void SamplerGrads::add_scaled(const SamplerGrads& other, double a) {
  for_each_part2(*this, other, [a](ParamVector& x, const ParamVector& y) {
    for (size_t i = 0; i < x.size(); ++i) x[i] += a * y[i];
  });
}
void SamplerGrads::scale(double a) {
  for_each_part(*this, [a](ParamVector& x) {
    for (double& v : x) v *= a;
  });
}
void SamplerGrads::set_zero() {
  for_each_part(*this, [](ParamVector& x) { std::fill(x.begin(), x.end(), 0.0); });
}
int64_t SamplerGrads::total_size() const {
  int64_t n = 0;
  for_each_part(const_cast<SamplerGrads&>(*this), [&n](ParamVector& x) { n += int64_t(x.size()); });
  return n;
}
double SamplerGrads::squared_norm() const {
  double s = 0.0;
  for_each_part(const_cast<SamplerGrads&>(*this), [&s](ParamVector& x) {
    for (double v : x) s += v * v;
  });
  return s;
}
double SamplerGrads::inf_norm() const {
  double s = 0.0;
  for_each_part(const_cast<SamplerGrads&>(*this), [&s](ParamVector& x) {
    for (double v : x) s = std::max(s, std::abs(v));
  });
  return s;
}
Eigen::VectorXd SamplerGrads::flattened() const {
  Eigen::VectorXd out(total_size());
  int64_t at = 0;
  for_each_part(const_cast<SamplerGrads&>(*this), [&](ParamVector& x) {
    for (double v : x) out[at++] = v;
  });
  return out;
}

void trajectory_logprob_grad(const SamplerParams& q, const Trajectory& traj,
                             double weight, SamplerGrads& grads) {
  const double w[1] = {weight};
  trajectory_grad_batch(q, std::span<const Trajectory>(&traj, 1),
                        std::span<const double>(w, 1), grads);
}

void trajectory_grad_batch(const SamplerParams& q, std::span<const Trajectory> trajs,
                           std::span<const double> weights, SamplerGrads& grads,
                           int threads) {
  q.validate();
  if (trajs.size() != weights.size())
    throw std::invalid_argument("trajectory_grad_batch: size mismatch");
  if (trajs.empty()) return;
  const TrajColumns cols = collect_columns(q, trajs);
  const int d = init_dim(q.q0);
  const int K = init_categories(q.q0);
  const int in_w = input_width(d, K);

  // q0 part.
  {
    std::vector<BitVector> x0s;
    x0s.reserve(trajs.size());
    for (const auto& t : trajs) x0s.push_back(t.states.front());
    init_logprob_grad_batch(q.q0, x0s, weights, grads.q0, threads);
  }

  // Editor part.
  if (!cols.edits.empty()) {
    const int64_t m = int64_t(cols.edits.size());
    BlockAccum pos_acc(m, int64_t(q.editor->position_params.size()));
    BlockAccum val_acc(m, int64_t(q.editor->value_params.size()));
    parallel_blocks(m, threads, [&](int64_t lo, int64_t hi) {
      MatrixXd in(in_w, hi - lo), y;
      NetCache cache;
      for (int64_t c = lo; c < hi; ++c) {
        const auto& ec = cols.edits[size_t(c)];
        write_input_column(trajs[size_t(ec.traj)].states[size_t(ec.step - 1)], in, int(c - lo));
      }
      net_forward(q.editor->position_spec, q.editor->position_params, in, y, &cache);
      MatrixXd upstream = MatrixXd::Zero(d, hi - lo);
      for (int64_t c = lo; c < hi; ++c)
        upstream(cols.edits[size_t(c)].pos, c - lo) = weights[size_t(cols.edits[size_t(c)].traj)];
      net_backward(q.editor->position_spec, q.editor->position_params, cache, upstream, pos_acc.at(lo));

      if (K > 2) {
        MatrixXd vin(in_w + d, hi - lo), vz;
        NetCache vcache;
        for (int64_t c = lo; c < hi; ++c) {
          const auto& ec = cols.edits[size_t(c)];
          value_net_input(trajs[size_t(ec.traj)].states[size_t(ec.step - 1)], ec.pos, vin, int(c - lo));
        }
        net_forward(q.editor->value_spec, q.editor->value_params, vin, vz, &vcache);
        MatrixXd vup(K, hi - lo);
        for (int64_t c = lo; c < hi; ++c) {
          const auto& ec = cols.edits[size_t(c)];
          const int cur = trajs[size_t(ec.traj)].states[size_t(ec.step - 1)].values[size_t(ec.pos)];
          const double w = weights[size_t(ec.traj)];
          VectorXd p = masked_value_probs(vz.col(c - lo), cur);
          for (int v = 0; v < K; ++v)
            vup(v, c - lo) = w * ((v == ec.to_value ? 1.0 : 0.0) - p[v]);
        }
        net_backward(q.editor->value_spec, q.editor->value_params, vcache, vup, val_acc.at(lo));
      }
    });
    pos_acc.reduce_into(grads.editor_position);
    if (K > 2) val_acc.reduce_into(grads.editor_value);
  }

  // Stop part: d log sigma(z) / dz = sigma(-z), d log sigma(-z) / dz = -sigma(z).
  if (!cols.stops.empty()) {
    const int64_t m = int64_t(cols.stops.size());
    BlockAccum stop_acc(m, int64_t(q.stop->params.size()));
    parallel_blocks(m, threads, [&](int64_t lo, int64_t hi) {
      MatrixXd in(in_w, hi - lo), y;
      NetCache cache;
      for (int64_t c = lo; c < hi; ++c) {
        const auto& sc = cols.stops[size_t(c)];
        write_input_column(trajs[size_t(sc.traj)].states[size_t(sc.state)], in, int(c - lo));
      }
      net_forward(q.stop->spec, q.stop->params, in, y, &cache);
      MatrixXd dz(1, hi - lo);
      for (int64_t c = lo; c < hi; ++c) {
        const auto& sc = cols.stops[size_t(c)];
        const double z = cache.last_z()(0, c - lo);
        const double w = weights[size_t(sc.traj)];
        dz(0, c - lo) = sc.is_stop ? w * std::exp(log_sigmoid(-z)) : -w * std::exp(log_sigmoid(z));
      }
      net_backward_preact(q.stop->spec, q.stop->params, cache, dz, stop_acc.at(lo));
    });
    stop_acc.reduce_into(grads.stop);
  }
}

// ---------------------------------------------------------------------------
// Enumeration oracles
// ---------------------------------------------------------------------------

namespace {

int64_t backward_tree_size(int d, int K, int T, int64_t cap) {
  const int64_t branch = int64_t(d) * (K - 1);
  int64_t total = 0, level = 1;
  for (int t = 0; t <= T; ++t) {
    total += level;
    if (total > cap) return total;
    if (t < T) {
      if (level > cap / std::max<int64_t>(branch, 1)) return cap + 1;
      level *= branch;
    }
  }
  return total;
}

}  // namespace

std::vector<Trajectory> enumerate_endpoint_trajectories(const SamplerParams& q,
                                                        const BitVector& x, int64_t cap) {
  q.validate();
  const int T = q.horizon();
  const int d = x.d;
  const int K = x.K;
  if (backward_tree_size(d, K, T, cap) > cap)
    throw std::invalid_argument("enumerate_endpoint_trajectories: too many trajectories; refusing");

  std::vector<Trajectory> out;
  // seq holds states backward from x; extending prepends a predecessor.
  std::vector<BitVector> seq{x};
  auto emit = [&](int t) {
    Trajectory traj;
    traj.states.assign(seq.rbegin(), seq.rend());
    traj.forced_stop = (t == T);
    out.push_back(std::move(traj));
  };
  std::function<void(int)> dfs = [&](int t) {
    emit(t);
    if (t == T) return;
    BitVector prev = seq.back();
    for (int i = 0; i < d; ++i) {
      const uint8_t cur = prev.values[size_t(i)];
      for (int v = 0; v < K; ++v) {
        if (v == cur) continue;
        prev.values[size_t(i)] = uint8_t(v);
        seq.push_back(prev);
        dfs(t + 1);
        seq.pop_back();
      }
      prev.values[size_t(i)] = cur;
    }
  };
  dfs(0);
  return out;
}

double marginal_logprob_exact(const SamplerParams& q, const BitVector& x, int64_t cap) {
  q.validate();
  if (!q.editor) return init_logprob(q.q0, x);
  const std::vector<Trajectory> trajs = enumerate_endpoint_trajectories(q, x, cap);
  const std::vector<double> lp = trajectory_logprob_batch(q, trajs);
  double m = -std::numeric_limits<double>::infinity();
  for (double v : lp) m = std::max(m, v);
  double acc = 0.0;
  for (double v : lp) acc += std::exp(v - m);
  return m + std::log(acc);
}

// ---------------------------------------------------------------------------
// Proposals
// ---------------------------------------------------------------------------

ProposalDraw inverse_proposal(const BitVector& x, double geo_p, int T, Rng& rng,
                              bool distinct_positions) {
  const int d = x.d;
  const int K = x.K;
  const int t_max = distinct_positions ? std::min(T, d) : T;
  const std::vector<double> logpmf = trunc_geometric_logpmf(geo_p, t_max);
  VectorXd pmf(t_max + 1);
  for (int t = 0; t <= t_max; ++t) pmf[t] = std::exp(logpmf[size_t(t)]);
  const int t = pick_from_probs(pmf, rng.uniform());

  ProposalDraw draw;
  draw.log_density = logpmf[size_t(t)];
  std::vector<BitVector> backward{x};
  std::vector<int> pool(size_t(d));
  for (int i = 0; i < d; ++i) pool[size_t(i)] = i;
  for (int k = 0; k < t; ++k) {
    int pos;
    if (distinct_positions) {
      const int j = k + int(rng.uniform_int(uint64_t(d - k)));
      std::swap(pool[size_t(k)], pool[size_t(j)]);
      pos = pool[size_t(k)];
      draw.log_density -= std::log(double(d - k));
    } else {
      pos = int(rng.uniform_int(uint64_t(d)));
      draw.log_density -= std::log(double(d));
    }
    BitVector prev = backward.back();
    if (K == 2) {
      prev.values[size_t(pos)] ^= 1;
    } else {
      const int cur = prev.values[size_t(pos)];
      const int v = (cur + 1 + int(rng.uniform_int(uint64_t(K - 1)))) % K;
      prev.values[size_t(pos)] = uint8_t(v);
      draw.log_density -= std::log(double(K - 1));
    }
    backward.push_back(std::move(prev));
  }
  draw.traj.states.assign(backward.rbegin(), backward.rend());
  draw.traj.forced_stop = (t == T);
  return draw;
}

std::vector<ProposalDraw> inverse_proposal_support(const BitVector& x, double geo_p,
                                                   int T, bool with_replacement,
                                                   int64_t cap) {
  const int d = x.d;
  const int K = x.K;
  const int t_max = with_replacement ? T : std::min(T, d);
  const std::vector<double> logpmf = trunc_geometric_logpmf(geo_p, t_max);

  std::vector<ProposalDraw> out;
  std::vector<BitVector> backward{x};
  std::vector<int> used;
  std::function<void(int, double)> dfs = [&](int t, double log_density) {
    {
      ProposalDraw draw;
      draw.traj.states.assign(backward.rbegin(), backward.rend());
      draw.traj.forced_stop = (t == T);
      draw.log_density = logpmf[size_t(t)] + log_density;
      out.push_back(std::move(draw));
      if (int64_t(out.size()) > cap)
        throw std::invalid_argument("inverse_proposal_support: support too large; refusing");
    }
    if (t == t_max) return;
    for (int pos = 0; pos < d; ++pos) {
      if (!with_replacement && std::find(used.begin(), used.end(), pos) != used.end()) continue;
      const double step_density =
          with_replacement ? -std::log(double(d)) : -std::log(double(d - t));
      BitVector prev = backward.back();
      const int cur = prev.values[size_t(pos)];
      for (int v = 0; v < K; ++v) {
        if (v == cur) continue;
        prev.values[size_t(pos)] = uint8_t(v);
        backward.push_back(prev);
        used.push_back(pos);
        dfs(t + 1, log_density + step_density - (K > 2 ? std::log(double(K - 1)) : 0.0));
        used.pop_back();
        backward.pop_back();
        prev.values[size_t(pos)] = uint8_t(cur);
      }
    }
  };
  dfs(0, 0.0);
  return out;
}

std::optional<ProposalDraw> edit_distance_proposal(const InitSampler& q0,
                                                   const BitVector& x, int T, Rng& rng) {
  auto [x0, lp0] = init_sample(q0, rng);
  std::vector<int> diff;
  for (int i = 0; i < x.d; ++i)
    if (x0.values[size_t(i)] != x.values[size_t(i)]) diff.push_back(i);
  const int t = int(diff.size());
  if (t > T) return std::nullopt;

  // Uniform order over the shortest path's coordinates.
  for (int i = t - 1; i > 0; --i)
    std::swap(diff[size_t(i)], diff[rng.uniform_int(uint64_t(i) + 1)]);

  ProposalDraw draw;
  draw.log_density = lp0 - std::lgamma(double(t) + 1.0);
  draw.traj.states.push_back(std::move(x0));
  for (int k = 0; k < t; ++k) {
    BitVector next = draw.traj.states.back();
    next.values[size_t(diff[size_t(k)])] = x.values[size_t(diff[size_t(k)])];
    draw.traj.states.push_back(std::move(next));
  }
  draw.traj.forced_stop = (t == T);
  return draw;
}

// ---------------------------------------------------------------------------
// SNIS gradient
// ---------------------------------------------------------------------------

SamplerGrads snis_weighted_grad(const SamplerParams& q,
                                std::span<const Trajectory> trajs,
                                std::span<const double> log_weights,
                                int threads, double* ess) {
  if (trajs.empty()) throw std::invalid_argument("snis_weighted_grad: no trajectories");
  if (trajs.size() != log_weights.size())
    throw std::invalid_argument("snis_weighted_grad: size mismatch");
  double m = -std::numeric_limits<double>::infinity();
  for (double lw : log_weights) m = std::max(m, lw);
  std::vector<double> w(trajs.size());
  double total = 0.0;
  for (size_t j = 0; j < w.size(); ++j) {
    w[j] = std::exp(log_weights[j] - m);
    total += w[j];
  }
  double sumsq = 0.0;
  for (auto& v : w) {
    v /= total;
    sumsq += v * v;
  }
  if (ess) *ess = 1.0 / sumsq;
  SamplerGrads grads = SamplerGrads::zeros_like(q);
  trajectory_grad_batch(q, trajs, w, grads, threads);
  return grads;
}

std::vector<ProposalDraw> draw_proposals(const SamplerParams& q, const BitVector& x,
                                         ProposalKind kind, int n_samples, double geo_p,
                                         Rng& rng, SnisReport* report, int retry_cap) {
  if (n_samples < 1) throw std::invalid_argument("draw_proposals: n_samples >= 1 required");
  std::vector<ProposalDraw> draws;
  draws.reserve(size_t(n_samples));
  int64_t rejected = 0, dropped = 0;
  for (int j = 0; j < n_samples; ++j) {
    if (kind == ProposalKind::inverse) {
      draws.push_back(inverse_proposal(x, geo_p, q.horizon(), rng));
      continue;
    }
    bool ok = false;
    for (int attempt = 0; attempt < retry_cap; ++attempt) {
      auto draw = edit_distance_proposal(q.q0, x, q.horizon(), rng);
      if (draw) {
        draws.push_back(std::move(*draw));
        ok = true;
        break;
      }
      ++rejected;
    }
    if (!ok) ++dropped;
  }
  if (draws.empty())
    throw std::runtime_error("draw_proposals: every edit_distance proposal was rejected at x=" +
                             x.to_string());
  if (report) {
    report->rejected_draws += rejected;
    report->dropped_slots += dropped;
  }
  return draws;
}

SamplerGrads snis_grad_log_marginal(const SamplerParams& q, const BitVector& x,
                                    ProposalKind kind, int n_samples, double geo_p,
                                    Rng& rng, SnisReport* report, int retry_cap,
                                    int threads) {
  q.validate();
  std::vector<ProposalDraw> draws =
      draw_proposals(q, x, kind, n_samples, geo_p, rng, report, retry_cap);

  std::vector<Trajectory> trajs;
  trajs.reserve(draws.size());
  for (auto& d : draws) trajs.push_back(std::move(d.traj));
  const std::vector<double> logq = trajectory_logprob_batch(q, trajs, threads);
  std::vector<double> lw(trajs.size());
  for (size_t j = 0; j < trajs.size(); ++j) lw[j] = logq[j] - draws[j].log_density;

  double ess = 0.0;
  SamplerGrads grads = snis_weighted_grad(q, trajs, lw, threads, &ess);
  if (report) report->ess = ess;
  return grads;
}

}  // namespace aloe
