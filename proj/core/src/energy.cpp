#include "aloe/energy.hpp"

#include <cmath>
#include <stdexcept>

#include "aloe/threading.hpp"

namespace aloe {

using Eigen::MatrixXd;
using Eigen::VectorXd;

EnergyModel EnergyModel::make(int d, int K, const std::vector<int>& hidden, Rng& rng) {
  EnergyModel m;
  m.d = d;
  m.K = K;
  std::vector<int> sizes;
  sizes.push_back(input_width(d, K));
  for (int h : hidden) sizes.push_back(h);
  sizes.push_back(1);
  m.spec = DenseNetSpec::mlp(std::move(sizes));
  m.params = init_params(m.spec, rng);
  return m;
}

void EnergyModel::validate() const {
  spec.validate();
  if (spec.input_size() != input_width(d, K))
    throw std::invalid_argument("EnergyModel: input width does not match (d, K)");
  if (spec.output_size() != 1)
    throw std::invalid_argument("EnergyModel: scalar output required");
  check_dims(spec, params);
}

double energy(const EnergyModel& model, const BitVector& x) {
  if (x.d != model.d || x.K != model.K)
    throw std::invalid_argument("energy: configuration shape mismatch");
  return net_forward(model.spec, model.params, to_input_vector(x))(0);
}

void energy_batch(const EnergyModel& model, const MatrixXd& X, VectorXd& out,
                  NetCache* cache) {
  MatrixXd Y;
  net_forward(model.spec, model.params, X, Y, cache);
  out = Y.transpose().col(0);
}

VectorXd energies(const EnergyModel& model, std::span<const BitVector> xs, int threads) {
  VectorXd out(Eigen::Index(xs.size()));
  parallel_blocks(int64_t(xs.size()), threads, [&](int64_t lo, int64_t hi) {
    MatrixXd X;
    states_to_inputs(std::span<const BitVector>(xs.data() + lo, size_t(hi - lo)), X);
    VectorXd e;
    energy_batch(model, X, e);
    out.segment(lo, hi - lo) = e;
  });
  return out;
}

namespace {

uint64_t enumeration_size_or_throw(const EnergyModel& model) {
  const uint64_t n = num_states(model.d, model.K);
  if (n > kEnumerationCap)
    throw std::invalid_argument(
        "state space too large for exact enumeration (K^d > 2^20); refusing");
  return n;
}

}  // namespace

VectorXd all_state_energies(const EnergyModel& model, int threads) {
  const uint64_t n = enumeration_size_or_throw(model);
  VectorXd e(Eigen::Index(n));
  parallel_blocks(int64_t(n), threads, [&](int64_t lo, int64_t hi) {
    MatrixXd X(input_width(model.d, model.K), hi - lo);
    for (int64_t i = lo; i < hi; ++i) {
      const BitVector x = state_from_index(uint64_t(i), model.d, model.K);
      write_input_column(x, X, int(i - lo));
    }
    VectorXd block;
    energy_batch(model, X, block);
    e.segment(lo, hi - lo) = block;
  });
  return e;
}

double log_partition_exact(const EnergyModel& model, int threads) {
  model.validate();
  const VectorXd e = all_state_energies(model, threads);
  const double m = e.maxCoeff();
  // Streaming log-sum-exp with a fixed reduction order.
  double acc = 0.0;
  for (Eigen::Index i = 0; i < e.size(); ++i) acc += std::exp(e[i] - m);
  return m + std::log(acc);
}

std::vector<double> exact_distribution(const EnergyModel& model, int threads) {
  model.validate();
  const VectorXd e = all_state_energies(model, threads);
  const double m = e.maxCoeff();
  std::vector<double> p(size_t(e.size()));
  double acc = 0.0;
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    p[size_t(i)] = std::exp(e[i] - m);
    acc += p[size_t(i)];
  }
  for (double& v : p) v /= acc;
  return p;
}

ParamVector weighted_energy_gradient(const EnergyModel& model,
                                     std::span<const BitVector> xs,
                                     std::span<const double> weights,
                                     int threads) {
  if (xs.size() != weights.size())
    throw std::invalid_argument("weighted_energy_gradient: size mismatch");
  const int64_t n = int64_t(xs.size());
  const int64_t nblocks = (n + kBatchBlock - 1) / kBatchBlock;
  std::vector<ParamVector> partial(size_t(nblocks),
                                   ParamVector(size_t(param_count(model.spec)), 0.0));
  parallel_blocks(n, threads, [&](int64_t lo, int64_t hi) {
    MatrixXd X;
    states_to_inputs(std::span<const BitVector>(xs.data() + lo, size_t(hi - lo)), X);
    NetCache cache;
    MatrixXd Y;
    net_forward(model.spec, model.params, X, Y, &cache);
    MatrixXd upstream(1, hi - lo);
    for (int64_t i = lo; i < hi; ++i) upstream(0, i - lo) = weights[size_t(i)];
    net_backward(model.spec, model.params, cache, upstream, partial[size_t(lo / kBatchBlock)]);
  });
  ParamVector grad(size_t(param_count(model.spec)), 0.0);
  for (const auto& part : partial)
    for (size_t i = 0; i < grad.size(); ++i) grad[i] += part[i];
  return grad;
}

ParamVector mle_param_gradient(const EnergyModel& model,
                               std::span<const BitVector> positives,
                               std::span<const BitVector> negatives,
                               int threads) {
  if (positives.empty() || negatives.empty())
    throw std::invalid_argument("mle_param_gradient: empty batch");
  const std::vector<double> wp(positives.size(), 1.0 / double(positives.size()));
  const std::vector<double> wn(negatives.size(), -1.0 / double(negatives.size()));
  ParamVector grad = weighted_energy_gradient(model, positives, wp, threads);
  const ParamVector neg = weighted_energy_gradient(model, negatives, wn, threads);
  for (size_t i = 0; i < grad.size(); ++i) grad[i] += neg[i];
  return grad;
}

}  // namespace aloe
