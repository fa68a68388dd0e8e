#include "aloe/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace aloe {

using Eigen::MatrixXd;
using Eigen::VectorXd;

DenseNetSpec DenseNetSpec::mlp(std::vector<int> sizes, OutputTransform out) {
  DenseNetSpec spec;
  spec.layer_sizes = std::move(sizes);
  spec.hidden.assign(std::max<int>(0, spec.num_affine() - 1), Activation::elu);
  spec.output = out;
  spec.validate();
  return spec;
}

void DenseNetSpec::validate() const {
  if (layer_sizes.size() < 2)
    throw std::invalid_argument("DenseNetSpec: need at least 2 layer sizes");
  for (int s : layer_sizes)
    if (s <= 0) throw std::invalid_argument("DenseNetSpec: layer sizes must be positive");
  if (int(hidden.size()) != num_affine() - 1)
    throw std::invalid_argument("DenseNetSpec: one activation per hidden layer expected");
  if (output == OutputTransform::log_softmax && output_size() < 2)
    throw std::invalid_argument("DenseNetSpec: log_softmax needs output width >= 2");
  if (output == OutputTransform::log_sigmoid && output_size() != 1)
    throw std::invalid_argument("DenseNetSpec: log_sigmoid needs output width 1");
}

int64_t param_count(const DenseNetSpec& spec) {
  int64_t n = 0;
  for (int l = 0; l < spec.num_affine(); ++l)
    n += int64_t(spec.layer_sizes[l + 1]) * spec.layer_sizes[l] + spec.layer_sizes[l + 1];
  return n;
}

int64_t layer_offset(const DenseNetSpec& spec, int layer) {
  int64_t off = 0;
  for (int l = 0; l < layer; ++l)
    off += int64_t(spec.layer_sizes[l + 1]) * spec.layer_sizes[l] + spec.layer_sizes[l + 1];
  return off;
}

Eigen::Map<MatrixXd> weight_map(const DenseNetSpec& spec, ParamVector& p, int layer) {
  return {p.data() + layer_offset(spec, layer), spec.layer_sizes[layer + 1], spec.layer_sizes[layer]};
}
Eigen::Map<const MatrixXd> weight_map(const DenseNetSpec& spec, const ParamVector& p, int layer) {
  return {p.data() + layer_offset(spec, layer), spec.layer_sizes[layer + 1], spec.layer_sizes[layer]};
}
Eigen::Map<VectorXd> bias_map(const DenseNetSpec& spec, ParamVector& p, int layer) {
  const int64_t off = layer_offset(spec, layer) +
                      int64_t(spec.layer_sizes[layer + 1]) * spec.layer_sizes[layer];
  return {p.data() + off, spec.layer_sizes[layer + 1]};
}
Eigen::Map<const VectorXd> bias_map(const DenseNetSpec& spec, const ParamVector& p, int layer) {
  const int64_t off = layer_offset(spec, layer) +
                      int64_t(spec.layer_sizes[layer + 1]) * spec.layer_sizes[layer];
  return {p.data() + off, spec.layer_sizes[layer + 1]};
}

ParamVector init_params(const DenseNetSpec& spec, Rng& rng) {
  spec.validate();
  ParamVector p(param_count(spec), 0.0);
  for (int l = 0; l < spec.num_affine(); ++l) {
    const double fan_in = spec.layer_sizes[l];
    const double fan_out = spec.layer_sizes[l + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    auto W = weight_map(spec, p, l);
    for (int j = 0; j < W.cols(); ++j)
      for (int i = 0; i < W.rows(); ++i)
        W(i, j) = (2.0 * rng.uniform() - 1.0) * bound;
  }
  return p;
}

void check_dims(const DenseNetSpec& spec, const ParamVector& params) {
  if (int64_t(params.size()) != param_count(spec))
    throw std::invalid_argument("ParamVector length does not match DenseNetSpec");
}

double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
double elu_derivative(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

double log_sigmoid(double z) {
  return z > 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

namespace {

void apply_activation(Activation act, const MatrixXd& z, MatrixXd& a) {
  if (act == Activation::none) {
    a = z;
    return;
  }
  a = z.unaryExpr([](double v) { return elu(v); });
}

void apply_output_transform(OutputTransform t, const MatrixXd& z, MatrixXd& y) {
  switch (t) {
    case OutputTransform::identity:
      y = z;
      return;
    case OutputTransform::log_softmax: {
      y.resize(z.rows(), z.cols());
      for (int c = 0; c < z.cols(); ++c) {
        const double m = z.col(c).maxCoeff();
        const double lse = m + std::log((z.col(c).array() - m).exp().sum());
        y.col(c) = z.col(c).array() - lse;
      }
      return;
    }
    case OutputTransform::log_sigmoid:
      y = z.unaryExpr([](double v) { return log_sigmoid(v); });
      return;
  }
}

}  // namespace

void net_forward(const DenseNetSpec& spec, const ParamVector& params,
                 const MatrixXd& X, MatrixXd& Y, NetCache* cache) {
  check_dims(spec, params);
  if (X.rows() != spec.input_size())
    throw std::invalid_argument("net_forward: input width mismatch");

  const int L = spec.num_affine();
  NetCache local;
  NetCache& c = cache ? *cache : local;
  c.z.resize(L);
  c.a.resize(L + 1);
  c.a[0] = X;
  for (int l = 0; l < L; ++l) {
    c.z[l].resize(spec.layer_sizes[l + 1], X.cols());
    c.z[l].noalias() = weight_map(spec, params, l) * c.a[l];
    c.z[l].colwise() += bias_map(spec, params, l);
    if (l + 1 < L)
      apply_activation(spec.hidden[l], c.z[l], c.a[l + 1]);
    else
      c.a[l + 1] = c.z[l];
  }
  apply_output_transform(spec.output, c.z[L - 1], Y);
}

VectorXd net_forward(const DenseNetSpec& spec, const ParamVector& params,
                     const VectorXd& x) {
  MatrixXd Y;
  net_forward(spec, params, MatrixXd(x), Y);
  return Y.col(0);
}

void net_backward(const DenseNetSpec& spec, const ParamVector& params,
                  const NetCache& cache, const MatrixXd& upstream,
                  ParamVector& grad, MatrixXd* dX) {
  const int L = spec.num_affine();
  if (upstream.rows() != spec.output_size() || upstream.cols() != cache.a[0].cols())
    throw std::invalid_argument("net_backward: upstream shape mismatch");

  // Output transform Jacobian applied to the upstream first.
  MatrixXd dz;
  switch (spec.output) {
    case OutputTransform::identity:
      dz = upstream;
      break;
    case OutputTransform::log_softmax: {
      const MatrixXd& z = cache.z[L - 1];
      dz.resize(z.rows(), z.cols());
      for (int c = 0; c < z.cols(); ++c) {
        const double m = z.col(c).maxCoeff();
        Eigen::VectorXd p = (z.col(c).array() - m).exp();
        p /= p.sum();
        dz.col(c) = upstream.col(c) - p * upstream.col(c).sum();
      }
      break;
    }
    case OutputTransform::log_sigmoid: {
      const MatrixXd& z = cache.z[L - 1];
      dz = upstream.cwiseProduct(
          z.unaryExpr([](double v) { return std::exp(log_sigmoid(-v)); }));
      break;
    }
  }
  net_backward_preact(spec, params, cache, dz, grad, dX);
}

void net_backward_preact(const DenseNetSpec& spec, const ParamVector& params,
                         const NetCache& cache, const MatrixXd& dz_last,
                         ParamVector& grad, MatrixXd* dX) {
  check_dims(spec, params);
  if (int64_t(grad.size()) != param_count(spec))
    throw std::invalid_argument("net_backward: gradient buffer size mismatch");
  const int L = spec.num_affine();
  MatrixXd dz = dz_last;

  for (int l = L - 1; l >= 0; --l) {
    {
      Eigen::Map<MatrixXd> gW(grad.data() + layer_offset(spec, l),
                              spec.layer_sizes[l + 1], spec.layer_sizes[l]);
      gW.noalias() += dz * cache.a[l].transpose();
      Eigen::Map<VectorXd> gb(grad.data() + layer_offset(spec, l) +
                                  int64_t(spec.layer_sizes[l + 1]) * spec.layer_sizes[l],
                              spec.layer_sizes[l + 1]);
      gb.noalias() += dz.rowwise().sum();
    }
    if (l == 0) {
      if (dX) {
        dX->resize(spec.layer_sizes[0], dz.cols());
        dX->noalias() = weight_map(spec, params, 0).transpose() * dz;
      }
      break;
    }
    MatrixXd da(spec.layer_sizes[l], dz.cols());
    da.noalias() = weight_map(spec, params, l).transpose() * dz;
    if (spec.hidden[l - 1] == Activation::elu)
      dz = da.cwiseProduct(cache.z[l - 1].unaryExpr([](double v) { return elu_derivative(v); }));
    else
      dz = std::move(da);
  }
}

ParamVector net_backward(const DenseNetSpec& spec, const ParamVector& params,
                         const VectorXd& x, const VectorXd& upstream) {
  NetCache cache;
  MatrixXd Y;
  net_forward(spec, params, MatrixXd(x), Y, &cache);
  ParamVector grad(param_count(spec), 0.0);
  net_backward(spec, params, cache, MatrixXd(upstream), grad);
  return grad;
}

OptimizerState::OptimizerState(int64_t n, AdamConfig cfg) : hyper(cfg) {
  first_moment = VectorXd::Zero(n);
  second_moment = VectorXd::Zero(n);
}

void optimizer_step(OptimizerState& state, ParamVector& params, const ParamVector& grad) {
  const int64_t n = int64_t(params.size());
  if (state.first_moment.size() != n || int64_t(grad.size()) != n)
    throw std::invalid_argument("optimizer_step: size mismatch");
  for (int64_t i = 0; i < n; ++i)
    if (!std::isfinite(grad[i]))
      throw std::runtime_error("optimizer_step: non-finite gradient at index " + std::to_string(i));

  state.step_count += 1;
  const auto& h = state.hyper;
  const double bc1 = 1.0 - std::pow(h.beta1, double(state.step_count));
  const double bc2 = 1.0 - std::pow(h.beta2, double(state.step_count));
  for (int64_t i = 0; i < n; ++i) {
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = h.beta1 * m + (1.0 - h.beta1) * grad[i];
    v = h.beta2 * v + (1.0 - h.beta2) * grad[i] * grad[i];
    params[i] -= h.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + h.epsilon);
  }
}

double gradient_check(const std::function<double(const ParamVector&)>& loss,
                      const ParamVector& at, const ParamVector& analytic_grad,
                      double step, int64_t max_checked, Rng* rng) {
  if (analytic_grad.size() != at.size())
    throw std::invalid_argument("gradient_check: size mismatch");
  const int64_t n = int64_t(at.size());
  std::vector<int64_t> indices;
  if (max_checked <= 0 || max_checked >= n) {
    indices.resize(n);
    for (int64_t i = 0; i < n; ++i) indices[i] = i;
  } else {
    if (!rng) throw std::invalid_argument("gradient_check: rng required for subset checking");
    for (int64_t k = 0; k < max_checked; ++k) indices.push_back(int64_t(rng->uniform_int(n)));
  }
  ParamVector p = at;
  double worst = 0.0;
  for (int64_t i : indices) {
    const double keep = p[i];
    p[i] = keep + step;
    const double up = loss(p);
    p[i] = keep - step;
    const double down = loss(p);
    p[i] = keep;
    const double fd = (up - down) / (2.0 * step);
    const double rel = std::abs(analytic_grad[i] - fd) / std::max(1e-8, std::abs(fd));
    worst = std::max(worst, rel);
  }
  return worst;
}

Eigen::VectorXd softmax_probs(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd p = (logits.array() - m).exp();
  p /= p.sum();
  return p;
}

int pick_from_probs(const Eigen::VectorXd& probs, double u) {
  double c = 0.0;
  for (int b = 0; b + 1 < probs.size(); ++b) {
    c += probs[b];
    if (u < c) return b;
  }
  return int(probs.size()) - 1;
}

std::string to_string(Activation a) { return a == Activation::elu ? "elu" : "none"; }
std::string to_string(OutputTransform t) {
  switch (t) {
    case OutputTransform::identity: return "identity";
    case OutputTransform::log_softmax: return "log_softmax";
    case OutputTransform::log_sigmoid: return "log_sigmoid";
  }
  return "identity";
}

}  // namespace aloe
