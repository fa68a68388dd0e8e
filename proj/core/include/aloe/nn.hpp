#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "aloe/rng.hpp"

namespace aloe {

enum class Activation { elu, none };
enum class OutputTransform { identity, log_softmax, log_sigmoid };

// Static description of a fully connected net. layer_sizes includes the
// input width; hidden[l] is the activation applied after affine layer l
// (the last affine layer gets no activation, only output transform).
struct DenseNetSpec {
  std::vector<int> layer_sizes;
  std::vector<Activation> hidden;
  OutputTransform output = OutputTransform::identity;

  int num_affine() const { return int(layer_sizes.size()) - 1; }
  int input_size() const { return layer_sizes.front(); }
  int output_size() const { return layer_sizes.back(); }

  // All-ELU hidden layers, which is what every model in this repo uses.
  static DenseNetSpec mlp(std::vector<int> sizes,
                          OutputTransform out = OutputTransform::identity);

  void validate() const;
  bool operator==(const DenseNetSpec&) const = default;
};

// Flat 64-bit parameter storage. Layout per affine layer: weight matrix
// (column-major, rows = out, cols = in) followed by the bias vector.
using ParamVector = std::vector<double>;

int64_t param_count(const DenseNetSpec& spec);
int64_t layer_offset(const DenseNetSpec& spec, int layer);

Eigen::Map<Eigen::MatrixXd> weight_map(const DenseNetSpec& spec, ParamVector& p, int layer);
Eigen::Map<const Eigen::MatrixXd> weight_map(const DenseNetSpec& spec, const ParamVector& p, int layer);
Eigen::Map<Eigen::VectorXd> bias_map(const DenseNetSpec& spec, ParamVector& p, int layer);
Eigen::Map<const Eigen::VectorXd> bias_map(const DenseNetSpec& spec, const ParamVector& p, int layer);

// Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases.
ParamVector init_params(const DenseNetSpec& spec, Rng& rng);

void check_dims(const DenseNetSpec& spec, const ParamVector& params);

// Activations and pre-activations stored by a forward pass for reuse in the
// corresponding backward pass. a[0] is the input batch.
struct NetCache {
  std::vector<Eigen::MatrixXd> z;
  std::vector<Eigen::MatrixXd> a;
  const Eigen::MatrixXd& last_z() const { return z.back(); }
};

// Batched forward: X is input_size x B, Y becomes output_size x B.
void net_forward(const DenseNetSpec& spec, const ParamVector& params,
                 const Eigen::MatrixXd& X, Eigen::MatrixXd& Y,
                 NetCache* cache = nullptr);
Eigen::VectorXd net_forward(const DenseNetSpec& spec, const ParamVector& params,
                            const Eigen::VectorXd& x);

// Accumulates d(sum_b upstream_b . output_b)/dparams into grad (+=), given
// the cache of the forward pass that produced the outputs. Optionally also
// produces the gradient with respect to the input batch.
void net_backward(const DenseNetSpec& spec, const ParamVector& params,
                  const NetCache& cache, const Eigen::MatrixXd& upstream,
                  ParamVector& grad, Eigen::MatrixXd* dX = nullptr);
ParamVector net_backward(const DenseNetSpec& spec, const ParamVector& params,
                         const Eigen::VectorXd& x, const Eigen::VectorXd& upstream);

// Backward pass entered at the last pre-activation (the output transform
// Jacobian is the caller's responsibility).
void net_backward_preact(const DenseNetSpec& spec, const ParamVector& params,
                         const NetCache& cache, const Eigen::MatrixXd& dz_last,
                         ParamVector& grad, Eigen::MatrixXd* dX = nullptr);

// Shared categorical helpers: max-subtracted softmax and inverse-CDF pick.
// Every sampling path uses these two so that batched and single-instance
// code make bit-identical choices.
Eigen::VectorXd softmax_probs(const Eigen::VectorXd& logits);
int pick_from_probs(const Eigen::VectorXd& probs, double u);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  int64_t step_count = 0;
  AdamConfig hyper;

  OptimizerState() = default;
  explicit OptimizerState(int64_t n, AdamConfig cfg = {});
};

// One Adam step in the descent direction of grad. Throws on non-finite
// gradient entries, naming the offending index.
void optimizer_step(OptimizerState& state, ParamVector& params, const ParamVector& grad);

// Max over checked parameters of |analytic - central difference| relative
// error. max_checked = 0 checks every parameter; otherwise a random subset
// of that size is drawn from rng (required when max_checked > 0).
double gradient_check(const std::function<double(const ParamVector&)>& loss,
                      const ParamVector& at, const ParamVector& analytic_grad,
                      double step = 1e-5, int64_t max_checked = 0, Rng* rng = nullptr);

double elu(double x);
double elu_derivative(double x);
double log_sigmoid(double z);

std::string to_string(Activation a);
std::string to_string(OutputTransform t);

}  // namespace aloe
