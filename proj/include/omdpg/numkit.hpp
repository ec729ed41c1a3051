#pragma once

#include <Eigen/Dense>
#include <functional>
#include <utility>
#include <vector>

#include "omdpg/common.hpp"

namespace omdpg::numkit {

enum class Activation { Tanh, Relu, Identity };

struct Layer {
  Eigen::MatrixXd w;  // out x in
  Eigen::VectorXd b;  // out
  Activation act = Activation::Identity;
};

// Dense network parameters: the unit of sharing, copying, checkpointing and
// soft updates. Plain value type, freely copyable.
struct MlpParams {
  std::vector<Layer> layers;

  int input_dim() const;
  int output_dim() const;
  std::size_t param_count() const;
  void validate() const;  // chained dims and finiteness
};

// Weights uniform on +-sqrt(6/(fan_in+fan_out)), biases zero.
MlpParams make_mlp(const std::vector<int>& dims,
                   const std::vector<Activation>& acts, RngStream& rng);

// Per-layer pre- and post-activations retained for the backward pass.
// Rows are batch samples throughout.
struct ForwardCache {
  Eigen::MatrixXd input0;
  std::vector<Eigen::MatrixXd> preact;
  std::vector<Eigen::MatrixXd> postact;
  long rows() const { return input0.rows(); }
  int depth() const { return static_cast<int>(preact.size()); }
};

struct MlpGrads {
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;

  static MlpGrads zeros_like(const MlpParams& p);
  void add_scaled(const MlpGrads& other, double scale);
  bool all_finite() const;
};

// Batched forward; pass a cache to enable backward.
Eigen::MatrixXd forward(const MlpParams& p, const Eigen::MatrixXd& input,
                        ForwardCache* cache = nullptr);
Eigen::VectorXd forward1(const MlpParams& p, const Eigen::VectorXd& input,
                         ForwardCache* cache = nullptr);

// Reverse-mode pass. grad_out rows align with the cached batch rows; returns
// the gradient wrt the input batch and, when `grads` is non-null, accumulates
// parameter gradients into it.
Eigen::MatrixXd backward(const MlpParams& p, const ForwardCache& cache,
                         const Eigen::MatrixXd& grad_out,
                         MlpGrads* grads = nullptr);

// Adaptive moment estimation with bias correction.
struct OptState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Eigen::VectorXd> mb, vb;

  static OptState for_params(const MlpParams& p, double lr);
};

// One optimizer step in place. Non-finite gradients are rejected with a
// NumericError naming the offending layer.
void opt_step(OptState& opt, MlpParams& p, const MlpGrads& g);

// target <- (1 - tau) * target + tau * online, elementwise.
void soft_update(MlpParams& target, const MlpParams& online, double tau);

Eigen::VectorXd flatten(const MlpParams& p);
void unflatten(const Eigen::VectorXd& flat, MlpParams& p);
Eigen::VectorXd flatten_grads(const MlpGrads& g);

// Scalar objective with analytic gradient on a flat parameter vector.
using ValueGrad =
    std::function<std::pair<double, Eigen::VectorXd>(const Eigen::VectorXd&)>;

// Max over coordinates of |analytic - central difference| scaled by
// max(1, |analytic|). Throws NumericError on non-finite evaluations.
double fd_gradcheck(const ValueGrad& f, const Eigen::VectorXd& point, double h);

}  // namespace omdpg::numkit
