#include "omdpg/gqc.hpp"

#include <cmath>

namespace omdpg::gqc {

void PUConfig::validate() const {
  if (!(beta >= 0.0) || !std::isfinite(beta))
    throw ConfigError("beta must be finite and >= 0");
  if (!(lambda_pu >= 0.0) || !std::isfinite(lambda_pu))
    throw ConfigError("lambda_pu must be finite and >= 0");
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw ConfigError("smoothing sigma must be finite and > 0");
  if (!(clip > 0.0) || !std::isfinite(clip))
    throw ConfigError("smoothing clip must be finite and > 0");
}

void CriticEnsemble::validate() const {
  if (heads() < 2) throw ConfigError("ensemble needs at least two heads");
  if (target.size() != online.size())
    throw ShapeError("online/target head count mismatch");
  for (int c = 0; c < heads(); ++c) {
    online[c].validate();
    target[c].validate();
    if (online[c].input_dim() != input_dim() || online[c].output_dim() != 1)
      throw ShapeError("head shape does not match ensemble dims");
    if (target[c].input_dim() != online[c].input_dim())
      throw ShapeError("online/target shape mismatch");
  }
}

CriticEnsemble CriticEnsemble::make(int c_k, int state_dim,
                                    int joint_action_dim,
                                    const std::vector<int>& hidden, double lr,
                                    std::uint64_t run_seed) {
  if (c_k < 2) throw ConfigError("ensemble needs at least two heads");
  CriticEnsemble e;
  e.state_dim = state_dim;
  e.joint_action_dim = joint_action_dim;
  std::vector<int> dims = {state_dim + joint_action_dim};
  std::vector<numkit::Activation> acts;
  for (int h : hidden) {
    dims.push_back(h);
    acts.push_back(numkit::Activation::Relu);
  }
  dims.push_back(1);
  acts.push_back(numkit::Activation::Identity);
  for (int c = 0; c < c_k; ++c) {
    RngStream rng = RngStream::named(run_seed, "init/critic", c);
    e.online.push_back(numkit::make_mlp(dims, acts, rng));
    e.target.push_back(e.online.back());
    e.opt.push_back(numkit::OptState::for_params(e.online.back(), lr));
  }
  return e;
}

namespace {
Eigen::MatrixXd join_input(const Eigen::MatrixXd& states,
                           const Eigen::MatrixXd& acts) {
  if (states.rows() != acts.rows())
    throw ShapeError("state/action batch row mismatch");
  Eigen::MatrixXd in(states.rows(), states.cols() + acts.cols());
  in << states, acts;
  return in;
}

const numkit::MlpParams& pick_head(const CriticEnsemble& e, int head,
                                   Which which) {
  if (head < 0 || head >= e.heads()) throw ShapeError("head index out of range");
  return which == Which::Online ? e.online[head] : e.target[head];
}
}  // namespace

Eigen::MatrixXd ensemble_q_batch(const CriticEnsemble& e,
                                 const Eigen::MatrixXd& states,
                                 const Eigen::MatrixXd& acts, Which which) {
  if (states.cols() != e.state_dim || acts.cols() != e.joint_action_dim)
    throw ShapeError("ensemble input width mismatch");
  Eigen::MatrixXd in = join_input(states, acts);
  Eigen::MatrixXd out(states.rows(), e.heads());
  for (int c = 0; c < e.heads(); ++c)
    out.col(c) = numkit::forward(pick_head(e, c, which), in);
  return out;
}

Eigen::VectorXd ensemble_q(const CriticEnsemble& e, const Eigen::VectorXd& s,
                           const Eigen::VectorXd& act_enc, Which which) {
  return ensemble_q_batch(e, s.transpose(), act_enc.transpose(), which)
      .row(0)
      .transpose();
}

double uncertainty(const Eigen::VectorXd& q_heads) {
  if (q_heads.size() < 2)
    throw ConfigError("uncertainty needs at least two head values");
  double mean = q_heads.mean();
  return std::sqrt((q_heads.array() - mean).square().sum() /
                   static_cast<double>(q_heads.size()));
}

Eigen::VectorXd uncertainty_rows(const Eigen::MatrixXd& q_rows) {
  if (q_rows.cols() < 2)
    throw ConfigError("uncertainty needs at least two head values");
  Eigen::VectorXd mean = q_rows.rowwise().mean();
  Eigen::ArrayXXd centered = q_rows.array().colwise() - mean.array();
  return (centered.square().rowwise().sum() /
          static_cast<double>(q_rows.cols()))
      .sqrt()
      .matrix();
}

Eigen::MatrixXd EnsembleCritic::values(const Eigen::MatrixXd& states,
                                       const Eigen::MatrixXd& acts) const {
  return ensemble_q_batch(*e_, states, acts, which_);
}

Eigen::MatrixXd EnsembleCritic::action_grad(
    const Eigen::MatrixXd& states, const Eigen::MatrixXd& acts,
    const std::vector<int>& head) const {
  if (static_cast<long>(head.size()) != states.rows())
    throw ShapeError("one head index per row required");
  for (int h : head)
    if (h < 0 || h >= e_->heads()) throw ShapeError("head index out of range");
  Eigen::MatrixXd grads = Eigen::MatrixXd::Zero(acts.rows(), acts.cols());
  // group rows by head so each head does one batched backward
  for (int c = 0; c < e_->heads(); ++c) {
    std::vector<long> rows;
    for (long r = 0; r < states.rows(); ++r)
      if (head[r] == c) rows.push_back(r);
    if (rows.empty()) continue;
    Eigen::MatrixXd sub(rows.size(), states.cols() + acts.cols());
    for (std::size_t k = 0; k < rows.size(); ++k)
      sub.row(k) << states.row(rows[k]), acts.row(rows[k]);
    numkit::ForwardCache cache;
    const numkit::MlpParams& net = pick_head(*e_, c, which_);
    numkit::forward(net, sub, &cache);
    Eigen::MatrixXd go = Eigen::MatrixXd::Ones(rows.size(), 1);
    Eigen::MatrixXd gin = numkit::backward(net, cache, go, nullptr);
    for (std::size_t k = 0; k < rows.size(); ++k)
      grads.row(rows[k]) = gin.row(k).tail(acts.cols());
  }
  return grads;
}

Eigen::MatrixXd smooth_encoded_actions(const Eigen::MatrixXd& greedy_enc,
                                       bool discrete, const PUConfig& pu,
                                       RngStream& rng) {
  pu.validate();
  double lo = discrete ? 0.0 : -1.0;
  Eigen::MatrixXd out = greedy_enc;
  for (long r = 0; r < out.rows(); ++r)
    for (long c = 0; c < out.cols(); ++c) {
      double v = out(r, c) + rng.clipped_normal(pu.sigma, pu.clip);
      out(r, c) = std::min(1.0, std::max(lo, v));
    }
  return out;
}

Eigen::VectorXd true_target(const CriticEnsemble& e, int head, double gamma,
                            const Eigen::MatrixXd& next_states,
                            const Eigen::MatrixXd& next_act_enc,
                            const Eigen::VectorXd& rewards,
                            const std::vector<bool>& done) {
  if (gamma < 0.0 || gamma > 1.0 || !std::isfinite(gamma))
    throw ConfigError("gamma must lie in [0, 1]");
  if (rewards.size() != next_states.rows() ||
      static_cast<long>(done.size()) != next_states.rows())
    throw ShapeError("target batch row mismatch");
  Eigen::MatrixXd in = join_input(next_states, next_act_enc);
  Eigen::MatrixXd q = numkit::forward(pick_head(e, head, Which::Target), in);
  Eigen::VectorXd y = rewards;
  for (long r = 0; r < y.size(); ++r)
    if (!done[r]) y(r) += gamma * q(r, 0);
  return y;
}

Eigen::VectorXd pu_target(const CriticEnsemble& e, int head, double beta,
                          const Eigen::MatrixXd& states,
                          const Eigen::MatrixXd& ood_act_enc) {
  if (beta < 0.0 || !std::isfinite(beta))
    throw ConfigError("beta must be finite and >= 0");
  Eigen::MatrixXd q = ensemble_q_batch(e, states, ood_act_enc, Which::Target);
  Eigen::VectorXd u = uncertainty_rows(q);
  if (head < 0 || head >= e.heads()) throw ShapeError("head index out of range");
  return q.col(head) - beta * u;
}

CriticLoss gqc_loss(const CriticEnsemble& e, int head,
                    const Eigen::MatrixXd& states, const Eigen::MatrixXd& acts,
                    const Eigen::VectorXd& y_true,
                    const Eigen::MatrixXd& ood_states,
                    const Eigen::MatrixXd& ood_acts,
                    const Eigen::VectorXd& y_pu, double lambda_pu) {
  if (lambda_pu < 0.0 || !std::isfinite(lambda_pu))
    throw ConfigError("lambda_pu must be finite and >= 0");
  if (y_true.size() != states.rows())
    throw ShapeError("true-target length mismatch");
  if (y_pu.size() != ood_states.rows())
    throw ShapeError("pu-target length mismatch");

  const numkit::MlpParams& net = pick_head(e, head, Which::Online);
  CriticLoss out;
  out.grads = numkit::MlpGrads::zeros_like(net);

  {
    numkit::ForwardCache cache;
    Eigen::MatrixXd q = numkit::forward(net, join_input(states, acts), &cache);
    Eigen::VectorXd err = q.col(0) - y_true;
    double b = static_cast<double>(states.rows());
    out.true_mse = err.squaredNorm() / b;
    Eigen::MatrixXd go = (2.0 / b) * err;
    numkit::backward(net, cache, go, &out.grads);
  }
  if (ood_states.rows() > 0 && lambda_pu > 0.0) {
    numkit::ForwardCache cache;
    Eigen::MatrixXd q =
        numkit::forward(net, join_input(ood_states, ood_acts), &cache);
    Eigen::VectorXd err = q.col(0) - y_pu;
    double b = static_cast<double>(ood_states.rows());
    out.pu_mse = err.squaredNorm() / b;
    Eigen::MatrixXd go = (2.0 * lambda_pu / b) * err;
    numkit::backward(net, cache, go, &out.grads);
  } else if (ood_states.rows() > 0) {
    Eigen::MatrixXd q =
        numkit::forward(net, join_input(ood_states, ood_acts), nullptr);
    out.pu_mse =
        (q.col(0) - y_pu).squaredNorm() / static_cast<double>(ood_states.rows());
  }
  out.loss = out.true_mse + lambda_pu * out.pu_mse;
  if (!std::isfinite(out.loss) || !out.grads.all_finite())
    throw NumericError("non-finite critic loss; head " + std::to_string(head));
  return out;
}

void update_targets(CriticEnsemble& e, double tau) {
  for (int c = 0; c < e.heads(); ++c)
    numkit::soft_update(e.target[c], e.online[c], tau);
}

}  // namespace omdpg::gqc
