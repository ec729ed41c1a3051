#pragma once

#include <Eigen/Dense>
#include <vector>

#include "omdpg/common.hpp"
#include "omdpg/envs.hpp"
#include "omdpg/numkit.hpp"

namespace omdpg::gqc {

// Pessimism and target-smoothing knobs.
struct PUConfig {
  double beta = 0.5;       // uncertainty penalty strength
  double lambda_pu = 0.1;  // weight of the out-of-distribution loss term
  double sigma = 0.2;      // target smoothing noise scale
  double clip = 0.5;       // smoothing noise clip

  void validate() const;
};

// Centralized critic ensemble over (state, encoded joint action). Heads are
// independent networks; targets mirror the online heads.
struct CriticEnsemble {
  std::vector<numkit::MlpParams> online;
  std::vector<numkit::MlpParams> target;
  std::vector<numkit::OptState> opt;
  int state_dim = 0;
  int joint_action_dim = 0;

  int heads() const { return static_cast<int>(online.size()); }
  int input_dim() const { return state_dim + joint_action_dim; }
  void validate() const;

  static CriticEnsemble make(int c_k, int state_dim, int joint_action_dim,
                             const std::vector<int>& hidden, double lr,
                             std::uint64_t run_seed);
};

enum class Which { Online, Target };

// One scalar per head at a single (state, joint action encoding).
Eigen::VectorXd ensemble_q(const CriticEnsemble& e, const Eigen::VectorXd& s,
                           const Eigen::VectorXd& act_enc, Which which);

// Rows x heads over a batch.
Eigen::MatrixXd ensemble_q_batch(const CriticEnsemble& e,
                                 const Eigen::MatrixXd& states,
                                 const Eigen::MatrixXd& acts, Which which);

// Population standard deviation across heads (1/C_k normalization).
double uncertainty(const Eigen::VectorXd& q_heads);
// Per-row population std over a rows x heads matrix.
Eigen::VectorXd uncertainty_rows(const Eigen::MatrixXd& q_rows);

// Q evaluation surface consumed by the marginal-value and actor-loss code.
// Implemented by the MLP ensemble and by analytic stubs in tests.
class CriticFn {
 public:
  virtual ~CriticFn() = default;
  virtual int heads() const = 0;
  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;  // encoded joint action width
  // rows x heads
  virtual Eigen::MatrixXd values(const Eigen::MatrixXd& states,
                                 const Eigen::MatrixXd& acts) const = 0;
  // gradient of head[r]'s output wrt the action encoding, one row per sample
  virtual Eigen::MatrixXd action_grad(const Eigen::MatrixXd& states,
                                      const Eigen::MatrixXd& acts,
                                      const std::vector<int>& head) const = 0;
};

class EnsembleCritic : public CriticFn {
 public:
  EnsembleCritic(const CriticEnsemble& e, Which which)
      : e_(&e), which_(which) {}
  int heads() const override { return e_->heads(); }
  int state_dim() const override { return e_->state_dim; }
  int action_dim() const override { return e_->joint_action_dim; }
  Eigen::MatrixXd values(const Eigen::MatrixXd& states,
                         const Eigen::MatrixXd& acts) const override;
  Eigen::MatrixXd action_grad(const Eigen::MatrixXd& states,
                              const Eigen::MatrixXd& acts,
                              const std::vector<int>& head) const override;

 private:
  const CriticEnsemble* e_;
  Which which_;
};

// Adds truncated Gaussian noise per encoded action dim and clips back to the
// action box: [-1,1] for continuous slots, [0,1] for one-hot slots.
Eigen::MatrixXd smooth_encoded_actions(const Eigen::MatrixXd& greedy_enc,
                                       bool discrete, const PUConfig& pu,
                                       RngStream& rng);

// Bootstrapped regression target for one head: r + gamma * Q_tgt(s', a'),
// with terminal rows using the reward alone.
Eigen::VectorXd true_target(const CriticEnsemble& e, int head, double gamma,
                            const Eigen::MatrixXd& next_states,
                            const Eigen::MatrixXd& next_act_enc,
                            const Eigen::VectorXd& rewards,
                            const std::vector<bool>& done);

// Pessimistic target for one head at out-of-distribution joint actions
// (prefix + greedy completion, already encoded): Q_tgt_head - beta * U, the
// uncertainty taken across all target heads at the same input.
Eigen::VectorXd pu_target(const CriticEnsemble& e, int head, double beta,
                          const Eigen::MatrixXd& states,
                          const Eigen::MatrixXd& ood_act_enc);

struct CriticLoss {
  double loss = 0.0;
  double true_mse = 0.0;
  double pu_mse = 0.0;
  numkit::MlpGrads grads;
};

// Combined regression loss for one online head; targets are constants.
// loss = mse(Q(s,a), y_true) + lambda_pu * mse(Q(s_ood, a_ood), y_pu).
// Pass an empty OOD block (0 rows) to drop the second term.
CriticLoss gqc_loss(const CriticEnsemble& e, int head,
                    const Eigen::MatrixXd& states, const Eigen::MatrixXd& acts,
                    const Eigen::VectorXd& y_true,
                    const Eigen::MatrixXd& ood_states,
                    const Eigen::MatrixXd& ood_acts,
                    const Eigen::VectorXd& y_pu, double lambda_pu);

// Soft-update every target head toward its online head.
void update_targets(CriticEnsemble& e, double tau);

}  // namespace omdpg::gqc
