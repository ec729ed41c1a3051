#pragma once

#include <Eigen/Dense>
#include <vector>

#include "omdpg/common.hpp"
#include "omdpg/envs.hpp"
#include "omdpg/gqc.hpp"
#include "omdpg/numkit.hpp"

namespace omdpg::ccga {

// Deterministic actors partitioned into parameter groups. One parameter set
// per group; every member agent of a group evaluates that same storage.
// K = n_agents is fully private, K = 1 is fully shared.
struct GroupedActors {
  envs::GroupSpec spec;
  bool discrete = false;
  int obs_dim = 0;
  int action_dim = 0;      // network output width: m logits or action dims
  double expl_sigma = 0.1; // exploration noise scale
  double expl_clip = 0.5;  // exploration noise truncation
  double st_temp = 1.0;    // relaxed one-hot temperature (training only)
  std::vector<numkit::MlpParams> nets;    // one per group
  std::vector<numkit::MlpParams> targets;
  std::vector<numkit::OptState> opt;

  int n_groups() const { return static_cast<int>(nets.size()); }
  const numkit::MlpParams& net_for(int agent, gqc::Which which) const;
  void validate() const;

  // Tanh hidden stacks. Continuous actors end in tanh (actions live in
  // [-1,1]); discrete actors emit raw logits. One init stream per group.
  static GroupedActors make(const envs::GroupSpec& spec, bool discrete,
                            int obs_dim, int action_dim,
                            const std::vector<int>& hidden, double lr,
                            std::uint64_t run_seed);
};

enum class Mode { Greedy, Explore };

// Evaluate every agent's policy at its observation. Greedy is deterministic:
// tanh output as-is, or argmax over logits. Explore adds truncated Gaussian
// noise and re-clips to [-1,1] (continuous) or samples the softmax of the
// logits (discrete). rng may be null in greedy mode.
envs::JointAction act(const GroupedActors& actors,
                      const envs::JointObservation& obs, Mode mode,
                      gqc::Which which, RngStream* rng = nullptr);

// Greedy tail of the sequential decomposition: actions for the agents at
// ordering positions covered..n-1, in ordering order.
struct GreedyCompletion {
  std::vector<int> agents;                 // ordering tail, position order
  std::vector<Eigen::VectorXd> encoded;    // critic-facing slot per agent
};

GreedyCompletion greedy_completion(const GroupedActors& actors,
                                   const envs::JointObservation& obs,
                                   const std::vector<int>& ordering,
                                   int covered, gqc::Which which,
                                   const envs::ActionCodec& codec);

// Per-head marginal value of agent-at-position-pos's action: the Q difference
// between the joint encoding with that action present and with it replaced by
// the no-op, prefix and completion identical in both.
struct OmqValue {
  Eigen::VectorXd phi;  // one entry per critic head
  int agent = -1;
  GreedyCompletion completion;
};

// `joint` supplies actions for ordering positions 0..pos; `completion`
// supplies positions pos+1..n-1 (as produced with covered = pos + 1).
OmqValue omq(const gqc::CriticFn& critic, const envs::ActionCodec& codec,
             const Eigen::VectorXd& s, const envs::JointAction& joint,
             const std::vector<int>& ordering, int pos,
             const GreedyCompletion& completion);

// Batched greedy joint-action encodings, one row per observation set. Used
// for bootstrap actions (target actors) and completion slots.
Eigen::MatrixXd greedy_joint_encoded(const GroupedActors& actors,
                                     const std::vector<envs::JointObservation>& obs,
                                     const envs::ActionCodec& codec,
                                     gqc::Which which);

struct ActorLossResult {
  double loss = 0.0;
  std::vector<numkit::MlpGrads> grads;  // one per group, member-accumulated
};

// loss = -mean over batch rows and ordering positions of the min-across-heads
// marginal value, with prefix actions and the position's own action produced
// by the online actors (differentiable; discrete slots use the relaxed
// one-hot softmax(logits / st_temp)) and completion slots held constant at
// the online greedy actions. Gradients reach a group from all its members.
// `completions` (B x joint_dim greedy encodings) supplies the constant slots
// explicitly; null recomputes them from the online actors, which gives the
// same values. Passing them matters when differentiating numerically: the
// objective treats completions as stop-gradients, so a finite-difference
// probe must hold them fixed while the parameters move.
ActorLossResult actor_loss(const GroupedActors& actors,
                           const gqc::CriticFn& critic,
                           const envs::ActionCodec& codec,
                           const Eigen::MatrixXd& states,
                           const std::vector<envs::JointObservation>& obs,
                           const std::vector<int>& ordering,
                           const Eigen::MatrixXd* completions = nullptr);

// fixed: the group spec's ordering verbatim. shuffled: seeded uniform draw.
std::vector<int> sequential_order(const envs::GroupSpec& spec, bool shuffled,
                                  RngStream* rng);

// Soft-update every group's target net toward its online net.
void update_actor_targets(GroupedActors& actors, double tau);

}  // namespace omdpg::ccga
