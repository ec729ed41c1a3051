#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "omdpg/ccga.hpp"
#include "omdpg/common.hpp"
#include "omdpg/envs.hpp"
#include "omdpg/gqc.hpp"
#include "omdpg/numkit.hpp"
#include "omdpg/replay.hpp"

namespace omdpg::baselines {

enum class Sharing { NoPS, ParPS, FuPS };

// A variant is two independent switches plus a sharing regime. The flagship
// algorithm is simply both switches on; the ablations toggle one at a time,
// so every comparison isolates a single delta.
struct AlgoSpec {
  std::string name;
  bool omq_actor = false;   // marginal-value actor objective vs plain DPG
  bool gqc_critic = false;  // ensemble loss with the pessimism term vs twin TD
  Sharing sharing = Sharing::ParPS;
  int default_heads = 2;    // 5 whenever the ensemble critic loss is active
};

// Accepts: omdpg, matd3-nops, matd3-parps, matd3-fups, matd3-parps-omq,
// matd3-parps-gqc. Anything else is a config error.
AlgoSpec parse_algo(const std::string& name);

// Rewrites the group assignment for the sharing regime: NoPS gives every
// agent its own group, FuPS collapses to one, ParPS keeps the env grouping.
// The ordering is preserved.
envs::GroupSpec apply_sharing(const envs::GroupSpec& env_groups, Sharing s);

// Persistent per-run randomness for the update loop: one replay stream per
// head plus streams for the actor batch, the out-of-distribution prefix
// length, target smoothing noise, and order shuffling.
struct UpdateStreams {
  std::vector<RngStream> head_sample;
  RngStream actor_sample;
  RngStream ood;
  RngStream smooth;
  RngStream order;

  static UpdateStreams make(std::uint64_t run_seed, int heads);
};

struct UpdateLosses {
  double critic_true = 0.0;   // mean over heads
  double critic_pu = 0.0;     // mean over heads (zero for twin-TD variants)
  double actor = 0.0;
  double uncertainty = 0.0;   // mean target-head spread on the actor batch
};

// One full update: critic step(s), actor step, soft target updates. The
// OMDPG path and every ablation run through this single function; the
// AlgoSpec switches select the loss pieces.
//   gqc_critic on:  per-head independent batches, own-target bootstrap, plus
//                   the pessimism regression at (s, batch prefix, greedy
//                   completion from the target actors).
//   gqc_critic off: one shared batch, min over target heads bootstrap.
//   omq_actor on:   minimized marginal values along the ordering.
//   omq_actor off:  -min-head Q with each agent's slot re-evaluated and the
//                   other slots fixed at the batch actions.
UpdateLosses update_step(const AlgoSpec& algo, ccga::GroupedActors& actors,
                         gqc::CriticEnsemble& ensemble, replay::Buffer& buffer,
                         std::size_t batch_size,
                         const envs::ActionCodec& codec,
                         const gqc::PUConfig& pu, double gamma, double tau,
                         const std::vector<int>& ordering,
                         UpdateStreams& streams);

// The plain deterministic-policy objective used when omq_actor is off,
// exposed for direct testing. `completions` rows hold the batch actions.
ccga::ActorLossResult plain_actor_loss(
    const ccga::GroupedActors& actors, const gqc::CriticFn& critic,
    const envs::ActionCodec& codec, const Eigen::MatrixXd& states,
    const std::vector<envs::JointObservation>& obs,
    const Eigen::MatrixXd& batch_actions);

}  // namespace omdpg::baselines
