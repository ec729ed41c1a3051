#include "omdpg/baselines.hpp"

#include <cmath>
#include <numeric>

namespace omdpg::baselines {

AlgoSpec parse_algo(const std::string& name) {
  AlgoSpec a;
  a.name = name;
  if (name == "omdpg") {
    a.omq_actor = true;
    a.gqc_critic = true;
    a.sharing = Sharing::ParPS;
  } else if (name == "matd3-nops") {
    a.sharing = Sharing::NoPS;
  } else if (name == "matd3-parps") {
    a.sharing = Sharing::ParPS;
  } else if (name == "matd3-fups") {
    a.sharing = Sharing::FuPS;
  } else if (name == "matd3-parps-omq") {
    a.omq_actor = true;
    a.sharing = Sharing::ParPS;
  } else if (name == "matd3-parps-gqc") {
    a.gqc_critic = true;
    a.sharing = Sharing::ParPS;
  } else {
    throw ConfigError("unknown algorithm variant: " + name);
  }
  a.default_heads = a.gqc_critic ? 5 : 2;
  return a;
}

envs::GroupSpec apply_sharing(const envs::GroupSpec& env_groups, Sharing s) {
  envs::GroupSpec out = env_groups;
  switch (s) {
    case Sharing::NoPS:
      out.assignment.resize(env_groups.n_agents);
      std::iota(out.assignment.begin(), out.assignment.end(), 0);
      break;
    case Sharing::FuPS:
      out.assignment.assign(env_groups.n_agents, 0);
      break;
    case Sharing::ParPS:
      break;
  }
  out.validate();
  return out;
}

UpdateStreams UpdateStreams::make(std::uint64_t run_seed, int heads) {
  std::vector<RngStream> hs;
  for (int h = 0; h < heads; ++h)
    hs.push_back(RngStream::named(run_seed, "update/head_sample", h));
  return UpdateStreams{std::move(hs),
                       RngStream::named(run_seed, "update/actor_sample"),
                       RngStream::named(run_seed, "update/ood"),
                       RngStream::named(run_seed, "update/smooth"),
                       RngStream::named(run_seed, "update/order")};
}

namespace {

struct BatchMats {
  Eigen::MatrixXd states, next_states, actions;
  Eigen::VectorXd rewards;
  std::vector<bool> done;
  std::vector<envs::JointObservation> obs, next_obs;
};

BatchMats to_mats(const std::vector<replay::Transition>& batch,
                  const envs::ActionCodec& codec) {
  BatchMats m;
  long b = static_cast<long>(batch.size());
  m.states.resize(b, batch[0].state.size());
  m.next_states.resize(b, batch[0].next_state.size());
  m.actions.resize(b, codec.joint_dim());
  m.rewards.resize(b);
  m.done.resize(b);
  m.obs.reserve(b);
  m.next_obs.reserve(b);
  for (long r = 0; r < b; ++r) {
    const auto& t = batch[r];
    m.states.row(r) = t.state.transpose();
    m.next_states.row(r) = t.next_state.transpose();
    m.actions.row(r) = codec.encode_joint(t.action).transpose();
    m.rewards(r) = t.reward;
    m.done[r] = t.done;
    m.obs.push_back(t.obs);
    m.next_obs.push_back(t.next_obs);
  }
  return m;
}

// Smoothed bootstrap actions at the next states, from the target actors.
Eigen::MatrixXd smoothed_next_actions(const ccga::GroupedActors& actors,
                                      const BatchMats& m,
                                      const envs::ActionCodec& codec,
                                      const gqc::PUConfig& pu,
                                      RngStream& noise) {
  Eigen::MatrixXd next_enc = ccga::greedy_joint_encoded(
      actors, m.next_obs, codec, gqc::Which::Target);
  return gqc::smooth_encoded_actions(next_enc, codec.discrete, pu, noise);
}

}  // namespace

ccga::ActorLossResult plain_actor_loss(
    const ccga::GroupedActors& actors, const gqc::CriticFn& critic,
    const envs::ActionCodec& codec, const Eigen::MatrixXd& states,
    const std::vector<envs::JointObservation>& obs,
    const Eigen::MatrixXd& batch_actions) {
  const int n = actors.spec.n_agents;
  const long b = states.rows();
  const int slot = codec.slot_dim;
  if (static_cast<long>(obs.size()) != b)
    throw ShapeError("one observation set per state row required");
  if (batch_actions.rows() != b || batch_actions.cols() != codec.joint_dim())
    throw ShapeError("batch actions must be batch x joint_dim");
  if (b == 0) throw ConfigError("empty actor batch");

  std::vector<numkit::ForwardCache> cache(n);
  std::vector<Eigen::MatrixXd> enc(n);
  for (int j = 0; j < n; ++j) {
    Eigen::MatrixXd x(b, actors.obs_dim);
    for (long r = 0; r < b; ++r) {
      if (obs[r][j].size() != actors.obs_dim)
        throw ShapeError("observation width mismatch");
      x.row(r) = obs[r][j].transpose();
    }
    Eigen::MatrixXd raw =
        numkit::forward(actors.net_for(j, gqc::Which::Online), x, &cache[j]);
    if (actors.discrete) {
      enc[j].resize(b, slot);
      for (long r = 0; r < b; ++r) {
        Eigen::ArrayXd z = raw.row(r).transpose().array();
        z = (z - z.maxCoeff()) / actors.st_temp;
        Eigen::ArrayXd e = z.exp();
        enc[j].row(r) = (e / e.sum()).matrix().transpose();
      }
    } else {
      enc[j] = raw;
    }
  }

  ccga::ActorLossResult out;
  for (int g = 0; g < actors.n_groups(); ++g)
    out.grads.push_back(numkit::MlpGrads::zeros_like(actors.nets[g]));
  const double scale = 1.0 / (static_cast<double>(b) * n);
  double loss_sum = 0.0;

  for (int j = 0; j < n; ++j) {
    Eigen::MatrixXd e_j = batch_actions;
    e_j.block(0, j * slot, b, slot) = enc[j];
    Eigen::MatrixXd v = critic.values(states, e_j);
    std::vector<int> head(b);
    for (long r = 0; r < b; ++r) {
      int h = 0;
      for (int c = 1; c < v.cols(); ++c)
        if (v(r, c) < v(r, h)) h = c;
      head[r] = h;
      loss_sum += v(r, h);
    }
    Eigen::MatrixXd ga = critic.action_grad(states, e_j, head);
    Eigen::MatrixXd go = -scale * ga.block(0, j * slot, b, slot);
    if (actors.discrete) {
      for (long r = 0; r < b; ++r) {
        Eigen::VectorXd s_row = enc[j].row(r).transpose();
        Eigen::VectorXd g_row = go.row(r).transpose();
        double dot = g_row.dot(s_row);
        go.row(r) =
            ((s_row.array() * (g_row.array() - dot)) / actors.st_temp)
                .transpose();
      }
    }
    numkit::backward(actors.net_for(j, gqc::Which::Online), cache[j], go,
                     &out.grads[actors.spec.assignment[j]]);
  }
  out.loss = -scale * loss_sum;
  if (!std::isfinite(out.loss)) throw NumericError("non-finite actor loss");
  for (const auto& g : out.grads)
    if (!g.all_finite()) throw NumericError("non-finite actor gradient");
  return out;
}

UpdateLosses update_step(const AlgoSpec& algo, ccga::GroupedActors& actors,
                         gqc::CriticEnsemble& ensemble, replay::Buffer& buffer,
                         std::size_t batch_size,
                         const envs::ActionCodec& codec,
                         const gqc::PUConfig& pu, double gamma, double tau,
                         const std::vector<int>& ordering,
                         UpdateStreams& streams) {
  pu.validate();
  const int heads = ensemble.heads();
  const int n = actors.spec.n_agents;
  if (static_cast<int>(streams.head_sample.size()) != heads)
    throw ConfigError("one replay stream per critic head required");
  if (!buffer.ready(batch_size)) throw ConfigError("buffer not ready");

  UpdateLosses losses;

  if (algo.gqc_critic) {
    // every head regresses on its own draw of the buffer
    for (int h = 0; h < heads; ++h) {
      auto batch = buffer.sample(batch_size, streams.head_sample[h]);
      BatchMats m = to_mats(*batch, codec);
      Eigen::MatrixXd smoothed =
          smoothed_next_actions(actors, m, codec, pu, streams.smooth);
      Eigen::VectorXd y_true = gqc::true_target(
          ensemble, h, gamma, m.next_states, smoothed, m.rewards, m.done);

      // out-of-distribution points: batch prefix of random length, greedy
      // tail from the target actors, one per transition
      Eigen::MatrixXd ood = ccga::greedy_joint_encoded(
          actors, m.obs, codec, gqc::Which::Target);
      const int slot = codec.slot_dim;
      for (long r = 0; r < m.states.rows(); ++r) {
        int len = 1 + static_cast<int>(streams.ood.uniform_int(n));
        for (int p = 0; p < len; ++p) {
          int agent = ordering[p];
          ood.row(r).segment(agent * slot, slot) =
              m.actions.row(r).segment(agent * slot, slot);
        }
      }
      Eigen::VectorXd y_pu =
          gqc::pu_target(ensemble, h, pu.beta, m.states, ood);

      auto loss = gqc::gqc_loss(ensemble, h, m.states, m.actions, y_true,
                                m.states, ood, y_pu, pu.lambda_pu);
      numkit::opt_step(ensemble.opt[h], ensemble.online[h], loss.grads);
      losses.critic_true += loss.true_mse / heads;
      losses.critic_pu += loss.pu_mse / heads;
    }
  } else {
    // twin-critic regression: one batch, min over target heads
    auto batch = buffer.sample(batch_size, streams.head_sample[0]);
    BatchMats m = to_mats(*batch, codec);
    Eigen::MatrixXd smoothed =
        smoothed_next_actions(actors, m, codec, pu, streams.smooth);
    Eigen::MatrixXd q_next =
        gqc::ensemble_q_batch(ensemble, m.next_states, smoothed,
                              gqc::Which::Target);
    Eigen::VectorXd y = m.rewards;
    for (long r = 0; r < y.size(); ++r)
      if (!m.done[r]) y(r) += gamma * q_next.row(r).minCoeff();

    Eigen::MatrixXd no_ood(0, m.states.cols());
    Eigen::MatrixXd no_ood_a(0, codec.joint_dim());
    for (int h = 0; h < heads; ++h) {
      auto loss = gqc::gqc_loss(ensemble, h, m.states, m.actions, y, no_ood,
                                no_ood_a, Eigen::VectorXd(0), 0.0);
      numkit::opt_step(ensemble.opt[h], ensemble.online[h], loss.grads);
      losses.critic_true += loss.true_mse / heads;
    }
  }

  // actor step on its own batch
  {
    auto batch = buffer.sample(batch_size, streams.actor_sample);
    BatchMats m = to_mats(*batch, codec);
    gqc::EnsembleCritic critic(ensemble, gqc::Which::Online);
    ccga::ActorLossResult result =
        algo.omq_actor
            ? ccga::actor_loss(actors, critic, codec, m.states, m.obs,
                               ordering)
            : plain_actor_loss(actors, critic, codec, m.states, m.obs,
                               m.actions);
    for (int g = 0; g < actors.n_groups(); ++g)
      numkit::opt_step(actors.opt[g], actors.nets[g], result.grads[g]);
    losses.actor = result.loss;

    Eigen::MatrixXd q_spread = gqc::ensemble_q_batch(
        ensemble, m.states, m.actions, gqc::Which::Target);
    losses.uncertainty = gqc::uncertainty_rows(q_spread).mean();
  }

  gqc::update_targets(ensemble, tau);
  ccga::update_actor_targets(actors, tau);
  return losses;
}

}  // namespace omdpg::baselines
