#include "omdpg/ccga.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace omdpg::ccga {

namespace {

Eigen::VectorXd softmax(const Eigen::VectorXd& logits, double temp) {
  Eigen::ArrayXd z = (logits.array() - logits.maxCoeff()) / temp;
  Eigen::ArrayXd e = z.exp();
  return (e / e.sum()).matrix();
}

int argmax(const Eigen::VectorXd& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

Eigen::VectorXd one_hot(int k, int m) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(m);
  v(k) = 1.0;
  return v;
}

Eigen::MatrixXd stack_agent_obs(const std::vector<envs::JointObservation>& obs,
                                int agent, int obs_dim) {
  Eigen::MatrixXd x(obs.size(), obs_dim);
  for (std::size_t b = 0; b < obs.size(); ++b) {
    if (agent >= static_cast<int>(obs[b].size()) ||
        obs[b][agent].size() != obs_dim)
      throw ShapeError("observation shape mismatch for agent " +
                       std::to_string(agent));
    x.row(b) = obs[b][agent].transpose();
  }
  return x;
}

}  // namespace

const numkit::MlpParams& GroupedActors::net_for(int agent,
                                                gqc::Which which) const {
  if (agent < 0 || agent >= spec.n_agents)
    throw ShapeError("agent index out of range");
  int g = spec.assignment[agent];
  return which == gqc::Which::Online ? nets[g] : targets[g];
}

void GroupedActors::validate() const {
  spec.validate();
  if (static_cast<int>(nets.size()) != spec.n_groups() ||
      targets.size() != nets.size() || opt.size() != nets.size())
    throw ConfigError("one net, target and optimizer required per group");
  for (std::size_t g = 0; g < nets.size(); ++g) {
    nets[g].validate();
    if (nets[g].input_dim() != obs_dim || nets[g].output_dim() != action_dim)
      throw ShapeError("actor net shape does not match obs/action dims");
    if (targets[g].input_dim() != obs_dim ||
        targets[g].output_dim() != action_dim)
      throw ShapeError("actor target shape mismatch");
  }
  if (!(expl_sigma >= 0.0) || !(expl_clip > 0.0) || !(st_temp > 0.0))
    throw ConfigError("noise and temperature parameters must be positive");
}

GroupedActors GroupedActors::make(const envs::GroupSpec& spec, bool discrete,
                                  int obs_dim, int action_dim,
                                  const std::vector<int>& hidden, double lr,
                                  std::uint64_t run_seed) {
  spec.validate();
  GroupedActors a;
  a.spec = spec;
  a.discrete = discrete;
  a.obs_dim = obs_dim;
  a.action_dim = action_dim;
  std::vector<int> dims = {obs_dim};
  std::vector<numkit::Activation> acts;
  for (int h : hidden) {
    dims.push_back(h);
    acts.push_back(numkit::Activation::Tanh);
  }
  dims.push_back(action_dim);
  acts.push_back(discrete ? numkit::Activation::Identity
                          : numkit::Activation::Tanh);
  for (int g = 0; g < spec.n_groups(); ++g) {
    RngStream rng = RngStream::named(run_seed, "init/actor", g);
    a.nets.push_back(numkit::make_mlp(dims, acts, rng));
    a.targets.push_back(a.nets.back());
    a.opt.push_back(numkit::OptState::for_params(a.nets.back(), lr));
  }
  return a;
}

envs::JointAction act(const GroupedActors& actors,
                      const envs::JointObservation& obs, Mode mode,
                      gqc::Which which, RngStream* rng) {
  if (static_cast<int>(obs.size()) != actors.spec.n_agents)
    throw ShapeError("one observation per agent required");
  if (mode == Mode::Explore && rng == nullptr)
    throw ConfigError("explore mode needs an rng stream");
  envs::JointAction out;
  for (int j = 0; j < actors.spec.n_agents; ++j) {
    Eigen::VectorXd raw = numkit::forward1(actors.net_for(j, which), obs[j]);
    if (actors.discrete) {
      if (mode == Mode::Greedy) {
        out.disc.push_back(argmax(raw));
      } else {
        Eigen::VectorXd p = softmax(raw, 1.0);
        double u = rng->uniform();
        double acc = 0.0;
        int pick = static_cast<int>(p.size()) - 1;
        for (int k = 0; k < p.size(); ++k) {
          acc += p(k);
          if (u < acc) {
            pick = k;
            break;
          }
        }
        out.disc.push_back(pick);
      }
    } else {
      if (mode == Mode::Explore) {
        for (int d = 0; d < raw.size(); ++d) {
          raw(d) += rng->clipped_normal(actors.expl_sigma, actors.expl_clip);
          raw(d) = std::clamp(raw(d), -1.0, 1.0);
        }
      }
      out.cont.push_back(raw);
    }
  }
  return out;
}

GreedyCompletion greedy_completion(const GroupedActors& actors,
                                   const envs::JointObservation& obs,
                                   const std::vector<int>& ordering,
                                   int covered, gqc::Which which,
                                   const envs::ActionCodec& codec) {
  int n = actors.spec.n_agents;
  if (static_cast<int>(ordering.size()) != n)
    throw ShapeError("ordering must cover every agent");
  if (covered < 0 || covered > n)
    throw ConfigError("covered position count out of range");
  GreedyCompletion out;
  for (int p = covered; p < n; ++p) {
    int agent = ordering[p];
    Eigen::VectorXd raw =
        numkit::forward1(actors.net_for(agent, which), obs[agent]);
    out.agents.push_back(agent);
    if (actors.discrete)
      out.encoded.push_back(one_hot(argmax(raw), codec.slot_dim));
    else
      out.encoded.push_back(raw);
  }
  return out;
}

OmqValue omq(const gqc::CriticFn& critic, const envs::ActionCodec& codec,
             const Eigen::VectorXd& s, const envs::JointAction& joint,
             const std::vector<int>& ordering, int pos,
             const GreedyCompletion& completion) {
  int n = codec.n_agents;
  if (static_cast<int>(ordering.size()) != n)
    throw ShapeError("ordering must cover every agent");
  if (pos < 0 || pos >= n) throw ConfigError("position out of range");
  if (static_cast<int>(completion.agents.size()) != n - pos - 1)
    throw ShapeError("completion must cover the ordering tail");

  int slot = codec.slot_dim;
  Eigen::VectorXd with_action(codec.joint_dim());
  for (int p = 0; p <= pos; ++p) {
    int agent = ordering[p];
    with_action.segment(agent * slot, slot) = codec.encode_agent(joint, agent);
  }
  for (std::size_t k = 0; k < completion.agents.size(); ++k) {
    int agent = completion.agents[k];
    if (agent != ordering[pos + 1 + k])
      throw ShapeError("completion agents out of order");
    if (completion.encoded[k].size() != slot)
      throw ShapeError("completion slot width mismatch");
    with_action.segment(agent * slot, slot) = completion.encoded[k];
  }
  Eigen::VectorXd with_noop = with_action;
  with_noop.segment(ordering[pos] * slot, slot) = codec.noop_slot();

  Eigen::MatrixXd states(2, s.size());
  states.row(0) = s.transpose();
  states.row(1) = s.transpose();
  Eigen::MatrixXd acts(2, codec.joint_dim());
  acts.row(0) = with_action.transpose();
  acts.row(1) = with_noop.transpose();
  Eigen::MatrixXd v = critic.values(states, acts);

  OmqValue out;
  out.agent = ordering[pos];
  out.completion = completion;
  out.phi = (v.row(0) - v.row(1)).transpose();
  if (!out.phi.allFinite()) throw NumericError("non-finite marginal value");
  return out;
}

Eigen::MatrixXd greedy_joint_encoded(
    const GroupedActors& actors, const std::vector<envs::JointObservation>& obs,
    const envs::ActionCodec& codec, gqc::Which which) {
  long b = static_cast<long>(obs.size());
  int slot = codec.slot_dim;
  Eigen::MatrixXd enc(b, codec.joint_dim());
  for (int j = 0; j < actors.spec.n_agents; ++j) {
    Eigen::MatrixXd x = stack_agent_obs(obs, j, actors.obs_dim);
    Eigen::MatrixXd raw = numkit::forward(actors.net_for(j, which), x);
    if (actors.discrete) {
      enc.block(0, j * slot, b, slot).setZero();
      for (long r = 0; r < b; ++r)
        enc(r, j * slot + argmax(raw.row(r).transpose())) = 1.0;
    } else {
      enc.block(0, j * slot, b, slot) = raw;
    }
  }
  return enc;
}

ActorLossResult actor_loss(const GroupedActors& actors,
                           const gqc::CriticFn& critic,
                           const envs::ActionCodec& codec,
                           const Eigen::MatrixXd& states,
                           const std::vector<envs::JointObservation>& obs,
                           const std::vector<int>& ordering,
                           const Eigen::MatrixXd* completions) {
  const int n = actors.spec.n_agents;
  const long b = states.rows();
  const int slot = codec.slot_dim;
  if (static_cast<long>(obs.size()) != b)
    throw ShapeError("one observation set per state row required");
  if (static_cast<int>(ordering.size()) != n)
    throw ShapeError("ordering must cover every agent");
  if (b == 0) throw ConfigError("empty actor batch");
  if (completions != nullptr &&
      (completions->rows() != b || completions->cols() != codec.joint_dim()))
    throw ShapeError("completion encodings must be batch x joint_dim");

  // one forward per agent; caches feed the single backward at the end
  std::vector<numkit::ForwardCache> cache(n);
  std::vector<Eigen::MatrixXd> enc(n);   // differentiable slot values
  std::vector<Eigen::MatrixXd> hard(n);  // constant completion slot values
  for (int j = 0; j < n; ++j) {
    Eigen::MatrixXd x = stack_agent_obs(obs, j, actors.obs_dim);
    Eigen::MatrixXd raw =
        numkit::forward(actors.net_for(j, gqc::Which::Online), x, &cache[j]);
    if (actors.discrete) {
      enc[j].resize(b, slot);
      hard[j] = Eigen::MatrixXd::Zero(b, slot);
      for (long r = 0; r < b; ++r) {
        enc[j].row(r) =
            softmax(raw.row(r).transpose(), actors.st_temp).transpose();
        hard[j](r, argmax(raw.row(r).transpose())) = 1.0;
      }
    } else {
      enc[j] = raw;
      hard[j] = raw;
    }
  }

  Eigen::VectorXd noop = codec.noop_slot();
  std::vector<Eigen::MatrixXd> g_enc(n,
                                     Eigen::MatrixXd::Zero(b, slot));
  const double scale = 1.0 / (static_cast<double>(b) * n);
  double loss_sum = 0.0;

  Eigen::MatrixXd e_plus(b, codec.joint_dim());
  Eigen::MatrixXd e_zero(b, codec.joint_dim());
  for (int p = 0; p < n; ++p) {
    for (int q = 0; q < n; ++q) {
      int agent = ordering[q];
      auto plus_block = e_plus.block(0, agent * slot, b, slot);
      auto zero_block = e_zero.block(0, agent * slot, b, slot);
      if (q < p) {
        plus_block = enc[agent];
        zero_block = enc[agent];
      } else if (q == p) {
        plus_block = enc[agent];
        zero_block = noop.transpose().replicate(b, 1);
      } else if (completions != nullptr) {
        plus_block = completions->block(0, agent * slot, b, slot);
        zero_block = completions->block(0, agent * slot, b, slot);
      } else {
        plus_block = hard[agent];
        zero_block = hard[agent];
      }
    }
    Eigen::MatrixXd v_plus = critic.values(states, e_plus);
    Eigen::MatrixXd v_zero = critic.values(states, e_zero);
    std::vector<int> head(b);
    for (long r = 0; r < b; ++r) {
      Eigen::VectorXd phi = (v_plus.row(r) - v_zero.row(r)).transpose();
      int h = 0;
      for (int c = 1; c < phi.size(); ++c)
        if (phi(c) < phi(h)) h = c;
      head[r] = h;
      loss_sum += phi(h);
    }
    Eigen::MatrixXd gp = critic.action_grad(states, e_plus, head);
    Eigen::MatrixXd gz = critic.action_grad(states, e_zero, head);
    // loss = -scale * sum(phi): the with-action term pushes -grad, the
    // no-op term pushes +grad into the shared prefix slots
    for (int q = 0; q <= p; ++q) {
      int agent = ordering[q];
      g_enc[agent] -= scale * gp.block(0, agent * slot, b, slot);
      if (q < p) g_enc[agent] += scale * gz.block(0, agent * slot, b, slot);
    }
  }

  ActorLossResult out;
  out.loss = -scale * loss_sum;
  for (int g = 0; g < actors.n_groups(); ++g)
    out.grads.push_back(numkit::MlpGrads::zeros_like(actors.nets[g]));
  for (int j = 0; j < n; ++j) {
    Eigen::MatrixXd go = g_enc[j];
    if (actors.discrete) {
      // chain through the relaxed one-hot: J = (diag(s) - s s^T) / temp
      for (long r = 0; r < b; ++r) {
        Eigen::VectorXd s_row = enc[j].row(r).transpose();
        Eigen::VectorXd g_row = g_enc[j].row(r).transpose();
        double dot = g_row.dot(s_row);
        go.row(r) =
            ((s_row.array() * (g_row.array() - dot)) / actors.st_temp)
                .transpose();
      }
    }
    numkit::backward(actors.net_for(j, gqc::Which::Online), cache[j], go,
                     &out.grads[actors.spec.assignment[j]]);
  }
  if (!std::isfinite(out.loss))
    throw NumericError("non-finite actor loss");
  for (const auto& g : out.grads)
    if (!g.all_finite()) throw NumericError("non-finite actor gradient");
  return out;
}

std::vector<int> sequential_order(const envs::GroupSpec& spec, bool shuffled,
                                  RngStream* rng) {
  std::vector<int> order = spec.ordering;
  if (!shuffled) return order;
  if (rng == nullptr) throw ConfigError("shuffled order needs an rng stream");
  for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
    int j = static_cast<int>(rng->uniform_int(i + 1));
    std::swap(order[i], order[j]);
  }
  return order;
}

void update_actor_targets(GroupedActors& actors, double tau) {
  for (int g = 0; g < actors.n_groups(); ++g)
    numkit::soft_update(actors.targets[g], actors.nets[g], tau);
}

}  // namespace omdpg::ccga
