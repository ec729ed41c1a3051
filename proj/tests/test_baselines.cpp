#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Dense>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include "doctest.h"
#include "omdpg/baselines.hpp"
#include "omdpg/ccga.hpp"
#include "omdpg/envs.hpp"
#include "omdpg/gqc.hpp"
#include "omdpg/numkit.hpp"
#include "omdpg/replay.hpp"
#include "omdpg/snapshot.hpp"

using namespace omdpg;

namespace {

// Q(s, a) = w . a for every head; exact gradients.
class LinearCritic : public gqc::CriticFn {
 public:
  LinearCritic(int state_dim, Eigen::VectorXd w, int n_heads)
      : sdim_(state_dim), w_(std::move(w)), heads_(n_heads) {}
  int heads() const override { return heads_; }
  int state_dim() const override { return sdim_; }
  int action_dim() const override { return static_cast<int>(w_.size()); }
  Eigen::MatrixXd values(const Eigen::MatrixXd&,
                         const Eigen::MatrixXd& acts) const override {
    return (acts * w_).replicate(1, heads_);
  }
  Eigen::MatrixXd action_grad(const Eigen::MatrixXd& states,
                              const Eigen::MatrixXd&,
                              const std::vector<int>&) const override {
    return w_.transpose().replicate(states.rows(), 1);
  }

 private:
  int sdim_;
  Eigen::VectorXd w_;
  int heads_;
};

class ConstantCritic : public gqc::CriticFn {
 public:
  ConstantCritic(int state_dim, int act_dim, Eigen::VectorXd per_head)
      : sdim_(state_dim), adim_(act_dim), c_(std::move(per_head)) {}
  int heads() const override { return static_cast<int>(c_.size()); }
  int state_dim() const override { return sdim_; }
  int action_dim() const override { return adim_; }
  Eigen::MatrixXd values(const Eigen::MatrixXd& states,
                         const Eigen::MatrixXd&) const override {
    return c_.transpose().replicate(states.rows(), 1);
  }
  Eigen::MatrixXd action_grad(const Eigen::MatrixXd& states,
                              const Eigen::MatrixXd&,
                              const std::vector<int>&) const override {
    return Eigen::MatrixXd::Zero(states.rows(), adim_);
  }

 private:
  int sdim_, adim_;
  Eigen::VectorXd c_;
};

gqc::CriticEnsemble smooth_ensemble(int c_k, int state_dim, int action_dim,
                                    std::uint64_t seed) {
  gqc::CriticEnsemble e;
  e.state_dim = state_dim;
  e.joint_action_dim = action_dim;
  std::vector<int> dims = {state_dim + action_dim, 8, 1};
  std::vector<numkit::Activation> acts = {numkit::Activation::Tanh,
                                          numkit::Activation::Identity};
  for (int c = 0; c < c_k; ++c) {
    RngStream rng = RngStream::named(seed, "test/head", c);
    e.online.push_back(numkit::make_mlp(dims, acts, rng));
    e.target.push_back(e.online.back());
    e.opt.push_back(numkit::OptState::for_params(e.online.back(), 1e-3));
  }
  return e;
}

// Tanh hidden layers keep finite differencing of the full pipeline clean.
ccga::GroupedActors smooth_actors(const envs::GroupSpec& spec, bool discrete,
                                  int obs_dim, int action_dim, int hidden,
                                  std::uint64_t seed) {
  ccga::GroupedActors a = ccga::GroupedActors::make(
      spec, discrete, obs_dim, action_dim, {hidden}, 1e-3, seed);
  std::vector<int> dims = {obs_dim, hidden, action_dim};
  std::vector<numkit::Activation> acts = {
      numkit::Activation::Tanh,
      discrete ? numkit::Activation::Identity : numkit::Activation::Tanh};
  for (int g = 0; g < a.n_groups(); ++g) {
    RngStream rng = RngStream::named(seed, "test/actor", g);
    a.nets[g] = numkit::make_mlp(dims, acts, rng);
    a.targets[g] = a.nets[g];
    a.opt[g] = numkit::OptState::for_params(a.nets[g], 1e-3);
  }
  return a;
}

std::vector<envs::JointObservation> random_obs(int batch, int n, int dim,
                                               RngStream& rng) {
  std::vector<envs::JointObservation> obs(batch);
  for (auto& jo : obs) {
    jo.resize(n);
    for (auto& o : jo) {
      o.resize(dim);
      for (int d = 0; d < dim; ++d) o(d) = rng.uniform(-1.0, 1.0);
    }
  }
  return obs;
}

Eigen::MatrixXd random_states(int batch, int dim, RngStream& rng) {
  Eigen::MatrixXd s(batch, dim);
  for (int r = 0; r < batch; ++r)
    for (int d = 0; d < dim; ++d) s(r, d) = rng.uniform(-1.0, 1.0);
  return s;
}

// Buffer filled by stepping the env under uniform random actions.
replay::Buffer random_buffer(const envs::Env& env, int steps,
                             std::uint64_t seed) {
  replay::Buffer buf(4096);
  RngStream rng(seed);
  envs::EnvState st = env.reset(rng.next_u64());
  for (int i = 0; i < steps; ++i) {
    envs::JointAction a;
    if (env.discrete_actions()) {
      a.disc.resize(env.n_agents());
      for (int j = 0; j < env.n_agents(); ++j)
        a.disc[j] = rng.uniform_int(env.action_dim());
    } else {
      a.cont.resize(env.n_agents());
      for (int j = 0; j < env.n_agents(); ++j) {
        a.cont[j].resize(env.action_dim());
        for (int d = 0; d < env.action_dim(); ++d)
          a.cont[j](d) = rng.uniform(-1.0, 1.0);
      }
    }
    envs::StepResult sr = env.step(st, a);
    buf.push(replay::Transition{env.state_vec(st), env.state_vec(sr.next),
                                env.observe(st), env.observe(sr.next), a,
                                sr.reward, sr.done});
    st = sr.done ? env.reset(rng.next_u64()) : sr.next;
  }
  return buf;
}

struct Stack {
  ccga::GroupedActors actors;
  gqc::CriticEnsemble ensemble;
};

Stack make_stack(const envs::Env& env, const baselines::AlgoSpec& algo,
                 std::uint64_t seed) {
  envs::GroupSpec shared = baselines::apply_sharing(env.groups(), algo.sharing);
  auto actors =
      ccga::GroupedActors::make(shared, env.discrete_actions(), env.obs_dim(),
                                env.action_dim(), {8}, 1e-3, seed);
  auto ensemble = gqc::CriticEnsemble::make(algo.default_heads, env.state_dim(),
                                            env.codec().joint_dim(), {16},
                                            1e-3, seed + 1);
  return {std::move(actors), std::move(ensemble)};
}

Eigen::VectorXd concat(const std::vector<Eigen::VectorXd>& parts) {
  long total = 0;
  for (const auto& v : parts) total += v.size();
  Eigen::VectorXd out(total);
  long at = 0;
  for (const auto& v : parts) {
    out.segment(at, v.size()) = v;
    at += v.size();
  }
  return out;
}

Eigen::VectorXd actor_fingerprint(const ccga::GroupedActors& a) {
  std::vector<Eigen::VectorXd> parts;
  for (const auto& p : a.nets) parts.push_back(numkit::flatten(p));
  for (const auto& p : a.targets) parts.push_back(numkit::flatten(p));
  return concat(parts);
}

Eigen::VectorXd critic_fingerprint(const gqc::CriticEnsemble& e) {
  std::vector<Eigen::VectorXd> parts;
  for (const auto& p : e.online) parts.push_back(numkit::flatten(p));
  for (const auto& p : e.target) parts.push_back(numkit::flatten(p));
  return concat(parts);
}

Eigen::VectorXd stack_fingerprint(const Stack& s) {
  return concat({actor_fingerprint(s.actors), critic_fingerprint(s.ensemble)});
}

bool same_bits(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.size() == b.size() && (a.array() == b.array()).all();
}

// Batch matrices rebuilt from raw transitions, mirroring what the update
// consumes.
struct Mats {
  Eigen::MatrixXd states, next_states, actions;
  Eigen::VectorXd rewards;
  std::vector<bool> done;
  std::vector<envs::JointObservation> obs, next_obs;
};

Mats split(const std::vector<replay::Transition>& batch,
           const envs::ActionCodec& codec) {
  Mats m;
  long b = static_cast<long>(batch.size());
  m.states.resize(b, batch[0].state.size());
  m.next_states.resize(b, batch[0].next_state.size());
  m.actions.resize(b, codec.joint_dim());
  m.rewards.resize(b);
  m.done.resize(b);
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

}  // namespace

TEST_CASE("variant names map onto the two switches and a sharing regime") {
  auto expect = [](const std::string& name, bool omq, bool gqcc,
                   baselines::Sharing sharing, int heads) {
    auto a = baselines::parse_algo(name);
    CHECK(a.name == name);
    CHECK(a.omq_actor == omq);
    CHECK(a.gqc_critic == gqcc);
    CHECK(a.sharing == sharing);
    CHECK(a.default_heads == heads);
  };
  expect("omdpg", true, true, baselines::Sharing::ParPS, 5);
  expect("matd3-nops", false, false, baselines::Sharing::NoPS, 2);
  expect("matd3-parps", false, false, baselines::Sharing::ParPS, 2);
  expect("matd3-fups", false, false, baselines::Sharing::FuPS, 2);
  expect("matd3-parps-omq", true, false, baselines::Sharing::ParPS, 2);
  expect("matd3-parps-gqc", false, true, baselines::Sharing::ParPS, 5);

  CHECK_THROWS_AS(baselines::parse_algo("happo"), ConfigError);
  CHECK_THROWS_AS(baselines::parse_algo(""), ConfigError);
  CHECK_THROWS_AS(baselines::parse_algo("OMDPG"), ConfigError);
}

TEST_CASE("sharing regimes rewrite the assignment and keep the ordering") {
  envs::GroupSpec g;
  g.n_agents = 4;
  g.assignment = {0, 0, 1, 1};
  g.ordering = {2, 0, 3, 1};
  g.validate();

  auto nops = baselines::apply_sharing(g, baselines::Sharing::NoPS);
  CHECK(nops.assignment == std::vector<int>{0, 1, 2, 3});
  CHECK(nops.ordering == g.ordering);
  CHECK(nops.n_groups() == 4);

  auto fups = baselines::apply_sharing(g, baselines::Sharing::FuPS);
  CHECK(fups.assignment == std::vector<int>{0, 0, 0, 0});
  CHECK(fups.ordering == g.ordering);
  CHECK(fups.n_groups() == 1);

  auto parps = baselines::apply_sharing(g, baselines::Sharing::ParPS);
  CHECK(parps.assignment == g.assignment);
  CHECK(parps.ordering == g.ordering);
  CHECK(parps.n_groups() == 2);
}

TEST_CASE("full sharing: agents with the same observation act the same") {
  envs::GroupSpec g;
  g.n_agents = 4;
  g.assignment = {0, 0, 1, 1};
  g.ordering = {0, 1, 2, 3};
  auto spec = baselines::apply_sharing(g, baselines::Sharing::FuPS);
  auto actors = ccga::GroupedActors::make(spec, false, 3, 2, {8}, 1e-3, 51);
  CHECK(actors.n_groups() == 1);

  RngStream rng(4);
  Eigen::VectorXd shared(3);
  for (int d = 0; d < 3; ++d) shared(d) = rng.uniform(-1.0, 1.0);
  envs::JointObservation obs(4, shared);
  auto a = ccga::act(actors, obs, ccga::Mode::Greedy, gqc::Which::Online);
  for (int j = 1; j < 4; ++j)
    CHECK((a.cont[j].array() == a.cont[0].array()).all());
}

TEST_CASE("no sharing: perturbing one agent's net leaves the others alone") {
  envs::GroupSpec g;
  g.n_agents = 3;
  g.assignment = {0, 0, 0};
  g.ordering = {0, 1, 2};
  auto spec = baselines::apply_sharing(g, baselines::Sharing::NoPS);
  auto actors = ccga::GroupedActors::make(spec, false, 3, 2, {8}, 1e-3, 52);
  CHECK(actors.n_groups() == 3);

  RngStream rng(6);
  auto obs = random_obs(1, 3, 3, rng)[0];
  auto before = ccga::act(actors, obs, ccga::Mode::Greedy, gqc::Which::Online);

  actors.nets[0].layers.front().w *= 2.0;
  actors.nets[0].layers.back().b(0) += 0.7;
  auto after = ccga::act(actors, obs, ccga::Mode::Greedy, gqc::Which::Online);

  CHECK((after.cont[0] - before.cont[0]).lpNorm<Eigen::Infinity>() > 0.0);
  for (int j = 1; j < 3; ++j)
    CHECK((after.cont[j].array() == before.cont[j].array()).all());
}

TEST_CASE("the actor switch never touches the critic update") {
  envs::SignalLeverEnv env;
  auto codec = env.codec();
  const std::pair<const char*, const char*> pairs[] = {
      {"matd3-parps", "matd3-parps-omq"},
      {"matd3-parps-gqc", "omdpg"},
  };
  for (const auto& [plain_name, omq_name] : pairs) {
    CAPTURE(plain_name);
    auto algo_a = baselines::parse_algo(plain_name);
    auto algo_b = baselines::parse_algo(omq_name);
    REQUIRE(algo_a.default_heads == algo_b.default_heads);
    REQUIRE(algo_a.gqc_critic == algo_b.gqc_critic);
    REQUIRE(algo_a.omq_actor != algo_b.omq_actor);

    Stack sa = make_stack(env, algo_a, 71);
    Stack sb = make_stack(env, algo_b, 71);
    REQUIRE(same_bits(stack_fingerprint(sa), stack_fingerprint(sb)));

    replay::Buffer buf_a = random_buffer(env, 64, 5);
    replay::Buffer buf_b = buf_a;
    auto st_a = baselines::UpdateStreams::make(9, algo_a.default_heads);
    auto st_b = baselines::UpdateStreams::make(9, algo_b.default_heads);
    gqc::PUConfig pu;

    auto la = baselines::update_step(algo_a, sa.actors, sa.ensemble, buf_a, 16,
                                     codec, pu, 0.95, 0.05,
                                     env.groups().ordering, st_a);
    auto lb = baselines::update_step(algo_b, sb.actors, sb.ensemble, buf_b, 16,
                                     codec, pu, 0.95, 0.05,
                                     env.groups().ordering, st_b);

    // same batches, same critic losses, bit-identical critic parameters
    CHECK(la.critic_true == lb.critic_true);
    CHECK(la.critic_pu == lb.critic_pu);
    CHECK(la.uncertainty == lb.uncertainty);
    CHECK(same_bits(critic_fingerprint(sa.ensemble),
                    critic_fingerprint(sb.ensemble)));

    // the actor objective is the part that moved
    CHECK(la.actor != lb.actor);
    CHECK(!same_bits(actor_fingerprint(sa.actors),
                     actor_fingerprint(sb.actors)));

    if (algo_a.gqc_critic) {
      CHECK(la.critic_pu > 0.0);
    } else {
      CHECK(la.critic_pu == 0.0);
    }
  }
}

TEST_CASE("the flagship variant is exactly both switches turned on") {
  envs::SignalLeverEnv env;
  auto codec = env.codec();
  auto named = baselines::parse_algo("omdpg");
  baselines::AlgoSpec manual;
  manual.name = "both-switches";
  manual.omq_actor = true;
  manual.gqc_critic = true;
  manual.sharing = baselines::Sharing::ParPS;
  manual.default_heads = 5;

  Stack sa = make_stack(env, named, 77);
  Stack sb = make_stack(env, manual, 77);
  REQUIRE(same_bits(stack_fingerprint(sa), stack_fingerprint(sb)));

  replay::Buffer buf_a = random_buffer(env, 72, 13);
  replay::Buffer buf_b = buf_a;
  auto st_a = baselines::UpdateStreams::make(3, named.default_heads);
  auto st_b = baselines::UpdateStreams::make(3, manual.default_heads);
  gqc::PUConfig pu;

  for (int i = 0; i < 3; ++i) {
    auto la = baselines::update_step(named, sa.actors, sa.ensemble, buf_a, 12,
                                     codec, pu, 0.9, 0.1,
                                     env.groups().ordering, st_a);
    auto lb = baselines::update_step(manual, sb.actors, sb.ensemble, buf_b, 12,
                                     codec, pu, 0.9, 0.1,
                                     env.groups().ordering, st_b);
    CHECK(la.critic_true == lb.critic_true);
    CHECK(la.critic_pu == lb.critic_pu);
    CHECK(la.actor == lb.actor);
    CHECK(la.uncertainty == lb.uncertainty);
  }
  CHECK(same_bits(stack_fingerprint(sa), stack_fingerprint(sb)));
}

TEST_CASE("plain actor objective") {
  SUBCASE("single agent, identity actor, linear critic: exact gradient") {
    envs::GroupSpec spec = envs::GroupSpec::identity_order({0});
    auto actors = ccga::GroupedActors::make(spec, false, 2, 3, {}, 1e-3, 9);
    actors.nets[0].layers[0].act = numkit::Activation::Identity;
    actors.nets[0].layers[0].w.setZero();
    Eigen::VectorXd bias(3);
    bias << 0.3, -0.2, 0.5;
    actors.nets[0].layers[0].b = bias;

    Eigen::VectorXd w(3);
    w << 1.5, -2.0, 0.25;
    LinearCritic critic(1, w, 2);
    envs::ActionCodec codec{false, 1, 3};

    Eigen::MatrixXd states = Eigen::MatrixXd::Zero(1, 1);
    Eigen::VectorXd x(2);
    x << 0.7, -1.3;
    std::vector<envs::JointObservation> obs = {{x}};
    Eigen::MatrixXd batch_actions = Eigen::MatrixXd::Zero(1, 3);

    auto out = baselines::plain_actor_loss(actors, critic, codec, states, obs,
                                           batch_actions);
    CHECK(out.loss == doctest::Approx(-w.dot(bias)).epsilon(1e-14));
    CHECK((out.grads[0].b[0].array() == (-w).array()).all());
    Eigen::MatrixXd expect_w = -w * x.transpose();
    CHECK((out.grads[0].w[0].array() == expect_w.array()).all());
  }

  SUBCASE("the minimum head is the one that counts") {
    envs::GroupSpec spec = envs::GroupSpec::identity_order({0, 0});
    auto actors = ccga::GroupedActors::make(spec, false, 3, 2, {6}, 1e-3, 10);
    Eigen::VectorXd heads(2);
    heads << 5.0, 2.0;
    ConstantCritic critic(2, 4, heads);
    envs::ActionCodec codec{false, 2, 2};
    RngStream rng(11);
    auto obs = random_obs(4, 2, 3, rng);
    auto states = random_states(4, 2, rng);
    Eigen::MatrixXd batch_actions = Eigen::MatrixXd::Zero(4, 4);

    auto out = baselines::plain_actor_loss(actors, critic, codec, states, obs,
                                           batch_actions);
    CHECK(out.loss == -2.0);
    for (const auto& g : out.grads)
      CHECK(numkit::flatten_grads(g).lpNorm<Eigen::Infinity>() == 0.0);
  }

  SUBCASE("value composes per sample: own slot re-evaluated, rest fixed") {
    envs::GroupSpec spec = envs::GroupSpec::identity_order({0, 0});
    auto actors = ccga::GroupedActors::make(spec, false, 3, 2, {6}, 1e-3, 41);
    RngStream rng(12);
    Eigen::VectorXd w(4);
    for (int d = 0; d < 4; ++d) w(d) = rng.uniform(-1.0, 1.0);
    LinearCritic critic(2, w, 3);
    envs::ActionCodec codec{false, 2, 2};
    const int b = 5;
    auto obs = random_obs(b, 2, 3, rng);
    auto states = random_states(b, 2, rng);
    Eigen::MatrixXd batch_actions(b, 4);
    for (int r = 0; r < b; ++r)
      for (int d = 0; d < 4; ++d) batch_actions(r, d) = rng.uniform(-1.0, 1.0);

    auto out = baselines::plain_actor_loss(actors, critic, codec, states, obs,
                                           batch_actions);
    double expect = 0.0;
    for (int r = 0; r < b; ++r) {
      for (int j = 0; j < 2; ++j) {
        Eigen::VectorXd e = batch_actions.row(r).transpose();
        e.segment(j * 2, 2) =
            numkit::forward1(actors.net_for(j, gqc::Which::Online), obs[r][j]);
        expect += w.dot(e);
      }
    }
    expect *= -1.0 / (b * 2);
    CHECK(out.loss == doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("finite differences, continuous actors") {
    envs::GroupSpec spec = envs::GroupSpec::identity_order({0, 1});
    auto actors = smooth_actors(spec, false, 3, 2, 5, 811);
    auto e = smooth_ensemble(2, 2, 4, 812);
    gqc::EnsembleCritic critic(e, gqc::Which::Online);
    envs::ActionCodec codec{false, 2, 2};
    RngStream rng(77);
    auto obs = random_obs(6, 2, 3, rng);
    auto states = random_states(6, 2, rng);
    Eigen::MatrixXd batch_actions(6, 4);
    for (int r = 0; r < 6; ++r)
      for (int d = 0; d < 4; ++d) batch_actions(r, d) = rng.uniform(-1.0, 1.0);

    for (int g = 0; g < actors.n_groups(); ++g) {
      auto f = [&, g](const Eigen::VectorXd& flat) {
        ccga::GroupedActors probe = actors;
        numkit::unflatten(flat, probe.nets[g]);
        auto out = baselines::plain_actor_loss(probe, critic, codec, states,
                                               obs, batch_actions);
        return std::make_pair(out.loss, numkit::flatten_grads(out.grads[g]));
      };
      double err =
          numkit::fd_gradcheck(f, numkit::flatten(actors.nets[g]), 1e-5);
      CHECK(err < 1e-4);
    }
  }

  SUBCASE("finite differences, discrete actors through the relaxed one-hot") {
    envs::GroupSpec spec = envs::GroupSpec::identity_order({0, 0});
    auto actors = smooth_actors(spec, true, 3, 3, 5, 813);
    actors.st_temp = 0.7;
    auto e = smooth_ensemble(2, 2, 6, 814);
    gqc::EnsembleCritic critic(e, gqc::Which::Online);
    envs::ActionCodec codec{true, 2, 3};
    RngStream rng(78);
    auto obs = random_obs(6, 2, 3, rng);
    auto states = random_states(6, 2, rng);
    Eigen::MatrixXd batch_actions = Eigen::MatrixXd::Zero(6, 6);
    for (int r = 0; r < 6; ++r)
      for (int j = 0; j < 2; ++j)
        batch_actions(r, j * 3 + rng.uniform_int(3)) = 1.0;

    auto f = [&](const Eigen::VectorXd& flat) {
      ccga::GroupedActors probe = actors;
      numkit::unflatten(flat, probe.nets[0]);
      auto out = baselines::plain_actor_loss(probe, critic, codec, states, obs,
                                             batch_actions);
      return std::make_pair(out.loss, numkit::flatten_grads(out.grads[0]));
    };
    double err = numkit::fd_gradcheck(f, numkit::flatten(actors.nets[0]), 1e-5);
    CHECK(err < 1e-4);
  }

  SUBCASE("shape guards") {
    envs::GroupSpec spec = envs::GroupSpec::identity_order({0, 0});
    auto actors = ccga::GroupedActors::make(spec, false, 3, 2, {6}, 1e-3, 13);
    Eigen::VectorXd w = Eigen::VectorXd::Ones(4);
    LinearCritic critic(2, w, 2);
    envs::ActionCodec codec{false, 2, 2};
    RngStream rng(14);
    auto obs = random_obs(2, 2, 3, rng);
    auto states = random_states(2, 2, rng);
    Eigen::MatrixXd acts = Eigen::MatrixXd::Zero(2, 4);

    auto short_obs = obs;
    short_obs.pop_back();
    CHECK_THROWS_AS(baselines::plain_actor_loss(actors, critic, codec, states,
                                                short_obs, acts),
                    ShapeError);
    Eigen::MatrixXd bad_acts = Eigen::MatrixXd::Zero(2, 3);
    CHECK_THROWS_AS(baselines::plain_actor_loss(actors, critic, codec, states,
                                                obs, bad_acts),
                    ShapeError);
    Eigen::MatrixXd no_states(0, 2);
    std::vector<envs::JointObservation> no_obs;
    Eigen::MatrixXd no_acts(0, 4);
    CHECK_THROWS_AS(baselines::plain_actor_loss(actors, critic, codec,
                                                no_states, no_obs, no_acts),
                    ConfigError);
  }
}

TEST_CASE("twin-critic update decomposes into the public primitives") {
  std::unique_ptr<envs::Env> envs_to_try[] = {
      envs::make_env("signal_lever"),
      envs::make_env("team_reach"),
  };
  for (const auto& env : envs_to_try) {
    CAPTURE(env->discrete_actions());
    auto codec = env->codec();
    auto algo = baselines::parse_algo("matd3-parps");
    Stack s1 = make_stack(*env, algo, 33);
    Stack s2 = s1;
    replay::Buffer buf1 = random_buffer(*env, 80, 7);
    replay::Buffer buf2 = buf1;
    auto st1 = baselines::UpdateStreams::make(11, algo.default_heads);
    auto st2 = baselines::UpdateStreams::make(11, algo.default_heads);
    gqc::PUConfig pu;
    const double gamma = 0.95, tau = 0.05;
    const std::size_t batch = 16;
    const auto& ordering = env->groups().ordering;

    auto losses = baselines::update_step(algo, s1.actors, s1.ensemble, buf1,
                                         batch, codec, pu, gamma, tau,
                                         ordering, st1);

    // hand-run the same sequence through the public pieces
    Mats m = split(*buf2.sample(batch, st2.head_sample[0]), codec);
    Eigen::MatrixXd next_enc = ccga::greedy_joint_encoded(
        s2.actors, m.next_obs, codec, gqc::Which::Target);
    Eigen::MatrixXd smoothed =
        gqc::smooth_encoded_actions(next_enc, codec.discrete, pu, st2.smooth);
    Eigen::MatrixXd q_next = gqc::ensemble_q_batch(
        s2.ensemble, m.next_states, smoothed, gqc::Which::Target);
    Eigen::VectorXd y = m.rewards;
    for (long r = 0; r < y.size(); ++r)
      if (!m.done[r]) y(r) += gamma * q_next.row(r).minCoeff();

    Eigen::MatrixXd no_ood(0, m.states.cols());
    Eigen::MatrixXd no_ood_a(0, codec.joint_dim());
    double critic_true = 0.0;
    for (int h = 0; h < s2.ensemble.heads(); ++h) {
      auto loss = gqc::gqc_loss(s2.ensemble, h, m.states, m.actions, y, no_ood,
                                no_ood_a, Eigen::VectorXd(0), 0.0);
      numkit::opt_step(s2.ensemble.opt[h], s2.ensemble.online[h], loss.grads);
      critic_true += loss.true_mse / s2.ensemble.heads();
    }

    Mats ma = split(*buf2.sample(batch, st2.actor_sample), codec);
    gqc::EnsembleCritic critic(s2.ensemble, gqc::Which::Online);
    auto ar = baselines::plain_actor_loss(s2.actors, critic, codec, ma.states,
                                          ma.obs, ma.actions);
    for (int g = 0; g < s2.actors.n_groups(); ++g)
      numkit::opt_step(s2.actors.opt[g], s2.actors.nets[g], ar.grads[g]);
    double unc = gqc::uncertainty_rows(
                     gqc::ensemble_q_batch(s2.ensemble, ma.states, ma.actions,
                                           gqc::Which::Target))
                     .mean();
    gqc::update_targets(s2.ensemble, tau);
    ccga::update_actor_targets(s2.actors, tau);

    CHECK(losses.critic_true == critic_true);
    CHECK(losses.critic_pu == 0.0);
    CHECK(losses.actor == ar.loss);
    CHECK(losses.uncertainty == unc);
    CHECK(same_bits(stack_fingerprint(s1), stack_fingerprint(s2)));
  }
}

TEST_CASE("update guards") {
  envs::SignalLeverEnv env;
  auto codec = env.codec();
  auto algo = baselines::parse_algo("matd3-parps");
  Stack s = make_stack(env, algo, 61);
  auto streams = baselines::UpdateStreams::make(2, algo.default_heads);
  gqc::PUConfig pu;
  const auto& ordering = env.groups().ordering;

  SUBCASE("empty buffer") {
    replay::Buffer empty(16);
    CHECK_THROWS_AS(baselines::update_step(algo, s.actors, s.ensemble, empty,
                                           8, codec, pu, 0.9, 0.05, ordering,
                                           streams),
                    ConfigError);
  }
  SUBCASE("zero batch") {
    replay::Buffer buf = random_buffer(env, 10, 1);
    CHECK_THROWS_AS(baselines::update_step(algo, s.actors, s.ensemble, buf, 0,
                                           codec, pu, 0.9, 0.05, ordering,
                                           streams),
                    ConfigError);
  }
  SUBCASE("stream count must match the head count") {
    replay::Buffer buf = random_buffer(env, 10, 1);
    auto wrong = baselines::UpdateStreams::make(2, algo.default_heads + 1);
    CHECK_THROWS_AS(baselines::update_step(algo, s.actors, s.ensemble, buf, 8,
                                           codec, pu, 0.9, 0.05, ordering,
                                           wrong),
                    ConfigError);
  }
}

TEST_CASE("checkpoint round trip") {
  envs::SignalLeverEnv env;
  auto codec = env.codec();
  auto algo = baselines::parse_algo("omdpg");
  Stack s = make_stack(env, algo, 17);
  replay::Buffer buf = random_buffer(env, 60, 3);
  auto streams = baselines::UpdateStreams::make(4, algo.default_heads);
  gqc::PUConfig pu;
  const auto& ordering = env.groups().ordering;
  for (int i = 0; i < 2; ++i)
    baselines::update_step(algo, s.actors, s.ensemble, buf, 8, codec, pu, 0.9,
                           0.05, ordering, streams);

  const std::string path = "/tmp/omdpg_stack_test.ckpt";
  snapshot::save_stack(path, s.actors, s.ensemble);

  // different seed: everything below must come from the file
  Stack fresh = make_stack(env, algo, 99);
  fresh.actors.st_temp = 0.123;
  snapshot::load_stack(path, fresh.actors, fresh.ensemble);

  CHECK(same_bits(stack_fingerprint(s), stack_fingerprint(fresh)));
  CHECK(fresh.actors.st_temp == s.actors.st_temp);
  CHECK(fresh.actors.expl_sigma == s.actors.expl_sigma);
  CHECK(fresh.actors.spec.assignment == s.actors.spec.assignment);
  CHECK(fresh.actors.spec.ordering == s.actors.spec.ordering);
  REQUIRE(fresh.actors.opt.size() == s.actors.opt.size());
  for (std::size_t g = 0; g < s.actors.opt.size(); ++g) {
    CHECK(fresh.actors.opt[g].step == s.actors.opt[g].step);
    CHECK(s.actors.opt[g].step > 0);
    CHECK((fresh.actors.opt[g].mw[0].array() ==
           s.actors.opt[g].mw[0].array())
              .all());
    CHECK((fresh.actors.opt[g].vw[0].array() ==
           s.actors.opt[g].vw[0].array())
              .all());
  }
  REQUIRE(fresh.ensemble.opt.size() == s.ensemble.opt.size());
  CHECK(fresh.ensemble.opt[0].step == s.ensemble.opt[0].step);

  SUBCASE("training continues identically from either copy") {
    auto st_a = baselines::UpdateStreams::make(21, algo.default_heads);
    auto st_b = baselines::UpdateStreams::make(21, algo.default_heads);
    replay::Buffer buf_a = buf;
    replay::Buffer buf_b = buf;
    for (int i = 0; i < 2; ++i) {
      auto la = baselines::update_step(algo, s.actors, s.ensemble, buf_a, 8,
                                       codec, pu, 0.9, 0.05, ordering, st_a);
      auto lb = baselines::update_step(algo, fresh.actors, fresh.ensemble,
                                       buf_b, 8, codec, pu, 0.9, 0.05,
                                       ordering, st_b);
      CHECK(la.critic_true == lb.critic_true);
      CHECK(la.actor == lb.actor);
    }
    CHECK(same_bits(stack_fingerprint(s), stack_fingerprint(fresh)));
  }

  SUBCASE("missing, corrupt, truncated") {
    ccga::GroupedActors a2 = s.actors;
    gqc::CriticEnsemble e2 = s.ensemble;
    CHECK_THROWS_AS(
        snapshot::load_stack("/tmp/omdpg_no_such_file.ckpt", a2, e2),
        ConfigError);

    const std::string bad = "/tmp/omdpg_bad_magic.ckpt";
    {
      std::ofstream out(bad, std::ios::binary);
      out.write("XXCKPT99", 8);
      for (int i = 0; i < 64; ++i) out.put('\0');
    }
    CHECK_THROWS_AS(snapshot::load_stack(bad, a2, e2), ConfigError);
    std::remove(bad.c_str());

    const std::string cut = "/tmp/omdpg_truncated.ckpt";
    {
      std::ifstream in(path, std::ios::binary);
      std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
      REQUIRE(bytes.size() > 128);
      std::ofstream out(cut, std::ios::binary);
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(snapshot::load_stack(cut, a2, e2), ConfigError);
    std::remove(cut.c_str());
  }

  std::remove(path.c_str());
}

TEST_CASE("update streams replay and stay mutually distinct") {
  auto a = baselines::UpdateStreams::make(5, 3);
  auto b = baselines::UpdateStreams::make(5, 3);
  CHECK(a.head_sample.size() == 3);
  CHECK(a.head_sample[0].next_u64() == b.head_sample[0].next_u64());
  CHECK(a.actor_sample.next_u64() == b.actor_sample.next_u64());
  CHECK(a.ood.next_u64() == b.ood.next_u64());

  auto c = baselines::UpdateStreams::make(5, 3);
  std::vector<std::uint64_t> first = {
      c.head_sample[0].next_u64(), c.head_sample[1].next_u64(),
      c.head_sample[2].next_u64(), c.actor_sample.next_u64(),
      c.ood.next_u64(),            c.smooth.next_u64(),
      c.order.next_u64()};
  for (std::size_t i = 0; i < first.size(); ++i)
    for (std::size_t j = i + 1; j < first.size(); ++j)
      CHECK(first[i] != first[j]);

  auto d = baselines::UpdateStreams::make(6, 3);
  CHECK(d.actor_sample.next_u64() != b.actor_sample.next_u64());
}
