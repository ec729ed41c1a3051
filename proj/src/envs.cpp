#include "omdpg/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace omdpg::envs {

int GroupSpec::n_groups() const {
  int k = 0;
  for (int g : assignment) k = std::max(k, g + 1);
  return k;
}

std::vector<std::vector<int>> GroupSpec::members() const {
  std::vector<std::vector<int>> out(n_groups());
  for (int a = 0; a < n_agents; ++a) out[assignment[a]].push_back(a);
  return out;
}

void GroupSpec::validate() const {
  if (n_agents <= 0) throw ConfigError("group spec needs at least one agent");
  if (static_cast<int>(assignment.size()) != n_agents)
    throw ConfigError("group assignment length != n_agents");
  if (static_cast<int>(ordering.size()) != n_agents)
    throw ConfigError("ordering length != n_agents");
  int k = n_groups();
  std::vector<bool> seen_group(k, false);
  for (int g : assignment) {
    if (g < 0 || g >= k) throw ConfigError("group id out of range");
    seen_group[g] = true;
  }
  for (bool s : seen_group)
    if (!s) throw ConfigError("group ids must be contiguous from 0");
  std::vector<bool> seen(n_agents, false);
  for (int a : ordering) {
    if (a < 0 || a >= n_agents || seen[a])
      throw ConfigError("ordering is not a permutation of agents");
    seen[a] = true;
  }
}

GroupSpec GroupSpec::identity_order(std::vector<int> assignment) {
  GroupSpec s;
  s.n_agents = static_cast<int>(assignment.size());
  s.assignment = std::move(assignment);
  s.ordering.resize(s.n_agents);
  std::iota(s.ordering.begin(), s.ordering.end(), 0);
  s.validate();
  return s;
}

Eigen::VectorXd ActionCodec::encode_agent(const JointAction& a,
                                          int agent) const {
  if (agent < 0 || agent >= n_agents) throw ShapeError("agent out of range");
  if (a.discrete() != discrete)
    throw ShapeError("action payload does not match codec");
  if (discrete) {
    int idx = a.disc.at(agent);
    if (idx < 0 || idx >= slot_dim)
      throw ConfigError("discrete action index out of range");
    Eigen::VectorXd v = Eigen::VectorXd::Zero(slot_dim);
    v(idx) = 1.0;
    return v;
  }
  const Eigen::VectorXd& v = a.cont.at(agent);
  if (v.size() != slot_dim) throw ShapeError("continuous action width mismatch");
  return v;
}

Eigen::VectorXd ActionCodec::encode_joint(const JointAction& a) const {
  if (a.n_agents() != n_agents) throw ShapeError("joint action arity mismatch");
  Eigen::VectorXd out(joint_dim());
  for (int i = 0; i < n_agents; ++i)
    out.segment(i * slot_dim, slot_dim) = encode_agent(a, i);
  return out;
}

Eigen::VectorXd ActionCodec::noop_slot() const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(slot_dim);
  if (discrete) v(0) = 1.0;
  return v;
}

std::size_t ExactGame::flat_index(const std::vector<int>& a) const {
  if (static_cast<int>(a.size()) != n_agents)
    throw ShapeError("joint action arity mismatch");
  std::size_t idx = 0;
  for (int i = 0; i < n_agents; ++i) {
    if (a[i] < 0 || a[i] >= m)
      throw ConfigError("discrete action index out of range");
    idx = idx * static_cast<std::size_t>(m) + static_cast<std::size_t>(a[i]);
  }
  return idx;
}

double ExactGame::at(const std::vector<int>& a) const {
  return payoff[flat_index(a)];
}

void ExactGame::validate() const {
  if (n_agents <= 0 || m <= 0) throw ConfigError("game needs agents and actions");
  std::size_t want = 1;
  for (int i = 0; i < n_agents; ++i) want *= static_cast<std::size_t>(m);
  if (payoff.size() != want)
    throw ShapeError("payoff tensor size != m^n");
  groups.validate();
  if (groups.n_agents != n_agents)
    throw ConfigError("group spec arity mismatch");
}

GameEnumeration enumerate_game(const ExactGame& g) {
  g.validate();
  if (g.payoff.size() > 1000000)
    throw ConfigError("game tensor exceeds the enumeration size bound");
  GameEnumeration e;
  std::size_t best = 0;
  for (std::size_t i = 1; i < g.payoff.size(); ++i)
    if (g.payoff[i] > g.payoff[best]) best = i;
  e.max_value = g.payoff[best];
  e.argmax.assign(g.n_agents, 0);
  std::size_t rem = best;
  for (int i = g.n_agents - 1; i >= 0; --i) {
    e.argmax[i] = static_cast<int>(rem % static_cast<std::size_t>(g.m));
    rem /= static_cast<std::size_t>(g.m);
  }
  return e;
}

ExactGame make_signal_lever() {
  ExactGame g;
  g.n_agents = 3;
  g.m = 3;
  g.horizon = 1;
  g.groups = GroupSpec::identity_order({0, 1, 0});
  const double solo[3][3] = {
      {0.0, 1.0, 0.5}, {0.0, 0.5, 1.0}, {0.0, 0.5, 2.0}};
  g.payoff.resize(27);
  std::vector<int> a(3);
  for (a[0] = 0; a[0] < 3; ++a[0])
    for (a[1] = 0; a[1] < 3; ++a[1])
      for (a[2] = 0; a[2] < 3; ++a[2]) {
        double r = solo[0][a[0]] + solo[1][a[1]] + solo[2][a[2]];
        if (a[0] == 1 && a[1] == 2 && a[2] == 2) r += 6.0;
        g.payoff[g.flat_index(a)] = r;
      }
  return g;
}

SignalLeverEnv::SignalLeverEnv(ExactGame game) : game_(std::move(game)) {
  game_.validate();
}

EnvState SignalLeverEnv::reset(std::uint64_t) const {
  EnvState s;
  s.x = Eigen::VectorXd::Ones(1);
  s.t = 0;
  return s;
}

JointObservation SignalLeverEnv::observe(const EnvState&) const {
  JointObservation obs(game_.n_agents);
  for (int i = 0; i < game_.n_agents; ++i) {
    obs[i] = Eigen::VectorXd::Zero(game_.n_agents);
    obs[i](i) = 1.0;
  }
  return obs;
}

Eigen::VectorXd SignalLeverEnv::state_vec(const EnvState& s) const {
  return s.x;
}

StepResult SignalLeverEnv::step(const EnvState& s, const JointAction& a) const {
  if (!a.discrete()) throw ShapeError("discrete env got continuous actions");
  StepResult r;
  r.reward = game_.at(a.disc);
  r.next = s;
  r.next.t = s.t + 1;
  r.done = r.next.t >= game_.horizon;
  return r;
}

void TeamReachParams::validate() const {
  if (n_agents <= 0) throw ConfigError("need at least one agent");
  if (static_cast<int>(assignment.size()) != n_agents)
    throw ConfigError("assignment length != n_agents");
  for (int g : assignment)
    if (g < 0 || g >= static_cast<int>(group_gears.size()))
      throw ConfigError("gear group out of range");
  for (double g : group_gears)
    if (g <= 0.0) throw ConfigError("gears must be positive");
  if (damping < 0.0 || damping >= 1.0)
    throw ConfigError("damping must lie in [0, 1)");
  if (dt <= 0.0) throw ConfigError("dt must be positive");
  if (horizon <= 0) throw ConfigError("horizon must be positive");
  if (landmarks.empty()) throw ConfigError("need at least one landmark");
  if (group_spawn_centers.size() != group_gears.size())
    throw ConfigError("one spawn box per gear group required");
}

TeamReachEnv::TeamReachEnv(TeamReachParams params) : p_(std::move(params)) {
  p_.validate();
  groups_ = GroupSpec::identity_order(p_.assignment);
}

int TeamReachEnv::obs_dim() const {
  // own pos + own vel + landmark offsets + masked other-agent offsets
  return 4 + 2 * static_cast<int>(p_.landmarks.size()) +
         2 * (p_.n_agents - 1);
}

int TeamReachEnv::state_dim() const {
  return 4 * p_.n_agents + 2 * static_cast<int>(p_.landmarks.size());
}

// state layout: [pos_0 .. pos_{n-1}, vel_0 .. vel_{n-1}]
Eigen::Vector2d TeamReachEnv::position(const EnvState& s, int agent) const {
  return s.x.segment<2>(2 * agent);
}

Eigen::Vector2d TeamReachEnv::velocity(const EnvState& s, int agent) const {
  return s.x.segment<2>(2 * p_.n_agents + 2 * agent);
}

EnvState TeamReachEnv::reset(std::uint64_t seed) const {
  RngStream rng = RngStream::named(seed, "spawn");
  EnvState s;
  s.x = Eigen::VectorXd::Zero(4 * p_.n_agents);
  s.t = 0;
  // rejection-sample spawn positions until pairwise separated; each agent
  // draws inside its own group's box
  for (int attempt = 0; attempt < 10000; ++attempt) {
    for (int i = 0; i < p_.n_agents; ++i) {
      const Eigen::Vector2d& c = p_.group_spawn_centers[p_.assignment[i]];
      s.x(2 * i) =
          c.x() + rng.uniform(-p_.spawn_half_extent, p_.spawn_half_extent);
      s.x(2 * i + 1) =
          c.y() + rng.uniform(-p_.spawn_half_extent, p_.spawn_half_extent);
    }
    bool ok = true;
    for (int i = 0; i < p_.n_agents && ok; ++i)
      for (int j = i + 1; j < p_.n_agents && ok; ++j)
        if ((position(s, i) - position(s, j)).norm() <= p_.spawn_min_dist)
          ok = false;
    if (ok) return s;
  }
  throw NumericError("spawn rejection sampling failed to separate agents");
}

JointObservation TeamReachEnv::observe(const EnvState& s) const {
  JointObservation obs(p_.n_agents);
  int L = static_cast<int>(p_.landmarks.size());
  for (int i = 0; i < p_.n_agents; ++i) {
    Eigen::VectorXd o(obs_dim());
    Eigen::Vector2d pi = position(s, i);
    o.segment<2>(0) = pi;
    o.segment<2>(2) = velocity(s, i);
    for (int l = 0; l < L; ++l)
      o.segment<2>(4 + 2 * l) = p_.landmarks[l] - pi;
    int k = 0;
    for (int j = 0; j < p_.n_agents; ++j) {
      if (j == i) continue;
      Eigen::Vector2d d = position(s, j) - pi;
      if (d.norm() > p_.visibility_radius) d.setZero();
      o.segment<2>(4 + 2 * L + 2 * k) = d;
      ++k;
    }
    obs[i] = o;
  }
  return obs;
}

Eigen::VectorXd TeamReachEnv::state_vec(const EnvState& s) const {
  Eigen::VectorXd v(state_dim());
  v.head(4 * p_.n_agents) = s.x;
  for (std::size_t l = 0; l < p_.landmarks.size(); ++l)
    v.segment<2>(4 * p_.n_agents + 2 * static_cast<int>(l)) = p_.landmarks[l];
  return v;
}

StepResult TeamReachEnv::step(const EnvState& s, const JointAction& a) const {
  if (a.discrete()) throw ShapeError("continuous env got discrete actions");
  if (a.n_agents() != p_.n_agents) throw ShapeError("joint action arity mismatch");
  StepResult r;
  r.next = s;
  r.next.t = s.t + 1;
  for (int i = 0; i < p_.n_agents; ++i) {
    if (a.cont[i].size() != 2) throw ShapeError("action width must be 2");
    Eigen::Vector2d acc = a.cont[i].cwiseMax(-1.0).cwiseMin(1.0);
    Eigen::Vector2d vel = (1.0 - p_.damping) * velocity(s, i) +
                          gear(i) * acc * p_.dt;
    r.next.x.segment<2>(2 * p_.n_agents + 2 * i) = vel;
    r.next.x.segment<2>(2 * i) = position(s, i) + vel * p_.dt;
  }
  double reward = 0.0;
  for (const auto& lm : p_.landmarks) {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < p_.n_agents; ++i)
      best = std::min(best, (position(r.next, i) - lm).norm());
    reward -= best;
  }
  for (int i = 0; i < p_.n_agents; ++i)
    for (int j = i + 1; j < p_.n_agents; ++j)
      if ((position(r.next, i) - position(r.next, j)).norm() <
          p_.collision_radius)
        reward -= p_.collision_penalty;
  r.reward = reward;
  r.done = r.next.t >= p_.horizon;
  return r;
}

double scripted_oracle_return(const TeamReachEnv& env, std::uint64_t seed) {
  const auto& p = env.params();
  EnvState s = env.reset(seed);
  int n = p.n_agents;
  int L = static_cast<int>(p.landmarks.size());
  // exact assignment over all agent->landmark matchings; cost approximates
  // the integral of distance while closing at gear-limited speed
  std::vector<int> target(n, -1);
  {
    std::vector<int> perm(std::max(n, L));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best_perm;
    double best_cost = std::numeric_limits<double>::infinity();
    std::sort(perm.begin(), perm.end());
    do {
      double cost = 0.0;
      for (int i = 0; i < n; ++i) {
        if (perm[i] >= L) continue;
        double d = (env.position(s, i) - p.landmarks[perm[i]]).norm();
        double vmax = env.gear(i) * p.dt / p.damping;
        cost += d * d / (2.0 * vmax) + d;
      }
      if (cost < best_cost) {
        best_cost = cost;
        best_perm = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    for (int i = 0; i < n; ++i)
      if (best_perm[i] < L) target[i] = best_perm[i];
  }
  double ret = 0.0;
  for (int t = 0; t < p.horizon; ++t) {
    JointAction a;
    a.cont.resize(n);
    for (int i = 0; i < n; ++i) {
      if (target[i] < 0) {
        a.cont[i] = Eigen::Vector2d::Zero();
        continue;
      }
      Eigen::Vector2d to = p.landmarks[target[i]] - env.position(s, i);
      double dist = to.norm();
      Eigen::Vector2d dir =
          dist > 1e-12 ? Eigen::Vector2d(to / dist) : Eigen::Vector2d::Zero();
      // desired speed: terminal velocity far away, proportional braking near
      double vmax = env.gear(i) * p.dt / p.damping;
      double want = std::min(vmax, dist / (1.5 * p.dt));
      Eigen::Vector2d v_des = dir * want;
      Eigen::Vector2d acc = (v_des - (1.0 - p.damping) * env.velocity(s, i)) /
                            (env.gear(i) * p.dt);
      a.cont[i] = acc.cwiseMax(-1.0).cwiseMin(1.0);
    }
    StepResult r = env.step(s, a);
    ret += r.reward;
    s = r.next;
    if (r.done) break;
  }
  return ret;
}

std::unique_ptr<Env> make_env(const std::string& name, int horizon_override) {
  if (name == "signal_lever") {
    ExactGame g = make_signal_lever();
    if (horizon_override > 0) g.horizon = horizon_override;
    return std::make_unique<SignalLeverEnv>(std::move(g));
  }
  if (name == "team_reach") {
    TeamReachParams p;
    if (horizon_override > 0) p.horizon = horizon_override;
    return std::make_unique<TeamReachEnv>(std::move(p));
  }
  throw ConfigError("unknown env: " + name);
}

}  // namespace omdpg::envs
