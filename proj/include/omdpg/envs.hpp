#pragma once

#include <Eigen/Dense>
#include <memory>
#include <vector>

#include "omdpg/common.hpp"

namespace omdpg::envs {

// Agent grouping and the sequential update order. Agents sharing a group share
// actor parameters; `ordering[p]` is the agent updated at position p.
struct GroupSpec {
  int n_agents = 0;
  std::vector<int> assignment;  // agent -> group id, contiguous from 0
  std::vector<int> ordering;    // position -> agent

  int n_groups() const;
  std::vector<std::vector<int>> members() const;  // group -> agents
  void validate() const;

  static GroupSpec identity_order(std::vector<int> assignment);
};

// Joint action over all agents. Exactly one of the two payloads is used.
struct JointAction {
  std::vector<Eigen::VectorXd> cont;  // per-agent continuous action
  std::vector<int> disc;              // per-agent action index

  bool discrete() const { return !disc.empty(); }
  int n_agents() const {
    return static_cast<int>(discrete() ? disc.size() : cont.size());
  }
};

using JointObservation = std::vector<Eigen::VectorXd>;

struct EnvState {
  Eigen::VectorXd x;
  int t = 0;
};

struct StepResult {
  EnvState next;
  double reward = 0.0;
  bool done = false;
};

// Maps per-agent actions to the fixed-width critic input slots. Action index 0
// (discrete) and the zero vector (continuous) are the reserved no-op.
struct ActionCodec {
  bool discrete = false;
  int n_agents = 0;
  int slot_dim = 0;  // m for discrete, action dim for continuous

  Eigen::VectorXd encode_agent(const JointAction& a, int agent) const;
  Eigen::VectorXd encode_joint(const JointAction& a) const;
  Eigen::VectorXd noop_slot() const;
  int joint_dim() const { return n_agents * slot_dim; }
};

class Env {
 public:
  virtual ~Env() = default;
  virtual const GroupSpec& groups() const = 0;
  virtual int n_agents() const = 0;
  virtual int horizon() const = 0;
  virtual bool discrete_actions() const = 0;
  virtual int action_dim() const = 0;  // per agent: dim (cont) or m (disc)
  virtual int obs_dim() const = 0;
  virtual int state_dim() const = 0;
  virtual EnvState reset(std::uint64_t seed) const = 0;
  virtual JointObservation observe(const EnvState& s) const = 0;
  virtual Eigen::VectorXd state_vec(const EnvState& s) const = 0;
  virtual StepResult step(const EnvState& s, const JointAction& a) const = 0;

  ActionCodec codec() const {
    return ActionCodec{discrete_actions(), n_agents(), action_dim()};
  }
};

// Exhaustively tabulated cooperative one-shot game, optionally repeated for a
// short horizon. Payoff tensor is flat with agent 0 as the most significant
// digit, so the first argmax in a linear scan is the lexicographically
// smallest maximizer.
struct ExactGame {
  int n_agents = 0;
  int m = 0;  // actions per agent
  int horizon = 1;
  std::vector<double> payoff;  // m^n entries
  GroupSpec groups;

  std::size_t flat_index(const std::vector<int>& a) const;
  double at(const std::vector<int>& a) const;
  void validate() const;
};

struct GameEnumeration {
  double max_value = 0.0;
  std::vector<int> argmax;  // lexicographically smallest maximizer
};

// Refuses tensors above 10^6 entries.
GameEnumeration enumerate_game(const ExactGame& g);

// Three agents, three actions, groups (A, B, A). Additive per-agent shaping
// plus a +6 coordination bonus at (1,2,2); all-no-op pays exactly 0 and the
// unique maximum is 10 at (1,2,2). Each agent's shaping term makes its optimal
// action dominant, so the optimum is reachable by per-agent improvement.
ExactGame make_signal_lever();

class SignalLeverEnv : public Env {
 public:
  explicit SignalLeverEnv(ExactGame game);
  SignalLeverEnv() : SignalLeverEnv(make_signal_lever()) {}

  const ExactGame& game() const { return game_; }
  const GroupSpec& groups() const override { return game_.groups; }
  int n_agents() const override { return game_.n_agents; }
  int horizon() const override { return game_.horizon; }
  bool discrete_actions() const override { return true; }
  int action_dim() const override { return game_.m; }
  int obs_dim() const override { return game_.n_agents; }  // agent one-hot
  int state_dim() const override { return 1; }
  EnvState reset(std::uint64_t seed) const override;
  JointObservation observe(const EnvState& s) const override;
  Eigen::VectorXd state_vec(const EnvState& s) const override;
  StepResult step(const EnvState& s, const JointAction& a) const override;

 private:
  ExactGame game_;
};

// Two-dimensional double-integrator team with heterogeneous gear ratios.
// Collisions penalize reward only; dynamics never couple agents, so scaling a
// group's gear scales that group's displacements exactly.
struct TeamReachParams {
  int n_agents = 4;
  std::vector<int> assignment = {0, 0, 1, 1};   // scouts, haulers
  std::vector<double> group_gears = {1.0, 0.4};
  double dt = 0.1;
  double damping = 0.25;       // per-step velocity bleed
  double collision_radius = 0.07;
  double collision_penalty = 1.0;
  // wide enough that group mates stay mutually visible across a split onto
  // their landmark pair, narrow enough that the far pair's crew drops out of
  // view once the groups separate
  double visibility_radius = 0.6;
  double spawn_half_extent = 0.2;
  double spawn_min_dist = 0.1;
  int horizon = 25;
  // coordinates stay near the unit box so raw positions feed the nets at a
  // scale tanh layers handle without saturating, and each pair sits at the
  // edge of what its group can cover inside the horizon, so the episode is
  // spent in transit and return is dominated by how directly agents travel
  // both gear classes draw from the same central box, so at the first step
  // nothing in an observation says which class an agent belongs to; role has
  // to come from the group's own parameters
  std::vector<Eigen::Vector2d> group_spawn_centers = {
      Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d(0.0, 0.0)};
  // one pair per group: the right pair sits at a range only the slow haulers
  // can serve economically from the box, the left pair is out of hauler
  // reach entirely within the horizon, so the greedy matching always splits
  // the pairs by gear
  // the pairs sit close together, so carving up a pair means passing within
  // collision range unless the two agents commit to opposite sides early
  std::vector<Eigen::Vector2d> landmarks = {
      Eigen::Vector2d(0.45, -0.12), Eigen::Vector2d(0.45, 0.12),
      Eigen::Vector2d(-1.05, -0.12), Eigen::Vector2d(-1.05, 0.12)};

  void validate() const;
};

class TeamReachEnv : public Env {
 public:
  explicit TeamReachEnv(TeamReachParams params = {});

  const TeamReachParams& params() const { return p_; }
  double gear(int agent) const { return p_.group_gears[p_.assignment[agent]]; }
  const GroupSpec& groups() const override { return groups_; }
  int n_agents() const override { return p_.n_agents; }
  int horizon() const override { return p_.horizon; }
  bool discrete_actions() const override { return false; }
  int action_dim() const override { return 2; }
  int obs_dim() const override;
  int state_dim() const override;
  EnvState reset(std::uint64_t seed) const override;
  JointObservation observe(const EnvState& s) const override;
  Eigen::VectorXd state_vec(const EnvState& s) const override;
  StepResult step(const EnvState& s, const JointAction& a) const override;

  Eigen::Vector2d position(const EnvState& s, int agent) const;
  Eigen::Vector2d velocity(const EnvState& s, int agent) const;

 private:
  TeamReachParams p_;
  GroupSpec groups_;
};

// Greedy landmark assignment (cost = distance / gear) plus a damped
// velocity-tracking controller. Returns the episode return from the given
// spawn seed; serves as the performance reference.
double scripted_oracle_return(const TeamReachEnv& env, std::uint64_t seed);

// Factory keyed by the config-facing env name.
std::unique_ptr<Env> make_env(const std::string& name, int horizon_override = 0);

}  // namespace omdpg::envs
