#include "omdpg/oracle.hpp"

#include <cmath>

namespace omdpg::oracle {

Eigen::VectorXd TabularPolicy::probs(int agent) const {
  const Eigen::VectorXd& l = logits.at(agent);
  Eigen::VectorXd e = (l.array() - l.maxCoeff()).exp();
  return e / e.sum();
}

int TabularPolicy::greedy(int agent) const {
  Eigen::VectorXd p = probs(agent);
  int best = 0;
  for (int k = 1; k < p.size(); ++k)
    if (p(k) > p(best)) best = k;
  return best;
}

double ExactQ::at(int i, const std::vector<int>& prefix) const {
  if (i < 0 || i > n_agents) throw ShapeError("prefix level out of range");
  if (static_cast<int>(prefix.size()) != i)
    throw ShapeError("prefix length != level");
  std::size_t idx = 0;
  for (int p = 0; p < i; ++p) {
    if (prefix[p] < 0 || prefix[p] >= m)
      throw ConfigError("prefix digit out of range");
    idx = idx * static_cast<std::size_t>(m) + static_cast<std::size_t>(prefix[p]);
  }
  return levels[i][idx];
}

ExactQ exact_q(const envs::ExactGame& g, const TabularPolicy& pi) {
  g.validate();
  if (g.payoff.size() > 1000000)
    throw ConfigError("game tensor exceeds the enumeration size bound");
  if (pi.n_agents() != g.n_agents)
    throw ShapeError("policy arity does not match the game");
  for (int a = 0; a < g.n_agents; ++a)
    if (pi.logits[a].size() != g.m)
      throw ShapeError("policy arity does not match the game");

  ExactQ q;
  q.n_agents = g.n_agents;
  q.m = g.m;
  q.levels.resize(g.n_agents + 1);

  // deepest level: payoff reindexed from agent order to position order
  std::size_t full = g.payoff.size();
  q.levels[g.n_agents].resize(full);
  std::vector<int> digits(g.n_agents), by_agent(g.n_agents);
  for (std::size_t idx = 0; idx < full; ++idx) {
    std::size_t rem = idx;
    for (int p = g.n_agents - 1; p >= 0; --p) {
      digits[p] = static_cast<int>(rem % g.m);
      rem /= g.m;
    }
    for (int p = 0; p < g.n_agents; ++p)
      by_agent[g.groups.ordering[p]] = digits[p];
    q.levels[g.n_agents][idx] = g.at(by_agent);
  }

  for (int i = g.n_agents - 1; i >= 0; --i) {
    int agent = g.groups.ordering[i];
    Eigen::VectorXd p = pi.probs(agent);
    std::size_t count = q.levels[i + 1].size() / g.m;
    q.levels[i].resize(count);
    for (std::size_t idx = 0; idx < count; ++idx) {
      double acc = 0.0;
      for (int k = 0; k < g.m; ++k)
        acc += p(k) * q.levels[i + 1][idx * g.m + k];
      q.levels[i][idx] = acc;
    }
  }
  return q;
}

double exact_omq(const envs::ExactGame& g, const TabularPolicy& pi, int i,
                 const std::vector<int>& prefix) {
  g.validate();
  if (i < 1 || i > g.n_agents) throw ShapeError("prefix level out of range");
  if (static_cast<int>(prefix.size()) != i)
    throw ShapeError("prefix length != level");

  std::vector<int> by_position(g.n_agents);
  for (int p = 0; p < i; ++p) by_position[p] = prefix[p];
  for (int p = i; p < g.n_agents; ++p)
    by_position[p] = pi.greedy(g.groups.ordering[p]);

  std::vector<int> by_agent(g.n_agents);
  for (int p = 0; p < g.n_agents; ++p)
    by_agent[g.groups.ordering[p]] = by_position[p];
  double q1 = g.at(by_agent);

  by_agent[g.groups.ordering[i - 1]] = 0;  // reserved no-op
  double q0 = g.at(by_agent);
  return q1 - q0;
}

namespace {

Eigen::VectorXd softmax(const Eigen::VectorXd& l) {
  Eigen::VectorXd e = (l.array() - l.maxCoeff()).exp();
  return e / e.sum();
}

// expected payoff with agent `fixed` pinned to `value` (or free if fixed < 0),
// all other agents playing the given per-agent distributions
double expected_payoff(const envs::ExactGame& g,
                       const std::vector<Eigen::VectorXd>& probs, int fixed,
                       int value) {
  std::vector<int> a(g.n_agents, 0);
  double total = 0.0;
  while (true) {
    double w = 1.0;
    bool skip = false;
    for (int j = 0; j < g.n_agents; ++j) {
      if (j == fixed) {
        if (a[j] != value) {
          skip = true;
          break;
        }
      } else {
        w *= probs[j](a[j]);
      }
    }
    if (!skip) total += w * g.at(a);
    int j = g.n_agents - 1;
    while (j >= 0 && ++a[j] == g.m) a[j--] = 0;
    if (j < 0) break;
  }
  return total;
}

// exact ascent direction for one agent's logits: grad_k = p_k (E[R|k] - E[R])
Eigen::VectorXd ascent_gradient(const envs::ExactGame& g,
                                const std::vector<Eigen::VectorXd>& probs,
                                int agent) {
  Eigen::VectorXd p = probs[agent];
  Eigen::VectorXd cond(g.m);
  for (int k = 0; k < g.m; ++k)
    cond(k) = expected_payoff(g, probs, agent, k);
  double base = p.dot(cond);
  return (p.array() * (cond.array() - base)).matrix();
}

double product_ratio(const std::vector<Eigen::VectorXd>& num,
                     const std::vector<Eigen::VectorXd>& den,
                     const std::vector<int>& action, int upto) {
  double f = 1.0;
  for (int j = 0; j < upto; ++j)
    f *= softmax(num[j])(action[j]) / softmax(den[j])(action[j]);
  return f;
}

}  // namespace

RatioReport ratio_diagnostic(const envs::ExactGame& g,
                             const std::vector<Eigen::VectorXd>& init_logits,
                             double lr) {
  g.validate();
  const auto& spec = g.groups;
  bool aba = g.n_agents == 3 && spec.assignment == std::vector<int>{0, 1, 0};
  for (int p = 0; p < g.n_agents && aba; ++p)
    if (spec.ordering[p] != p) aba = false;
  if (!aba)
    throw ConfigError("ratio diagnostic requires the (A, B, A) group layout");
  if (static_cast<int>(init_logits.size()) != spec.n_groups())
    throw ConfigError("one initial logits row per group required");
  for (const auto& l : init_logits)
    if (l.size() != g.m) throw ShapeError("logits arity mismatch");
  if (lr < 0.0) throw ConfigError("learning rate must be non-negative");

  int n = g.n_agents;
  RatioReport rep;
  rep.n_agents = n;
  rep.lr = lr;

  auto agent_init = [&](int a) { return init_logits[spec.assignment[a]]; };

  // evaluation action: per-agent argmax of the initial policies
  rep.eval_action.resize(n);
  for (int a = 0; a < n; ++a) {
    Eigen::VectorXd p = softmax(agent_init(a));
    int best = 0;
    for (int k = 1; k < g.m; ++k)
      if (p(k) > p(best)) best = k;
    rep.eval_action[a] = best;
  }
  const std::vector<int>& act = rep.eval_action;

  // ---- private-parameter run -------------------------------------------
  // stores and round-start snapshots per agent
  {
    std::vector<Eigen::VectorXd> store(n), snap(n);
    for (int a = 0; a < n; ++a) store[a] = snap[a] = agent_init(a);
    rep.f_nops.resize(n);
    for (int p = 0; p < n; ++p) {
      rep.f_nops[p] = product_ratio(store, snap, act, p);
      std::vector<Eigen::VectorXd> probs(n);
      // predecessors live, self live, successors at round start
      for (int j = 0; j < n; ++j)
        probs[j] = softmax(j <= p ? store[j] : snap[j]);
      store[p] += lr * ascent_gradient(g, probs, p);
    }
  }

  // ---- shared-parameter run (drift and frozen baselines together) -------
  {
    int K = spec.n_groups();
    std::vector<Eigen::VectorXd> gstore(K), gfrozen(K), gold(K);
    for (int k = 0; k < K; ++k) gstore[k] = gfrozen[k] = gold[k] = init_logits[k];
    // round-start per-agent view for successor policies
    std::vector<Eigen::VectorXd> snap(n);
    for (int a = 0; a < n; ++a) snap[a] = agent_init(a);

    rep.f_drift.resize(n);
    rep.f_fpb.resize(n);
    for (int p = 0; p < n; ++p) {
      int gp = spec.assignment[p];
      // a shared old-policy record cannot keep the pre-round state once a
      // groupmate has written to the storage: refresh at turn start
      gold[gp] = gstore[gp];

      std::vector<Eigen::VectorXd> live(n), den_drift(n), den_fpb(n);
      for (int j = 0; j < n; ++j) {
        live[j] = gstore[spec.assignment[j]];
        den_drift[j] = gold[spec.assignment[j]];
        den_fpb[j] = gfrozen[spec.assignment[j]];
      }
      rep.f_drift[p] = product_ratio(live, den_drift, act, p);
      rep.f_fpb[p] = product_ratio(live, den_fpb, act, p);

      std::vector<Eigen::VectorXd> probs(n);
      for (int j = 0; j < n; ++j)
        probs[j] = softmax(j <= p ? live[j] : snap[j]);
      gstore[gp] += lr * ascent_gradient(g, probs, p);
    }
  }

  rep.gap_drift_fpb.resize(n);
  rep.gap_nops_fpb.resize(n);
  for (int p = 0; p < n; ++p) {
    rep.gap_drift_fpb[p] = std::abs(std::log(rep.f_drift[p]) - std::log(rep.f_fpb[p]));
    rep.gap_nops_fpb[p] = std::abs(std::log(rep.f_nops[p]) - std::log(rep.f_fpb[p]));
  }
  rep.headline_gap = rep.gap_drift_fpb[n - 1];
  return rep;
}

}  // namespace omdpg::oracle
