#pragma once

#include <Eigen/Dense>
#include <vector>

#include "omdpg/common.hpp"
#include "omdpg/envs.hpp"

namespace omdpg::oracle {

// Softmax policy table, one logits row per agent.
struct TabularPolicy {
  std::vector<Eigen::VectorXd> logits;

  Eigen::VectorXd probs(int agent) const;
  // argmax of probs, ties resolved to the smallest index
  int greedy(int agent) const;
  int n_agents() const { return static_cast<int>(logits.size()); }
};

// Exact prefix action values by backward recursion. levels[i] holds
// Q(a at ordering positions 0..i-1) for all m^i prefixes, the expectation
// running over the policy at the remaining positions. levels[0][0] is V.
struct ExactQ {
  int n_agents = 0;
  int m = 0;
  std::vector<std::vector<double>> levels;

  double value() const { return levels[0][0]; }
  double at(int i, const std::vector<int>& prefix) const;
};

ExactQ exact_q(const envs::ExactGame& g, const TabularPolicy& pi);

// Marginal value of the prefix's last action against the reserved no-op,
// with positions beyond the prefix completed by the per-agent policy argmax.
double exact_omq(const envs::ExactGame& g, const TabularPolicy& pi, int i,
                 const std::vector<int>& prefix);

// Compound importance ratios F_i at a fixed evaluation action, computed under
// three bookkeeping schemes after one exact sequential ascent round:
//   nops  - private per-agent logits; old policies are round-start snapshots
//   drift - shared group logits; each group's old-policy record is refreshed
//           when a member's update turn begins, so a group's earlier update
//           poisons the record a later member's ratio needs
//   fpb   - shared group logits with old policies frozen at round start
// The updates themselves are identical gradient-ascent steps in every scheme:
// one step per agent, in order, on the exact expected payoff with
// predecessors live, successors at their round-start policies.
struct RatioReport {
  int n_agents = 0;
  double lr = 0.0;
  std::vector<int> eval_action;
  std::vector<double> f_nops, f_drift, f_fpb;
  std::vector<double> gap_drift_fpb;  // |log F_drift - log F_fpb| per agent
  std::vector<double> gap_nops_fpb;   // |log F_nops - log F_fpb| per agent
  double headline_gap = 0.0;          // drift-vs-fpb gap at the last agent
};

// Requires the (A, B, A) layout: three agents, identity ordering, agents 0
// and 2 sharing a group. init_logits holds one row per group.
RatioReport ratio_diagnostic(const envs::ExactGame& g,
                             const std::vector<Eigen::VectorXd>& init_logits,
                             double lr);

}  // namespace omdpg::oracle
