#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "omdpg/oracle.hpp"

using namespace omdpg;
using namespace omdpg::envs;
using namespace omdpg::oracle;

namespace {

ExactGame two_by_two() {
  ExactGame g;
  g.n_agents = 2;
  g.m = 2;
  g.groups = GroupSpec::identity_order({0, 0});
  g.payoff = {0.0, 1.0, 1.0, 3.0};
  return g;
}

TabularPolicy uniform_policy(int n, int m) {
  TabularPolicy pi;
  pi.logits.assign(n, Eigen::VectorXd::Zero(m));
  return pi;
}

TabularPolicy random_policy(int n, int m, std::uint64_t seed) {
  RngStream rng(seed);
  TabularPolicy pi;
  pi.logits.resize(n);
  for (int a = 0; a < n; ++a) {
    pi.logits[a].resize(m);
    for (int k = 0; k < m; ++k) pi.logits[a](k) = rng.uniform(-2.0, 2.0);
  }
  return pi;
}

ExactGame random_game(int n, int m, std::uint64_t seed) {
  RngStream rng(seed);
  ExactGame g;
  g.n_agents = n;
  g.m = m;
  g.groups = GroupSpec::identity_order(std::vector<int>(n, 0));
  std::size_t total = 1;
  for (int i = 0; i < n; ++i) total *= m;
  g.payoff.resize(total);
  for (auto& v : g.payoff) v = rng.uniform(-10.0, 10.0);
  return g;
}

}  // namespace

TEST_CASE("uniform policy value of the tiny game is 1.25") {
  ExactQ q = exact_q(two_by_two(), uniform_policy(2, 2));
  CHECK(q.value() == doctest::Approx(1.25).epsilon(1e-15));
}

TEST_CASE("deterministic policy value picks out one payoff entry") {
  TabularPolicy pi;
  pi.logits = {Eigen::Vector2d(-50.0, 50.0), Eigen::Vector2d(50.0, -50.0)};
  // agent 0 plays 1, agent 1 plays 0 -> payoff(1,0) = 1
  ExactQ q = exact_q(two_by_two(), pi);
  CHECK(q.value() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("deepest level equals the payoff tensor") {
  ExactGame g = random_game(3, 3, 5);
  TabularPolicy pi = random_policy(3, 3, 6);
  ExactQ q = exact_q(g, pi);
  std::vector<int> a(3);
  for (a[0] = 0; a[0] < 3; ++a[0])
    for (a[1] = 0; a[1] < 3; ++a[1])
      for (a[2] = 0; a[2] < 3; ++a[2])
        CHECK(q.at(3, a) == g.at(a));
}

TEST_CASE("tower property holds on random games to 1e-12") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ExactGame g = random_game(3, 4, 100 + seed);
    TabularPolicy pi = random_policy(3, 4, 200 + seed);
    ExactQ q = exact_q(g, pi);
    for (int i = 0; i < 3; ++i) {
      Eigen::VectorXd p = pi.probs(g.groups.ordering[i]);
      std::vector<int> prefix(i, 0);
      // iterate all prefixes of length i
      while (true) {
        double lhs = 0.0;
        std::vector<int> ext = prefix;
        ext.push_back(0);
        for (int k = 0; k < 4; ++k) {
          ext[i] = k;
          lhs += p(k) * q.at(i + 1, ext);
        }
        CHECK(std::abs(lhs - q.at(i, prefix)) < 1e-12);
        int j = i - 1;
        while (j >= 0 && ++prefix[j] == 4) prefix[j--] = 0;
        if (j < 0) break;
      }
      if (i == 0) continue;
    }
  }
}

TEST_CASE("sequential differences telescope to Q(a) minus V") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ExactGame g = random_game(4, 3, 300 + seed);
    TabularPolicy pi = random_policy(4, 3, 400 + seed);
    ExactQ q = exact_q(g, pi);
    RngStream rng(500 + seed);
    std::vector<int> a(4);
    for (int i = 0; i < 4; ++i) a[i] = rng.uniform_int(3);
    double sum = 0.0;
    for (int i = 1; i <= 4; ++i) {
      std::vector<int> cur(a.begin(), a.begin() + i);
      std::vector<int> prev(a.begin(), a.begin() + i - 1);
      sum += q.at(i, cur) - q.at(i - 1, prev);
    }
    CHECK(std::abs(sum - (q.at(4, a) - q.value())) < 1e-10);
  }
}

TEST_CASE("marginal value of the no-op is exactly zero") {
  ExactGame g = make_signal_lever();
  TabularPolicy pi = random_policy(3, 3, 77);
  for (int i = 1; i <= 3; ++i) {
    std::vector<int> prefix(i, 0);
    // any prefix whose last digit is the no-op
    prefix[i - 1] = 0;
    CHECK(exact_omq(g, pi, i, prefix) == 0.0);
  }
}

TEST_CASE("tiny game marginal matches the tensor lookup arithmetic") {
  ExactGame g = two_by_two();
  TabularPolicy pi;
  // greedy completion for agent 1 is action 1
  pi.logits = {Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d(-1.0, 1.0)};
  double v = exact_omq(g, pi, 1, {1});
  CHECK(v == doctest::Approx(2.0).epsilon(1e-15));  // Q(1,1)-Q(0,1) = 3-1
}

TEST_CASE("additive payoffs make the marginal independent of completion") {
  RngStream rng(31);
  int n = 3, m = 4;
  std::vector<std::vector<double>> r(n, std::vector<double>(m));
  for (auto& row : r)
    for (auto& v : row) v = rng.uniform(-3.0, 3.0);
  ExactGame g;
  g.n_agents = n;
  g.m = m;
  g.groups = GroupSpec::identity_order({0, 0, 0});
  g.payoff.resize(64);
  std::vector<int> a(n);
  for (a[0] = 0; a[0] < m; ++a[0])
    for (a[1] = 0; a[1] < m; ++a[1])
      for (a[2] = 0; a[2] < m; ++a[2])
        g.payoff[g.flat_index(a)] = r[0][a[0]] + r[1][a[1]] + r[2][a[2]];

  for (std::uint64_t s = 0; s < 5; ++s) {
    TabularPolicy pi = random_policy(n, m, 600 + s);
    for (int i = 1; i <= n; ++i) {
      std::vector<int> prefix(i);
      for (int p = 0; p < i; ++p) prefix[p] = RngStream(700 + s + p).uniform_int(m);
      double want = r[i - 1][prefix[i - 1]] - r[i - 1][0];
      CHECK(exact_omq(g, pi, i, prefix) == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("zero learning rate leaves every ratio at one") {
  ExactGame g = make_signal_lever();
  std::vector<Eigen::VectorXd> init = {Eigen::Vector3d(0.1, -0.2, 0.3),
                                       Eigen::Vector3d(0.0, 0.5, -0.5)};
  RatioReport rep = ratio_diagnostic(g, init, 0.0);
  for (int i = 0; i < 3; ++i) {
    CHECK(rep.f_nops[i] == 1.0);
    CHECK(rep.f_drift[i] == 1.0);
    CHECK(rep.f_fpb[i] == 1.0);
  }
  CHECK(rep.headline_gap == 0.0);
}

TEST_CASE("private parameters match frozen baselines exactly") {
  ExactGame g = make_signal_lever();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngStream rng(seed);
    std::vector<Eigen::VectorXd> init(2);
    for (auto& l : init) {
      l.resize(3);
      for (int k = 0; k < 3; ++k) l(k) = rng.uniform(-1.0, 1.0);
    }
    for (double lr : {1e-3, 0.1, 0.5}) {
      RatioReport rep = ratio_diagnostic(g, init, lr);
      for (int i = 0; i < 3; ++i) CHECK(rep.gap_nops_fpb[i] == 0.0);
    }
  }
}

TEST_CASE("shared-parameter drift opens a gap at the third agent") {
  ExactGame g = make_signal_lever();
  std::vector<Eigen::VectorXd> init = {Eigen::VectorXd::Zero(3),
                                       Eigen::VectorXd::Zero(3)};
  RatioReport rep = ratio_diagnostic(g, init, 0.1);
  CHECK(rep.headline_gap > 0.01);
  // the first two ratios stay clean under every scheme
  CHECK(rep.gap_drift_fpb[0] == 0.0);
  CHECK(rep.gap_drift_fpb[1] == 0.0);
  MESSAGE("headline gap at lr 0.1: ", rep.headline_gap);
}

TEST_CASE("drift gap shrinks toward zero with the learning rate") {
  ExactGame g = make_signal_lever();
  std::vector<Eigen::VectorXd> init = {Eigen::VectorXd::Zero(3),
                                       Eigen::VectorXd::Zero(3)};
  double tiny = ratio_diagnostic(g, init, 1e-6).headline_gap;
  double big = ratio_diagnostic(g, init, 1e-1).headline_gap;
  CHECK(tiny < big);
  CHECK(tiny < 1e-5);
}

TEST_CASE("constant payoffs yield a degenerate zero report") {
  ExactGame g = make_signal_lever();
  for (auto& v : g.payoff) v = 4.2;
  std::vector<Eigen::VectorXd> init = {Eigen::Vector3d(0.3, 0.0, -0.3),
                                       Eigen::VectorXd::Zero(3)};
  RatioReport rep = ratio_diagnostic(g, init, 0.2);
  for (int i = 0; i < 3; ++i) {
    CHECK(rep.f_drift[i] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rep.gap_drift_fpb[i] == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("diagnostic enforces the required group layout") {
  ExactGame g = make_signal_lever();
  g.groups = GroupSpec::identity_order({0, 1, 2});
  std::vector<Eigen::VectorXd> init = {Eigen::VectorXd::Zero(3),
                                       Eigen::VectorXd::Zero(3),
                                       Eigen::VectorXd::Zero(3)};
  CHECK_THROWS_AS(ratio_diagnostic(g, init, 0.1), ConfigError);
}
