#include "omdpg/snapshot.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <vector>

namespace omdpg::snapshot {

namespace {

constexpr char kMagic[8] = {'O', 'M', 'C', 'K', 'P', 'T', '0', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void put_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw ConfigError("truncated checkpoint");
  return v;
}
double get_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw ConfigError("truncated checkpoint");
  return v;
}

void put_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  put_u64(os, static_cast<std::uint64_t>(m.rows()));
  put_u64(os, static_cast<std::uint64_t>(m.cols()));
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(sizeof(double) * m.size()));
}
Eigen::MatrixXd get_matrix(std::istream& is) {
  auto rows = static_cast<long>(get_u64(is));
  auto cols = static_cast<long>(get_u64(is));
  if (rows < 0 || cols < 0 || rows * cols > (1L << 28))
    throw ConfigError("implausible matrix size in checkpoint");
  Eigen::MatrixXd m(rows, cols);
  is.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!is) throw ConfigError("truncated checkpoint");
  return m;
}
void put_vector(std::ostream& os, const Eigen::VectorXd& v) {
  put_matrix(os, v);
}
Eigen::VectorXd get_vector(std::istream& is) {
  Eigen::MatrixXd m = get_matrix(is);
  if (m.cols() != 1 && m.size() != 0)
    throw ConfigError("expected a column vector in checkpoint");
  return Eigen::VectorXd(Eigen::Map<Eigen::VectorXd>(m.data(), m.size()));
}

void put_ints(std::ostream& os, const std::vector<int>& v) {
  put_u64(os, v.size());
  for (int x : v) put_u64(os, static_cast<std::uint64_t>(static_cast<std::int64_t>(x)));
}
std::vector<int> get_ints(std::istream& is) {
  auto n = get_u64(is);
  if (n > (1u << 20)) throw ConfigError("implausible list size in checkpoint");
  std::vector<int> v(n);
  for (auto& x : v) x = static_cast<int>(static_cast<std::int64_t>(get_u64(is)));
  return v;
}

void put_mlp(std::ostream& os, const numkit::MlpParams& p) {
  put_u64(os, p.layers.size());
  for (const auto& l : p.layers) {
    put_u64(os, static_cast<std::uint64_t>(l.act));
    put_matrix(os, l.w);
    put_vector(os, l.b);
  }
}
numkit::MlpParams get_mlp(std::istream& is) {
  numkit::MlpParams p;
  auto n = get_u64(is);
  if (n > 1024) throw ConfigError("implausible layer count in checkpoint");
  for (std::uint64_t i = 0; i < n; ++i) {
    numkit::Layer l;
    l.act = static_cast<numkit::Activation>(get_u64(is));
    l.w = get_matrix(is);
    l.b = get_vector(is);
    p.layers.push_back(std::move(l));
  }
  p.validate();
  return p;
}

void put_opt(std::ostream& os, const numkit::OptState& o) {
  put_f64(os, o.lr);
  put_f64(os, o.beta1);
  put_f64(os, o.beta2);
  put_f64(os, o.eps);
  put_u64(os, static_cast<std::uint64_t>(o.step));
  put_u64(os, o.mw.size());
  for (std::size_t i = 0; i < o.mw.size(); ++i) {
    put_matrix(os, o.mw[i]);
    put_matrix(os, o.vw[i]);
    put_vector(os, o.mb[i]);
    put_vector(os, o.vb[i]);
  }
}
numkit::OptState get_opt(std::istream& is) {
  numkit::OptState o;
  o.lr = get_f64(is);
  o.beta1 = get_f64(is);
  o.beta2 = get_f64(is);
  o.eps = get_f64(is);
  o.step = static_cast<long>(get_u64(is));
  auto n = get_u64(is);
  if (n > 1024) throw ConfigError("implausible layer count in checkpoint");
  for (std::uint64_t i = 0; i < n; ++i) {
    o.mw.push_back(get_matrix(is));
    o.vw.push_back(get_matrix(is));
    o.mb.push_back(get_vector(is));
    o.vb.push_back(get_vector(is));
  }
  return o;
}

}  // namespace

void save_stack(const std::string& path, const ccga::GroupedActors& actors,
                const gqc::CriticEnsemble& ensemble) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, sizeof kMagic);

  put_u64(os, static_cast<std::uint64_t>(actors.spec.n_agents));
  put_ints(os, actors.spec.assignment);
  put_ints(os, actors.spec.ordering);
  put_u64(os, actors.discrete ? 1 : 0);
  put_u64(os, static_cast<std::uint64_t>(actors.obs_dim));
  put_u64(os, static_cast<std::uint64_t>(actors.action_dim));
  put_f64(os, actors.expl_sigma);
  put_f64(os, actors.expl_clip);
  put_f64(os, actors.st_temp);
  put_u64(os, actors.nets.size());
  for (std::size_t g = 0; g < actors.nets.size(); ++g) {
    put_mlp(os, actors.nets[g]);
    put_mlp(os, actors.targets[g]);
    put_opt(os, actors.opt[g]);
  }

  put_u64(os, static_cast<std::uint64_t>(ensemble.state_dim));
  put_u64(os, static_cast<std::uint64_t>(ensemble.joint_action_dim));
  put_u64(os, ensemble.online.size());
  for (std::size_t c = 0; c < ensemble.online.size(); ++c) {
    put_mlp(os, ensemble.online[c]);
    put_mlp(os, ensemble.target[c]);
    put_opt(os, ensemble.opt[c]);
  }
  if (!os) throw ConfigError("checkpoint write failed: " + path);
}

void load_stack(const std::string& path, ccga::GroupedActors& actors,
                gqc::CriticEnsemble& ensemble) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || !std::equal(magic, magic + 8, kMagic))
    throw ConfigError("not a checkpoint file: " + path);

  ccga::GroupedActors a;
  a.spec.n_agents = static_cast<int>(get_u64(is));
  a.spec.assignment = get_ints(is);
  a.spec.ordering = get_ints(is);
  a.discrete = get_u64(is) != 0;
  a.obs_dim = static_cast<int>(get_u64(is));
  a.action_dim = static_cast<int>(get_u64(is));
  a.expl_sigma = get_f64(is);
  a.expl_clip = get_f64(is);
  a.st_temp = get_f64(is);
  auto groups = get_u64(is);
  if (groups > (1u << 16)) throw ConfigError("implausible group count");
  for (std::uint64_t g = 0; g < groups; ++g) {
    a.nets.push_back(get_mlp(is));
    a.targets.push_back(get_mlp(is));
    a.opt.push_back(get_opt(is));
  }
  a.validate();

  gqc::CriticEnsemble e;
  e.state_dim = static_cast<int>(get_u64(is));
  e.joint_action_dim = static_cast<int>(get_u64(is));
  auto heads = get_u64(is);
  if (heads > (1u << 16)) throw ConfigError("implausible head count");
  for (std::uint64_t c = 0; c < heads; ++c) {
    e.online.push_back(get_mlp(is));
    e.target.push_back(get_mlp(is));
    e.opt.push_back(get_opt(is));
  }
  e.validate();

  actors = std::move(a);
  ensemble = std::move(e);
}

}  // namespace omdpg::snapshot
