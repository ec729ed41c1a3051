#include "omdpg/numkit.hpp"

#include <cmath>
#include <cstring>

namespace omdpg {

namespace {
std::uint64_t splitmix64(std::uint64_t& s) {
  s += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}
}  // namespace

RngStream RngStream::named(std::uint64_t run_seed, std::string_view name,
                           std::uint64_t index) {
  std::uint64_t s = run_seed;
  std::uint64_t a = splitmix64(s);
  s = a ^ fnv1a(name);
  std::uint64_t b = splitmix64(s);
  s = b + index * 0x9e3779b97f4a7c15ull;
  // burn one draw so adjacent indices decorrelate
  splitmix64(s);
  return RngStream(s);
}

std::uint64_t RngStream::next_u64() { return splitmix64(s_); }

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

int RngStream::uniform_int(int n) {
  if (n <= 0) throw ConfigError("uniform_int needs n > 0");
  return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
}

double RngStream::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = 1.0 - uniform();  // (0, 1]
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

double RngStream::normal(double mu, double sigma) {
  return mu + sigma * normal();
}

double RngStream::clipped_normal(double sigma, double clip) {
  double z = sigma * normal();
  if (z > clip) z = clip;
  if (z < -clip) z = -clip;
  return z;
}

}  // namespace omdpg

namespace omdpg::numkit {

int MlpParams::input_dim() const {
  if (layers.empty()) throw ShapeError("empty network");
  return static_cast<int>(layers.front().w.cols());
}

int MlpParams::output_dim() const {
  if (layers.empty()) throw ShapeError("empty network");
  return static_cast<int>(layers.back().w.rows());
}

std::size_t MlpParams::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.w.size() + l.b.size();
  return n;
}

void MlpParams::validate() const {
  if (layers.empty()) throw ShapeError("empty network");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.b.size() != l.w.rows())
      throw ShapeError("bias/weight row mismatch at layer " + std::to_string(i));
    if (i > 0 && layers[i - 1].w.rows() != l.w.cols())
      throw ShapeError("layer chaining mismatch at layer " + std::to_string(i));
    if (!l.w.allFinite() || !l.b.allFinite())
      throw NumericError("non-finite parameter at layer " + std::to_string(i));
  }
}

MlpParams make_mlp(const std::vector<int>& dims,
                   const std::vector<Activation>& acts, RngStream& rng) {
  if (dims.size() < 2) throw ShapeError("need at least input and output dims");
  if (acts.size() != dims.size() - 1)
    throw ShapeError("one activation per layer required");
  MlpParams p;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    Layer l;
    int in = dims[i], out = dims[i + 1];
    if (in <= 0 || out <= 0) throw ShapeError("non-positive layer dim");
    double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    l.w.resize(out, in);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) l.w(r, c) = rng.uniform(-bound, bound);
    l.b = Eigen::VectorXd::Zero(out);
    l.act = acts[i];
    p.layers.push_back(std::move(l));
  }
  return p;
}

namespace {
void apply_activation(Activation a, Eigen::MatrixXd& z) {
  switch (a) {
    case Activation::Tanh:
      z = z.array().tanh();
      break;
    case Activation::Relu:
      z = z.array().max(0.0);
      break;
    case Activation::Identity:
      break;
  }
}

// dZ = dH .* act'(z), using cached post-activations where possible
Eigen::MatrixXd activation_backward(Activation a, const Eigen::MatrixXd& pre,
                                    const Eigen::MatrixXd& post,
                                    const Eigen::MatrixXd& grad_out) {
  switch (a) {
    case Activation::Tanh:
      return grad_out.array() * (1.0 - post.array().square());
    case Activation::Relu:
      return grad_out.array() * (pre.array() > 0.0).cast<double>();
    case Activation::Identity:
      return grad_out;
  }
  throw ShapeError("unknown activation");
}
}  // namespace

Eigen::MatrixXd forward(const MlpParams& p, const Eigen::MatrixXd& input,
                        ForwardCache* cache) {
  if (p.layers.empty()) throw ShapeError("empty network");
  if (input.cols() != p.input_dim())
    throw ShapeError("forward input width " + std::to_string(input.cols()) +
                     " != network input dim " + std::to_string(p.input_dim()));
  if (cache) {
    cache->input0 = input;
    cache->preact.clear();
    cache->postact.clear();
  }
  Eigen::MatrixXd h = input;
  for (const auto& l : p.layers) {
    Eigen::MatrixXd z = (h * l.w.transpose()).rowwise() + l.b.transpose();
    if (cache) cache->preact.push_back(z);
    apply_activation(l.act, z);
    if (cache) cache->postact.push_back(z);
    h = std::move(z);
  }
  return h;
}

Eigen::VectorXd forward1(const MlpParams& p, const Eigen::VectorXd& input,
                         ForwardCache* cache) {
  Eigen::MatrixXd out = forward(p, input.transpose(), cache);
  return out.row(0).transpose();
}

MlpGrads MlpGrads::zeros_like(const MlpParams& p) {
  MlpGrads g;
  for (const auto& l : p.layers) {
    g.w.push_back(Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()));
    g.b.push_back(Eigen::VectorXd::Zero(l.b.size()));
  }
  return g;
}

void MlpGrads::add_scaled(const MlpGrads& other, double scale) {
  if (other.w.size() != w.size()) throw ShapeError("grad accumulation mismatch");
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] += scale * other.w[i];
    b[i] += scale * other.b[i];
  }
}

bool MlpGrads::all_finite() const {
  for (std::size_t i = 0; i < w.size(); ++i)
    if (!w[i].allFinite() || !b[i].allFinite()) return false;
  return true;
}

Eigen::MatrixXd backward(const MlpParams& p, const ForwardCache& cache,
                         const Eigen::MatrixXd& grad_out, MlpGrads* grads) {
  int L = static_cast<int>(p.layers.size());
  if (cache.depth() != L) throw ShapeError("stale forward cache");
  if (grad_out.rows() != cache.rows() ||
      grad_out.cols() != p.output_dim())
    throw ShapeError("grad_out shape does not match cached forward");
  Eigen::MatrixXd d = grad_out;
  for (int i = L - 1; i >= 0; --i) {
    const Layer& l = p.layers[i];
    const Eigen::MatrixXd& in = (i == 0) ? cache.input0 : cache.postact[i - 1];
    if (cache.preact[i].cols() != l.w.rows() || in.cols() != l.w.cols())
      throw ShapeError("cache does not match network at layer " +
                       std::to_string(i));
    Eigen::MatrixXd dz =
        activation_backward(l.act, cache.preact[i], cache.postact[i], d);
    if (grads) {
      grads->w[i] += dz.transpose() * in;
      grads->b[i] += dz.colwise().sum().transpose();
    }
    d = dz * l.w;
  }
  return d;
}

OptState OptState::for_params(const MlpParams& p, double lr) {
  OptState o;
  o.lr = lr;
  for (const auto& l : p.layers) {
    o.mw.push_back(Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()));
    o.vw.push_back(Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()));
    o.mb.push_back(Eigen::VectorXd::Zero(l.b.size()));
    o.vb.push_back(Eigen::VectorXd::Zero(l.b.size()));
  }
  return o;
}

void opt_step(OptState& opt, MlpParams& p, const MlpGrads& g) {
  if (g.w.size() != p.layers.size() || opt.mw.size() != p.layers.size())
    throw ShapeError("optimizer/parameter/gradient layer count mismatch");
  for (std::size_t i = 0; i < p.layers.size(); ++i)
    if (!g.w[i].allFinite() || !g.b[i].allFinite())
      throw NumericError("non-finite gradient at layer " + std::to_string(i));
  opt.step += 1;
  double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    opt.mw[i] = opt.beta1 * opt.mw[i] + (1.0 - opt.beta1) * g.w[i];
    opt.vw[i] = opt.beta2 * opt.vw[i].array().matrix() +
                (1.0 - opt.beta2) * g.w[i].array().square().matrix();
    opt.mb[i] = opt.beta1 * opt.mb[i] + (1.0 - opt.beta1) * g.b[i];
    opt.vb[i] = opt.beta2 * opt.vb[i] +
                (1.0 - opt.beta2) * g.b[i].array().square().matrix();
    p.layers[i].w.array() -=
        opt.lr * (opt.mw[i].array() / bc1) /
        ((opt.vw[i].array() / bc2).sqrt() + opt.eps);
    p.layers[i].b.array() -=
        opt.lr * (opt.mb[i].array() / bc1) /
        ((opt.vb[i].array() / bc2).sqrt() + opt.eps);
  }
}

void soft_update(MlpParams& target, const MlpParams& online, double tau) {
  if (tau <= 0.0 || tau > 1.0)
    throw ConfigError("soft update rate must lie in (0, 1]");
  if (target.layers.size() != online.layers.size())
    throw ShapeError("soft update layer count mismatch");
  for (std::size_t i = 0; i < target.layers.size(); ++i) {
    auto& t = target.layers[i];
    const auto& o = online.layers[i];
    if (t.w.rows() != o.w.rows() || t.w.cols() != o.w.cols())
      throw ShapeError("soft update shape mismatch at layer " +
                       std::to_string(i));
    t.w = (1.0 - tau) * t.w + tau * o.w;
    t.b = (1.0 - tau) * t.b + tau * o.b;
  }
}

Eigen::VectorXd flatten(const MlpParams& p) {
  Eigen::VectorXd out(p.param_count());
  Eigen::Index k = 0;
  for (const auto& l : p.layers) {
    out.segment(k, l.w.size()) =
        Eigen::Map<const Eigen::VectorXd>(l.w.data(), l.w.size());
    k += l.w.size();
    out.segment(k, l.b.size()) = l.b;
    k += l.b.size();
  }
  return out;
}

void unflatten(const Eigen::VectorXd& flat, MlpParams& p) {
  if (flat.size() != static_cast<Eigen::Index>(p.param_count()))
    throw ShapeError("flat vector length does not match parameter count");
  Eigen::Index k = 0;
  for (auto& l : p.layers) {
    Eigen::Map<Eigen::VectorXd>(l.w.data(), l.w.size()) =
        flat.segment(k, l.w.size());
    k += l.w.size();
    l.b = flat.segment(k, l.b.size());
    k += l.b.size();
  }
}

Eigen::VectorXd flatten_grads(const MlpGrads& g) {
  Eigen::Index total = 0;
  for (std::size_t i = 0; i < g.w.size(); ++i)
    total += g.w[i].size() + g.b[i].size();
  Eigen::VectorXd out(total);
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < g.w.size(); ++i) {
    out.segment(k, g.w[i].size()) =
        Eigen::Map<const Eigen::VectorXd>(g.w[i].data(), g.w[i].size());
    k += g.w[i].size();
    out.segment(k, g.b[i].size()) = g.b[i];
    k += g.b[i].size();
  }
  return out;
}

double fd_gradcheck(const ValueGrad& f, const Eigen::VectorXd& point,
                    double h) {
  if (h <= 0.0) throw ConfigError("fd step must be positive");
  auto [v0, g] = f(point);
  if (!std::isfinite(v0) || !g.allFinite())
    throw NumericError("non-finite objective or gradient at check point");
  if (g.size() != point.size())
    throw ShapeError("gradient length does not match point");
  double worst = 0.0;
  Eigen::VectorXd x = point;
  for (Eigen::Index k = 0; k < point.size(); ++k) {
    x(k) = point(k) + h;
    double up = f(x).first;
    x(k) = point(k) - h;
    double dn = f(x).first;
    x(k) = point(k);
    if (!std::isfinite(up) || !std::isfinite(dn))
      throw NumericError("non-finite objective during fd probe");
    double fd = (up - dn) / (2.0 * h);
    double err = std::abs(g(k) - fd) / std::max(1.0, std::abs(g(k)));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace omdpg::numkit
