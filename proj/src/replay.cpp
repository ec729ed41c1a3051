#include "omdpg/replay.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace omdpg::replay {

Buffer::Buffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("buffer capacity must be positive");
  data_.reserve(capacity);
}

void Buffer::check_shape(const Transition& t) const {
  if (size_ == 0) return;
  const Transition& ref = data_[0];
  if (t.state.size() != ref.state.size() ||
      t.next_state.size() != ref.next_state.size() ||
      t.obs.size() != ref.obs.size() ||
      t.next_obs.size() != ref.next_obs.size() ||
      t.action.discrete() != ref.action.discrete() ||
      t.action.n_agents() != ref.action.n_agents())
    throw ShapeError("transition shape differs from buffered transitions");
  for (std::size_t i = 0; i < t.obs.size(); ++i)
    if (t.obs[i].size() != ref.obs[i].size())
      throw ShapeError("observation width differs from buffered transitions");
}

void Buffer::push(const Transition& t) {
  check_shape(t);
  if (size_ < capacity_) {
    data_.push_back(t);
    ++size_;
    head_ = size_ % capacity_;
  } else {
    data_[head_] = t;
    head_ = (head_ + 1) % capacity_;
  }
}

const Transition& Buffer::at(std::size_t i) const {
  if (i >= size_) throw ShapeError("buffer index out of range");
  if (size_ < capacity_) return data_[i];
  return data_[(head_ + i) % capacity_];
}

std::optional<std::vector<Transition>> Buffer::sample(std::size_t batch,
                                                      RngStream& rng) const {
  if (!ready(batch)) return std::nullopt;
  std::vector<Transition> out;
  out.reserve(batch);
  for (std::size_t k = 0; k < batch; ++k)
    out.push_back(data_[static_cast<std::size_t>(
        rng.uniform_int(static_cast<int>(size_)))]);
  return out;
}

namespace {
constexpr char kMagic[8] = {'O', 'M', 'B', 'U', 'F', '0', '0', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
void put_vec(std::ostream& os, const Eigen::VectorXd& v) {
  put_u64(os, static_cast<std::uint64_t>(v.size()));
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}
Eigen::VectorXd get_vec(std::istream& is) {
  auto n = static_cast<Eigen::Index>(get_u64(is));
  Eigen::VectorXd v(n);
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  return v;
}
}  // namespace

void Buffer::dump(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put_u64(os, capacity_);
  put_u64(os, size_);
  for (std::size_t i = 0; i < size_; ++i) {
    const Transition& t = at(i);
    put_vec(os, t.state);
    put_vec(os, t.next_state);
    put_u64(os, t.obs.size());
    for (const auto& o : t.obs) put_vec(os, o);
    for (const auto& o : t.next_obs) put_vec(os, o);
    put_u64(os, t.action.discrete() ? 1 : 0);
    if (t.action.discrete()) {
      put_u64(os, t.action.disc.size());
      for (int a : t.action.disc) put_u64(os, static_cast<std::uint64_t>(a));
    } else {
      put_u64(os, t.action.cont.size());
      for (const auto& a : t.action.cont) put_vec(os, a);
    }
    os.write(reinterpret_cast<const char*>(&t.reward), sizeof(double));
    put_u64(os, t.done ? 1 : 0);
  }
  if (!os) throw ConfigError("write failed for " + path);
}

Buffer Buffer::restore(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ConfigError("unrecognized buffer snapshot header in " + path);
  std::size_t capacity = get_u64(is);
  std::size_t size = get_u64(is);
  Buffer b(capacity);
  for (std::size_t i = 0; i < size; ++i) {
    Transition t;
    t.state = get_vec(is);
    t.next_state = get_vec(is);
    std::size_t n_obs = get_u64(is);
    t.obs.resize(n_obs);
    for (auto& o : t.obs) o = get_vec(is);
    t.next_obs.resize(n_obs);
    for (auto& o : t.next_obs) o = get_vec(is);
    bool disc = get_u64(is) != 0;
    std::size_t n_act = get_u64(is);
    if (disc) {
      t.action.disc.resize(n_act);
      for (auto& a : t.action.disc) a = static_cast<int>(get_u64(is));
    } else {
      t.action.cont.resize(n_act);
      for (auto& a : t.action.cont) a = get_vec(is);
    }
    is.read(reinterpret_cast<char*>(&t.reward), sizeof(double));
    t.done = get_u64(is) != 0;
    if (!is) throw ConfigError("truncated buffer snapshot " + path);
    b.push(t);
  }
  return b;
}

}  // namespace omdpg::replay
