#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "omdpg/common.hpp"
#include "omdpg/envs.hpp"

namespace omdpg::replay {

struct Transition {
  Eigen::VectorXd state;
  Eigen::VectorXd next_state;
  envs::JointObservation obs;
  envs::JointObservation next_obs;
  envs::JointAction action;
  double reward = 0.0;
  bool done = false;
};

// Fixed-capacity ring buffer with uniform with-replacement sampling. Each
// critic head samples through its own stream, so head batches are mutually
// independent by construction.
class Buffer {
 public:
  explicit Buffer(std::size_t capacity);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return size_; }
  // with-replacement sampling only needs a non-empty buffer
  bool ready(std::size_t batch) const { return size_ > 0 && batch > 0; }

  // shape-checked against the first transition pushed
  void push(const Transition& t);

  // nullopt while the buffer is empty or batch == 0
  std::optional<std::vector<Transition>> sample(std::size_t batch,
                                                RngStream& rng) const;

  const Transition& at(std::size_t i) const;  // 0 = oldest retained

  // versioned binary snapshot, bit-exact round trip
  void dump(const std::string& path) const;
  static Buffer restore(const std::string& path);

 private:
  std::size_t capacity_ = 0;
  std::size_t size_ = 0;
  std::size_t head_ = 0;  // next write slot
  std::vector<Transition> data_;

  void check_shape(const Transition& t) const;
};

}  // namespace omdpg::replay
