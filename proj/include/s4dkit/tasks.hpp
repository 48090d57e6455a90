#pragma once

#include <vector>

#include "s4dkit/tensor.hpp"

namespace s4dkit {

enum class TaskKind { DelayedEcho, LocalPattern };

struct TaskSpec {
  TaskKind kind = TaskKind::DelayedEcho;
  std::size_t seq_len = 256;
  std::size_t delay = 64;  // delayed_echo only
  std::size_t vocab = 8;
  std::size_t train_size = 512;
  std::size_t eval_size = 32;
  std::uint64_t seed = 1;
};

// One sequence: input labels and per-step targets (-1 = ignore).
struct TaskExample {
  std::vector<int> inputs;
  std::vector<int> targets;
};

struct Dataset {
  TaskSpec spec;
  std::vector<TaskExample> train;
  std::vector<TaskExample> eval_set;
};

inline void validate(const TaskSpec& s) {
  if (s.seq_len == 0) throw std::invalid_argument("task.seq_len: must be >= 1");
  if (s.vocab < 2) throw std::invalid_argument("task.vocab: must be >= 2");
  if (s.kind == TaskKind::DelayedEcho && s.delay >= s.seq_len)
    throw std::invalid_argument("task.delay: must be smaller than task.seq_len");
  if (s.train_size == 0 || s.eval_size == 0)
    throw std::invalid_argument("task.train_size/eval_size: must be >= 1");
}

namespace detail {

inline TaskExample make_example(const TaskSpec& s, Rng& rng) {
  TaskExample e;
  e.inputs.resize(s.seq_len);
  e.targets.assign(s.seq_len, -1);
  std::uniform_int_distribution<int> lab(0, int(s.vocab) - 1);
  for (auto& v : e.inputs) v = lab(rng);
  if (s.kind == TaskKind::DelayedEcho) {
    for (std::size_t t = s.delay; t < s.seq_len; ++t)
      e.targets[t] = e.inputs[t - s.delay];
  } else {
    // fixed function of inputs[t-2..t] only (receptive field 3)
    for (std::size_t t = 2; t < s.seq_len; ++t)
      e.targets[t] =
          (e.inputs[t] + 2 * e.inputs[t - 1] + 3 * e.inputs[t - 2]) % int(s.vocab);
  }
  return e;
}

}  // namespace detail

// Deterministic given the seed; train and eval draw from disjoint seed streams.
inline Dataset generate_task(const TaskSpec& s) {
  validate(s);
  Dataset d;
  d.spec = s;
  Rng train_rng(split_seed(s.seed, 0xA11CE));
  for (std::size_t i = 0; i < s.train_size; ++i)
    d.train.push_back(detail::make_example(s, train_rng));
  Rng eval_rng(split_seed(s.seed, 0xB0B));
  for (std::size_t i = 0; i < s.eval_size; ++i)
    d.eval_set.push_back(detail::make_example(s, eval_rng));
  return d;
}

inline Tensor one_hot(const std::vector<int>& labels, std::size_t vocab) {
  Tensor x = Tensor::zeros2d(labels.size(), vocab);
  for (std::size_t t = 0; t < labels.size(); ++t) x(t, std::size_t(labels[t])) = 1.0;
  return x;
}

}  // namespace s4dkit
