#pragma once

#include <cstdio>
#include <functional>
#include <string>

#include "s4dkit/streaming.hpp"
#include "s4dkit/tasks.hpp"

namespace s4dkit {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
  long steps = 2000;
  std::size_t batch = 4;
  std::uint64_t seed = 1;
  long eval_interval = 200;
  long log_interval = 50;
  double stop_at_accuracy = -1.0;  // early stop once eval accuracy reaches this...
  long min_steps = 0;              // ...but never before min_steps
};

struct MetricRecord {
  long step;
  std::string split;  // "train" or "eval"
  double loss;
  double accuracy;
};

inline std::string format_metric(const MetricRecord& r) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%ld %s %.17g %.17g", r.step, r.split.c_str(), r.loss,
                r.accuracy);
  return buf;
}

struct TrainResult {
  std::vector<MetricRecord> history;
  long steps_run = 0;
  double final_eval_accuracy = 0.0;
  double max_eval_accuracy = 0.0;
};

// Adam with bias correction; state is kept per registry slot.
class Adam {
 public:
  Adam(double lr, double b1, double b2, double eps) : lr_(lr), b1_(b1), b2_(b2), eps_(eps) {}

  void step(const std::vector<ParamRef>& refs, const std::vector<Tensor>& grads) {
    if (m_.empty()) {
      m_.resize(refs.size());
      v_.resize(refs.size());
      for (std::size_t i = 0; i < refs.size(); ++i) {
        m_[i].assign(refs[i].tensor->raw().size(), 0.0);
        v_[i].assign(refs[i].tensor->raw().size(), 0.0);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, double(t_));
    const double bc2 = 1.0 - std::pow(b2_, double(t_));
    for (std::size_t i = 0; i < refs.size(); ++i) {
      if (!refs[i].trainable || grads[i].empty()) continue;
      std::vector<double>& pr = refs[i].tensor->raw();
      const std::vector<double>& g = grads[i].raw();
      for (std::size_t j = 0; j < pr.size(); ++j) {
        m_[i][j] = b1_ * m_[i][j] + (1.0 - b1_) * g[j];
        v_[i][j] = b2_ * v_[i][j] + (1.0 - b2_) * g[j] * g[j];
        pr[j] -= lr_ * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + eps_);
      }
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Scales all gradients so the global L2 norm is at most clip.
inline void clip_gradients(std::vector<Tensor>& grads, double clip) {
  if (clip <= 0.0) return;
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g.raw()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm <= clip) return;
  const double s = clip / norm;
  for (auto& g : grads)
    for (double& v : g.raw()) v *= s;
}

// Mean eval-mode loss and accuracy over a set of examples.
inline MetricRecord evaluate(Model& m, const std::vector<TaskExample>& examples, long step) {
  double loss = 0.0;
  long correct = 0, count = 0;
  for (const auto& e : examples) {
    Tensor logits = model_forward_eval(m, one_hot(e.inputs, m.input_dim));
    for (std::size_t t = 0; t < e.targets.size(); ++t) {
      if (e.targets[t] < 0) continue;
      double mx = logits(t, 0);
      std::size_t arg = 0;
      for (std::size_t c = 1; c < logits.cols(); ++c)
        if (logits(t, c) > mx) {
          mx = logits(t, c);
          arg = c;
        }
      double z = 0.0;
      for (std::size_t c = 0; c < logits.cols(); ++c) z += std::exp(logits(t, c) - mx);
      loss -= logits(t, std::size_t(e.targets[t])) - mx - std::log(z);
      ++count;
      if (arg == std::size_t(e.targets[t])) ++correct;
    }
  }
  return {step, "eval", loss / double(count), double(correct) / double(count)};
}

// Cross-entropy training loop over the task dataset. Deterministic given the
// dataset and config seeds. Throws diverged_error on a non-finite loss.
inline TrainResult train(Model& m, const Dataset& data, const TrainConfig& cfg,
                         const std::function<void(const MetricRecord&)>& emit = {}) {
  if (m.input_dim != data.spec.vocab || m.output_dim != data.spec.vocab)
    throw std::invalid_argument("train: model width does not match task vocabulary");
  TrainResult res;
  Adam opt(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
  Rng batch_rng(split_seed(cfg.seed, 0x7731));
  std::uniform_int_distribution<std::size_t> pick(0, data.train.size() - 1);
  const std::size_t t_len = data.spec.seq_len, v = data.spec.vocab;
  long last_finite = 0;

  auto record = [&](MetricRecord r) {
    if (emit) emit(r);
    if (r.split == "eval") {
      res.final_eval_accuracy = r.accuracy;
      res.max_eval_accuracy = std::max(res.max_eval_accuracy, r.accuracy);
    }
    res.history.push_back(std::move(r));
  };

  for (long step = 1; step <= cfg.steps; ++step) {
    Tensor input = Tensor::zeros2d(cfg.batch * t_len, v);
    std::vector<int> labels(cfg.batch * t_len);
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const TaskExample& e = data.train[pick(batch_rng)];
      for (std::size_t t = 0; t < t_len; ++t) {
        input(b * t_len + t, std::size_t(e.inputs[t])) = 1.0;
        labels[b * t_len + t] = e.targets[t];
      }
    }

    Tape tape;
    BoundParams bp = bind_params(tape, m);
    Value logits = model_forward_tape(tape, m, bp, tape.constant(input),
                                      {cfg.batch, /*update_stats=*/true});
    double batch_acc = 0.0;
    Value loss = tape.softmax_xent(logits, labels, -1, &batch_acc);
    const double loss_val = tape.value(loss)(0);
    if (!std::isfinite(loss_val))
      throw diverged_error("train: non-finite loss at step " + std::to_string(step) +
                               " (last finite step " + std::to_string(last_finite) + ")",
                           last_finite);
    last_finite = step;
    tape.backward(loss);

    std::vector<Tensor> grads(bp.refs.size());
    for (std::size_t i = 0; i < bp.refs.size(); ++i)
      if (bp.refs[i].trainable) grads[i] = tape.grad(bp.leaves[i]);
    clip_gradients(grads, cfg.clip_norm);
    opt.step(bp.refs, grads);
    res.steps_run = step;

    if (cfg.log_interval > 0 && step % cfg.log_interval == 0)
      record({step, "train", loss_val, batch_acc});
    const bool eval_now =
        (cfg.eval_interval > 0 && step % cfg.eval_interval == 0) || step == cfg.steps;
    if (eval_now) {
      record(evaluate(m, data.eval_set, step));
      if (cfg.stop_at_accuracy > 0.0 && step >= cfg.min_steps &&
          res.final_eval_accuracy >= cfg.stop_at_accuracy)
        break;
    }
  }
  if (res.history.empty() || res.history.back().split != "eval")
    record(evaluate(m, data.eval_set, res.steps_run));
  return res;
}

struct GradCheckResult {
  double worst_rel_error = 0.0;
  std::string worst_param;
};

// Central-difference check (step 1e-5) of the training loss against the tape
// gradients. coord_budget caps how many coordinates are probed, spread evenly
// across the parameter vector.
inline GradCheckResult grad_check(Model& m, const Tensor& input, const std::vector<int>& labels,
                                  std::size_t batch, std::size_t coord_budget = SIZE_MAX) {
  auto loss_of = [&]() {
    Tape tape;
    BoundParams bp = bind_params(tape, m);
    Value logits =
        model_forward_tape(tape, m, bp, tape.constant(input), {batch, /*update_stats=*/false});
    return tape.value(tape.softmax_xent(logits, labels, -1))(0);
  };

  Tape tape;
  BoundParams bp = bind_params(tape, m);
  Value logits =
      model_forward_tape(tape, m, bp, tape.constant(input), {batch, /*update_stats=*/false});
  tape.backward(tape.softmax_xent(logits, labels, -1));

  std::size_t total = 0;
  for (const auto& r : bp.refs)
    if (r.trainable) total += r.tensor->numel();
  const std::size_t stride = std::max<std::size_t>(1, total / std::max<std::size_t>(
                                                            1, std::min(coord_budget, total)));

  GradCheckResult res;
  const double h = 1e-5;
  std::size_t coord = 0;
  for (std::size_t i = 0; i < bp.refs.size(); ++i) {
    if (!bp.refs[i].trainable) continue;
    const Tensor ga = tape.grad(bp.leaves[i]);
    std::vector<double>& pr = bp.refs[i].tensor->raw();
    for (std::size_t j = 0; j < pr.size(); ++j, ++coord) {
      if (coord % stride != 0) continue;
      const double orig = pr[j];
      pr[j] = orig + h;
      const double fp = loss_of();
      pr[j] = orig - h;
      const double fm = loss_of();
      pr[j] = orig;
      const double gn = (fp - fm) / (2.0 * h);
      const double denom = std::max(std::abs(ga.raw()[j]), std::abs(gn));
      const double err =
          (denom < 1e-7) ? std::abs(ga.raw()[j] - gn) : std::abs(ga.raw()[j] - gn) / denom;
      if (err > res.worst_rel_error) {
        res.worst_rel_error = err;
        res.worst_param = bp.refs[i].name + "[" + std::to_string(j) + "]";
      }
    }
  }
  return res;
}

}  // namespace s4dkit
