#include <catch2/catch_amalgamated.hpp>

#include "s4dkit/train.hpp"

using namespace s4dkit;

namespace {

ConvModuleSpec spec_of(Approach a, std::size_t h, std::size_t kernel = 4,
                       Scheme scheme = Scheme::Lin, std::size_t n = 4) {
  ConvModuleSpec s;
  s.approach = a;
  s.h = h;
  s.kernel_size = kernel;
  s.context = Context::Online;
  if (a != Approach::Baseline) s.s4d = S4DConfig{scheme, n};
  if (a == Approach::REP) s.rep_left_context = 6;
  return s;
}

Model small_model(Approach a, std::size_t h, std::size_t vocab, std::size_t blocks = 1,
                  std::uint64_t seed = 5, bool attention = false) {
  std::vector<ConvModuleSpec> specs(blocks, spec_of(a, h));
  return make_model(vocab, vocab, build_encoder(specs, attention, {}, seed),
                    split_seed(seed, 2));
}

}  // namespace

TEST_CASE("delayed_echo with zero delay is the copy task") {
  TaskSpec s;
  s.kind = TaskKind::DelayedEcho;
  s.seq_len = 12;
  s.delay = 0;
  s.vocab = 5;
  s.train_size = 3;
  s.eval_size = 2;
  Dataset d = generate_task(s);
  for (const auto& e : d.train)
    for (std::size_t t = 0; t < 12; ++t) REQUIRE(e.targets[t] == e.inputs[t]);
}

TEST_CASE("delayed_echo targets are the inputs shifted by the delay") {
  TaskSpec s;
  s.seq_len = 16;
  s.delay = 4;
  s.vocab = 8;
  s.train_size = 2;
  s.eval_size = 1;
  Dataset d = generate_task(s);
  for (const auto& e : d.train) {
    for (std::size_t t = 0; t < 4; ++t) REQUIRE(e.targets[t] == -1);
    for (std::size_t t = 4; t < 16; ++t) REQUIRE(e.targets[t] == e.inputs[t - 4]);
  }
}

TEST_CASE("local_pattern depends on a receptive field of three") {
  TaskSpec s;
  s.kind = TaskKind::LocalPattern;
  s.seq_len = 10;
  s.vocab = 4;
  s.train_size = 4;
  s.eval_size = 1;
  Dataset d = generate_task(s);
  for (const auto& e : d.train) {
    REQUIRE(e.targets[0] == -1);
    REQUIRE(e.targets[1] == -1);
    for (std::size_t t = 2; t < 10; ++t)
      REQUIRE(e.targets[t] ==
              (e.inputs[t] + 2 * e.inputs[t - 1] + 3 * e.inputs[t - 2]) % 4);
  }
}

TEST_CASE("task generation is deterministic per seed and differs across seeds") {
  TaskSpec s;
  s.seq_len = 32;
  s.delay = 8;
  s.train_size = 6;
  s.eval_size = 3;
  s.seed = 41;
  Dataset a = generate_task(s);
  Dataset b = generate_task(s);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    REQUIRE(a.train[i].inputs == b.train[i].inputs);
    REQUIRE(a.train[i].targets == b.train[i].targets);
  }
  s.seed = 42;
  Dataset c = generate_task(s);
  REQUIRE(a.train[0].inputs != c.train[0].inputs);
  // train and eval splits come from disjoint streams
  REQUIRE(a.train[0].inputs != a.eval_set[0].inputs);
}

TEST_CASE("generate_task rejects delay >= seq_len") {
  TaskSpec s;
  s.seq_len = 8;
  s.delay = 8;
  REQUIRE_THROWS_AS(generate_task(s), std::invalid_argument);
}

TEST_CASE("lr = 0 leaves every parameter bit-identical") {
  TaskSpec ts;
  ts.seq_len = 16;
  ts.delay = 2;
  ts.vocab = 4;
  ts.train_size = 8;
  ts.eval_size = 2;
  Dataset data = generate_task(ts);
  Model m = small_model(Approach::DIR, 8, 4);
  std::vector<Tensor> before;
  for (const auto& r : registry(m)) before.push_back(*r.tensor);
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.steps = 7;
  cfg.batch = 2;
  cfg.eval_interval = 0;
  cfg.log_interval = 0;
  train(m, data, cfg);
  auto refs = registry(m);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (!refs[i].trainable) continue;  // running stats do move in training mode
    INFO(refs[i].name);
    REQUIRE(refs[i].tensor->bits_equal(before[i]));
  }
}

TEST_CASE("identical seeds give bit-identical metric histories") {
  TaskSpec ts;
  ts.seq_len = 24;
  ts.delay = 3;
  ts.vocab = 4;
  ts.train_size = 16;
  ts.eval_size = 4;
  ts.seed = 9;
  Dataset data = generate_task(ts);
  TrainConfig cfg;
  cfg.steps = 30;
  cfg.batch = 2;
  cfg.seed = 11;
  cfg.eval_interval = 10;
  cfg.log_interval = 5;
  Model m1 = small_model(Approach::COM, 8, 4, 1, 77);
  Model m2 = small_model(Approach::COM, 8, 4, 1, 77);
  TrainResult r1 = train(m1, data, cfg);
  TrainResult r2 = train(m2, data, cfg);
  REQUIRE(r1.history.size() == r2.history.size());
  for (std::size_t i = 0; i < r1.history.size(); ++i) {
    REQUIRE(r1.history[i].step == r2.history[i].step);
    REQUIRE(r1.history[i].split == r2.history[i].split);
    REQUIRE(std::memcmp(&r1.history[i].loss, &r2.history[i].loss, 8) == 0);
    REQUIRE(std::memcmp(&r1.history[i].accuracy, &r2.history[i].accuracy, 8) == 0);
  }
}

TEST_CASE("training aborts with diverged_error on a non-finite loss") {
  TaskSpec ts;
  ts.seq_len = 16;
  ts.delay = 2;
  ts.vocab = 4;
  ts.train_size = 8;
  ts.eval_size = 2;
  Dataset data = generate_task(ts);
  Model m = small_model(Approach::DIR, 8, 4);
  TrainConfig cfg;
  cfg.lr = 1e6;
  cfg.clip_norm = 0.0;  // disabled
  cfg.steps = 20;
  cfg.batch = 2;
  cfg.eval_interval = 0;
  cfg.log_interval = 0;
  try {
    train(m, data, cfg);
    FAIL("expected diverged_error");
  } catch (const diverged_error& e) {
    REQUIRE(e.last_finite_step >= 1);
  }
}

TEST_CASE("local_pattern is solved by a baseline encoder within 2000 steps") {
  TaskSpec ts;
  ts.kind = TaskKind::LocalPattern;
  ts.seq_len = 32;
  ts.vocab = 4;
  ts.train_size = 128;
  ts.eval_size = 16;
  ts.seed = 3;
  Dataset data = generate_task(ts);
  Model m = small_model(Approach::Baseline, 32, 4, 1, 21);
  TrainConfig cfg;
  cfg.steps = 2000;
  cfg.batch = 8;
  cfg.seed = 13;
  cfg.eval_interval = 100;
  cfg.log_interval = 0;
  cfg.stop_at_accuracy = 0.995;
  TrainResult r = train(m, data, cfg);
  INFO("steps=" << r.steps_run << " acc=" << r.max_eval_accuracy);
  REQUIRE(r.max_eval_accuracy >= 0.99);
}

TEST_CASE("delayed echo beyond the receptive field stays at chance for baseline") {
  TaskSpec ts;
  ts.kind = TaskKind::DelayedEcho;
  ts.seq_len = 64;
  ts.delay = 24;  // two blocks of k=4 span 7 past frames, far less than 24
  ts.vocab = 8;
  ts.train_size = 128;
  ts.eval_size = 16;
  ts.seed = 5;
  Dataset data = generate_task(ts);
  Model m = small_model(Approach::Baseline, 32, 4, 2, 23);
  TrainConfig cfg;
  cfg.steps = 500;
  cfg.batch = 8;
  cfg.seed = 17;
  cfg.eval_interval = 100;
  cfg.log_interval = 0;
  TrainResult r = train(m, data, cfg);
  INFO("max eval acc=" << r.max_eval_accuracy);
  REQUIRE(r.max_eval_accuracy <= 1.0 / 8.0 + 0.05);
}

TEST_CASE("grad_check: single S4D layer model") {
  Rng rng(31);
  Model m = small_model(Approach::DIR, 2, 3, 1, 44);
  const std::size_t batch = 2, t_len = 8;
  Tensor input = Tensor::zeros2d(batch * t_len, 3);
  std::vector<int> labels(batch * t_len);
  std::uniform_int_distribution<int> lab(0, 2);
  for (std::size_t r = 0; r < batch * t_len; ++r) {
    input(r, std::size_t(lab(rng))) = 1.0;
    labels[r] = lab(rng);
  }
  GradCheckResult res = grad_check(m, input, labels, batch);
  INFO(res.worst_param);
  REQUIRE(res.worst_rel_error < 1e-4);
}

TEST_CASE("grad_check: all four variants at h=8") {
  Rng rng(32);
  for (Approach a : {Approach::Baseline, Approach::DIR, Approach::COM, Approach::REP}) {
    Model m = small_model(a, 8, 4, 1, 50 + int(a));
    const std::size_t batch = 2, t_len = 10;
    Tensor input = Tensor::zeros2d(batch * t_len, 4);
    std::vector<int> labels(batch * t_len);
    std::uniform_int_distribution<int> lab(0, 3);
    for (std::size_t r = 0; r < batch * t_len; ++r) {
      input(r, std::size_t(lab(rng))) = 1.0;
      labels[r] = (r % 5 == 0) ? -1 : lab(rng);
    }
    GradCheckResult res = grad_check(m, input, labels, batch);
    INFO(approach_name(a) << " worst at " << res.worst_param);
    REQUIRE(res.worst_rel_error < 1e-4);
  }
}

TEST_CASE("grad_check through an attention block") {
  Rng rng(33);
  Model m = small_model(Approach::DIR, 8, 4, 2, 61, /*attention=*/true);
  const std::size_t batch = 2, t_len = 6;
  Tensor input = Tensor::zeros2d(batch * t_len, 4);
  std::vector<int> labels(batch * t_len);
  std::uniform_int_distribution<int> lab(0, 3);
  for (std::size_t r = 0; r < batch * t_len; ++r) {
    input(r, std::size_t(lab(rng))) = 1.0;
    labels[r] = lab(rng);
  }
  GradCheckResult res = grad_check(m, input, labels, batch, 600);
  INFO(res.worst_param);
  REQUIRE(res.worst_rel_error < 1e-4);
}

TEST_CASE("clip_gradients caps the global norm") {
  std::vector<Tensor> grads;
  grads.push_back(Tensor::full(3, 1, 2.0));
  grads.push_back(Tensor::full(4, 1, -1.0));
  clip_gradients(grads, 1.0);
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g.raw()) sq += v * v;
  REQUIRE(std::sqrt(sq) == Catch::Approx(1.0).epsilon(1e-12));
  // under the cap: untouched
  std::vector<Tensor> small;
  small.push_back(Tensor::full(2, 1, 0.1));
  Tensor before = small[0];
  clip_gradients(small, 1.0);
  REQUIRE(small[0].bits_equal(before));
}
