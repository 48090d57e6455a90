// Command-line front end: train / eval / stream / check / bench.
// Exit codes: 0 ok, 2 usage or configuration error, 3 runtime failure.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "s4dkit/s4dkit.hpp"

namespace {

using namespace s4dkit;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct SeedOverride {
  std::optional<std::uint64_t> seed;
  void apply(RunConfig& cfg) const {
    if (!seed) return;
    cfg.task.seed = *seed;
    cfg.train.seed = *seed;
  }
};

int cmd_train(const std::string& config_path, const SeedOverride& seed) {
  RunConfig cfg = parse_config_file(config_path);
  seed.apply(cfg);
  validate(cfg);
  if (cfg.model.h % 2 != 0)
    throw config_error("model.h", "must be even (GLU splits channels in half)");
  Dataset data = generate_task(cfg.task);
  Model model = build_model(cfg.model, cfg.task.vocab, cfg.train.seed);
  std::ofstream log(cfg.io.log, std::ios::trunc);
  if (!log) throw config_error("io.log", "cannot open " + cfg.io.log + " for writing");
  auto emit = [&](const MetricRecord& r) {
    const std::string line = format_metric(r);
    std::puts(line.c_str());
    log << line << "\n";
  };
  if (cfg.train.steps > 0) {
    train(model, data, cfg.train, emit);
  } else {
    emit(evaluate(model, data.eval_set, 0));
  }
  log.flush();
  save_model_checkpoint(cfg.io.checkpoint, model, cfg.model);
  std::fprintf(stderr, "checkpoint written to %s\n", cfg.io.checkpoint.c_str());
  return kExitOk;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt_path,
             const SeedOverride& seed) {
  RunConfig cfg = parse_config_file(config_path);
  seed.apply(cfg);
  validate(cfg);
  LoadedModel lm = model_from_checkpoint(ckpt_path);
  if (model_digest(cfg.model, cfg.task.vocab) != model_digest(lm.section, lm.vocab))
    throw config_error("model", "config digest does not match the checkpoint (" +
                                    canonical_model_string(cfg.model, cfg.task.vocab) +
                                    " vs " + canonical_model_string(lm.section, lm.vocab) +
                                    ")");
  Dataset data = generate_task(cfg.task);
  MetricRecord r = evaluate(lm.model, data.eval_set, 0);
  std::printf("eval loss=%.17g accuracy=%.17g\n", r.loss, r.accuracy);
  return kExitOk;
}

int cmd_stream(const std::string& ckpt_path, std::uint32_t chunk_size) {
  LoadedModel lm = model_from_checkpoint(ckpt_path);
  if (lm.section.context != Context::Online)
    throw config_error("model.context", "stream requires an online-context checkpoint");
  ModelStream ms = open_model_stream(lm.model);
  const std::size_t width = lm.model.input_dim;
  std::vector<double> frame(width);
  std::vector<double> pending;
  auto flush = [&](std::size_t rows) {
    Tensor chunk = Tensor::zeros2d(rows, width);
    std::copy(pending.begin(), pending.begin() + rows * width, chunk.raw().begin());
    pending.erase(pending.begin(), pending.begin() + rows * width);
    Tensor y = process_model_chunk(lm.model, ms, chunk);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      for (std::size_t c = 0; c < y.cols(); ++c)
        std::printf(c == 0 ? "%.17g" : " %.17g", y(r, c));
      std::printf("\n");
    }
    std::fflush(stdout);
  };
  while (true) {
    std::size_t got = 0;
    for (; got < width; ++got)
      if (!(std::cin >> frame[got])) break;
    if (got == 0) break;  // clean EOF between frames
    if (got < width)
      throw std::runtime_error("stream: truncated frame on standard input (expected " +
                               std::to_string(width) + " values per row)");
    pending.insert(pending.end(), frame.begin(), frame.end());
    if (pending.size() / width >= chunk_size) flush(chunk_size);
  }
  if (!pending.empty()) flush(pending.size() / width);
  return kExitOk;
}

int cmd_check(const std::string& ckpt_path, const std::string& suite,
              const SeedOverride& seed) {
  LoadedModel lm = model_from_checkpoint(ckpt_path);
  CheckReport rep = run_check_suite(suite, lm.model, seed.seed.value_or(0));
  for (const auto& l : rep.lines)
    std::printf("%-42s measured=%-12.3e %s%s%s\n", l.name.c_str(), l.measured,
                l.pass ? "PASS" : "FAIL", l.detail.empty() ? "" : "  ", l.detail.c_str());
  return rep.all_pass() ? kExitOk : kExitRuntime;
}

int cmd_bench(const std::string& config_path, const SeedOverride& seed) {
  RunConfig cfg = parse_config_file(config_path);
  seed.apply(cfg);
  validate(cfg);
  std::vector<BenchRow> rows = run_bench(cfg.model, cfg.train.seed);
  std::printf("mode,T,median_ns,reps\n");
  for (const auto& r : rows)
    std::printf("%s,%zu,%lld,%d\n", r.mode.c_str(), r.t_len, r.median_ns, r.reps);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diagonal state-space sequence toolkit"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path, suite = "duality";
  std::uint32_t chunk_size = 16;
  SeedOverride seed;
  std::uint64_t seed_raw = 0;

  auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", seed_raw, "override the config seeds")
        ->each([&](const std::string&) { seed.seed = seed_raw; });
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train a model from a config file");
  train_cmd->add_option("--config", config_path, "config path")->required();
  add_seed(train_cmd);

  CLI::App* eval_cmd =
      app.add_subcommand("eval", "evaluate a checkpoint on the task's eval split");
  eval_cmd->add_option("--config", config_path, "config path")->required();
  eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
  add_seed(eval_cmd);

  CLI::App* stream_cmd =
      app.add_subcommand("stream", "stream frames from stdin through a checkpoint");
  stream_cmd->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
  stream_cmd->add_option("--chunk-size", chunk_size, "frames per chunk")
      ->check(CLI::PositiveNumber);
  add_seed(stream_cmd);

  CLI::App* check_cmd = app.add_subcommand("check", "run an invariant suite on a checkpoint");
  check_cmd->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
  check_cmd->add_option("--suite", suite, "duality|causality|streaming|grads|params");
  add_seed(check_cmd);

  CLI::App* bench_cmd = app.add_subcommand("bench", "time the S4 execution modes");
  bench_cmd->add_option("--config", config_path, "config path")->required();
  add_seed(bench_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (app.got_subcommand(train_cmd)) return cmd_train(config_path, seed);
    if (app.got_subcommand(eval_cmd)) return cmd_eval(config_path, ckpt_path, seed);
    if (app.got_subcommand(stream_cmd)) return cmd_stream(ckpt_path, chunk_size);
    if (app.got_subcommand(check_cmd)) return cmd_check(ckpt_path, suite, seed);
    if (app.got_subcommand(bench_cmd)) return cmd_bench(config_path, seed);
  } catch (const s4dkit::config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const s4dkit::diverged_error& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitConfig;
}
