#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "s4dkit/checkpoint.hpp"
#include "s4dkit/encoder.hpp"
#include "s4dkit/tasks.hpp"
#include "s4dkit/train.hpp"

namespace s4dkit {

// Invalid configuration; carries the offending field path ("section.key").
struct config_error : std::runtime_error {
  std::string field;
  config_error(std::string field_path, const std::string& what)
      : std::runtime_error(field_path + ": " + what), field(std::move(field_path)) {}
};

struct ModelSection {
  Approach approach = Approach::Baseline;
  Scheme scheme = Scheme::Real;
  std::size_t n_state = 4;
  std::size_t h = 64;
  std::size_t kernel_size = 4;
  std::size_t rep_left_context = 0;
  std::size_t blocks = 2;
  std::size_t ffn_mult = 2;
  bool with_attention = false;
  Context context = Context::Online;
};

struct IoSection {
  std::string checkpoint = "model.ckpt";
  std::string log = "metrics.log";
};

struct RunConfig {
  ModelSection model;
  TaskSpec task;
  TrainConfig train;
  IoSection io;
};

inline ConvModuleSpec module_spec_of(const ModelSection& m) {
  ConvModuleSpec s;
  s.approach = m.approach;
  s.h = m.h;
  s.kernel_size = m.kernel_size;
  s.rep_left_context = m.rep_left_context;
  s.context = m.context;
  if (m.approach != Approach::Baseline) s.s4d = S4DConfig{m.scheme, m.n_state};
  return s;
}

// Rejects every invalid field combination before any compute.
inline void validate(const RunConfig& cfg) {
  if (cfg.model.blocks == 0) throw config_error("model.blocks", "must be >= 1");
  if (cfg.model.ffn_mult == 0) throw config_error("model.ffn_mult", "must be >= 1");
  try {
    validate(module_spec_of(cfg.model));
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    const auto colon = msg.find(':');
    throw config_error(msg.substr(0, colon), msg.substr(colon + 2));
  }
  try {
    validate(cfg.task);
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    const auto colon = msg.find(':');
    throw config_error(msg.substr(0, colon), msg.substr(colon + 2));
  }
  if (cfg.train.lr <= 0.0) throw config_error("train.lr", "must be > 0");
  if (cfg.train.steps < 0) throw config_error("train.steps", "must be >= 0");
  if (cfg.train.batch == 0) throw config_error("train.batch", "must be >= 1");
  if (cfg.io.checkpoint.empty()) throw config_error("io.checkpoint", "must not be empty");
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_num(const std::string& section, const std::string& key, const std::string& v) {
  std::istringstream is(v);
  T out;
  is >> out;
  if (is.fail() || !is.eof()) throw config_error(section + "." + key, "bad value '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& section, const std::string& key,
                       const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw config_error(section + "." + key, "expected true/false");
}

}  // namespace detail

// Flat sectioned key=value text; '#' starts a comment.
inline RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw config_error("line " + std::to_string(lineno), "bad section header");
      section = line.substr(1, line.size() - 2);
      if (section != "model" && section != "task" && section != "train" && section != "io")
        throw config_error(section, "unknown section");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error("line " + std::to_string(lineno), "expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    const std::string path = section + "." + key;
    if (section == "model") {
      if (key == "approach") {
        if (val == "baseline") cfg.model.approach = Approach::Baseline;
        else if (val == "dir") cfg.model.approach = Approach::DIR;
        else if (val == "com") cfg.model.approach = Approach::COM;
        else if (val == "rep") cfg.model.approach = Approach::REP;
        else throw config_error(path, "expected baseline|dir|com|rep");
      } else if (key == "scheme") {
        if (val == "lin") cfg.model.scheme = Scheme::Lin;
        else if (val == "real") cfg.model.scheme = Scheme::Real;
        else throw config_error(path, "expected lin|real");
      } else if (key == "context") {
        if (val == "online") cfg.model.context = Context::Online;
        else if (val == "offline") cfg.model.context = Context::Offline;
        else throw config_error(path, "expected online|offline");
      } else if (key == "n_state") cfg.model.n_state = detail::parse_num<std::size_t>(section, key, val);
      else if (key == "h") cfg.model.h = detail::parse_num<std::size_t>(section, key, val);
      else if (key == "kernel_size") cfg.model.kernel_size = detail::parse_num<std::size_t>(section, key, val);
      else if (key == "rep_left_context") cfg.model.rep_left_context = detail::parse_num<std::size_t>(section, key, val);
      else if (key == "blocks") cfg.model.blocks = detail::parse_num<std::size_t>(section, key, val);
      else if (key == "ffn_mult") cfg.model.ffn_mult = detail::parse_num<std::size_t>(section, key, val);
      else if (key == "with_attention") cfg.model.with_attention = detail::parse_bool(section, key, val);
      else throw config_error(path, "unknown key");
    } else if (section == "task") {
      if (key == "kind") {
        if (val == "delayed_echo") cfg.task.kind = TaskKind::DelayedEcho;
        else if (val == "local_pattern") cfg.task.kind = TaskKind::LocalPattern;
        else throw config_error(path, "expected delayed_echo|local_pattern");
      } else if (key == "seq_len") cfg.task.seq_len = detail::parse_num<std::size_t>(section, key, val);
      else if (key == "delay") cfg.task.delay = detail::parse_num<std::size_t>(section, key, val);
      else if (key == "vocab") cfg.task.vocab = detail::parse_num<std::size_t>(section, key, val);
      else if (key == "train_size") cfg.task.train_size = detail::parse_num<std::size_t>(section, key, val);
      else if (key == "eval_size") cfg.task.eval_size = detail::parse_num<std::size_t>(section, key, val);
      else if (key == "seed") cfg.task.seed = detail::parse_num<std::uint64_t>(section, key, val);
      else throw config_error(path, "unknown key");
    } else if (section == "train") {
      if (key == "lr") cfg.train.lr = detail::parse_num<double>(section, key, val);
      else if (key == "beta1") cfg.train.beta1 = detail::parse_num<double>(section, key, val);
      else if (key == "beta2") cfg.train.beta2 = detail::parse_num<double>(section, key, val);
      else if (key == "eps") cfg.train.eps = detail::parse_num<double>(section, key, val);
      else if (key == "clip_norm") cfg.train.clip_norm = detail::parse_num<double>(section, key, val);
      else if (key == "steps") cfg.train.steps = detail::parse_num<long>(section, key, val);
      else if (key == "batch") cfg.train.batch = detail::parse_num<std::size_t>(section, key, val);
      else if (key == "seed") cfg.train.seed = detail::parse_num<std::uint64_t>(section, key, val);
      else if (key == "eval_interval") cfg.train.eval_interval = detail::parse_num<long>(section, key, val);
      else if (key == "log_interval") cfg.train.log_interval = detail::parse_num<long>(section, key, val);
      else if (key == "stop_at_accuracy") cfg.train.stop_at_accuracy = detail::parse_num<double>(section, key, val);
      else if (key == "min_steps") cfg.train.min_steps = detail::parse_num<long>(section, key, val);
      else throw config_error(path, "unknown key");
    } else if (section == "io") {
      if (key == "checkpoint") cfg.io.checkpoint = val;
      else if (key == "log") cfg.io.log = val;
      else throw config_error(path, "unknown key");
    } else {
      throw config_error("line " + std::to_string(lineno), "key outside any section");
    }
  }
  return cfg;
}

inline RunConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw config_error("config", "cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

// Canonical model-section string; its FNV-1a hash is the checkpoint digest.
inline std::string canonical_model_string(const ModelSection& m, std::size_t vocab) {
  std::ostringstream os;
  os << "approach=" << approach_name(m.approach)
     << ";scheme=" << (m.scheme == Scheme::Lin ? "lin" : "real") << ";n_state=" << m.n_state
     << ";h=" << m.h << ";kernel_size=" << m.kernel_size
     << ";rep_left_context=" << m.rep_left_context << ";blocks=" << m.blocks
     << ";ffn_mult=" << m.ffn_mult << ";with_attention=" << (m.with_attention ? 1 : 0)
     << ";context=" << (m.context == Context::Online ? "online" : "offline")
     << ";vocab=" << vocab;
  return os.str();
}

inline std::uint64_t model_digest(const ModelSection& m, std::size_t vocab) {
  return fnv1a64(canonical_model_string(m, vocab));
}

inline Model build_model(const ModelSection& ms, std::size_t vocab, std::uint64_t seed) {
  std::vector<ConvModuleSpec> specs(ms.blocks, module_spec_of(ms));
  Encoder enc = build_encoder(specs, ms.with_attention, {ms.ffn_mult}, seed);
  return make_model(vocab, vocab, std::move(enc), split_seed(seed, 0x909));
}

// ---- model <-> checkpoint ----

namespace detail {

inline Tensor meta_scalar(double v) { return Tensor::scalar(v); }

}  // namespace detail

inline void save_model_checkpoint(const std::string& path, Model& m, const ModelSection& ms) {
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  std::vector<Tensor> meta;
  meta.reserve(16);
  auto put_meta = [&](const std::string& name, double v) {
    meta.push_back(detail::meta_scalar(v));
    tensors.emplace_back("config/" + name, &meta.back());
  };
  put_meta("approach", double(int(ms.approach)));
  put_meta("scheme", double(int(ms.scheme)));
  put_meta("n_state", double(ms.n_state));
  put_meta("h", double(ms.h));
  put_meta("kernel_size", double(ms.kernel_size));
  put_meta("rep_left_context", double(ms.rep_left_context));
  put_meta("blocks", double(ms.blocks));
  put_meta("ffn_mult", double(ms.ffn_mult));
  put_meta("with_attention", ms.with_attention ? 1.0 : 0.0);
  put_meta("context", ms.context == Context::Online ? 0.0 : 1.0);
  put_meta("vocab", double(m.input_dim));
  for (const auto& r : registry(m)) tensors.emplace_back(r.name, r.tensor);
  save_checkpoint(path, model_digest(ms, m.input_dim), tensors);
}

struct LoadedModel {
  Model model;
  ModelSection section;
  std::size_t vocab = 0;
};

inline LoadedModel model_from_checkpoint(const std::string& path) {
  LoadedCheckpoint ck = load_checkpoint(path);
  auto need = [&](const std::string& name) -> double {
    auto it = ck.tensors.find("config/" + name);
    if (it == ck.tensors.end())
      throw std::runtime_error("checkpoint: missing config/" + name);
    return it->second(0);
  };
  LoadedModel lm;
  ModelSection& ms = lm.section;
  ms.approach = Approach(int(need("approach")));
  ms.scheme = Scheme(int(need("scheme")));
  ms.n_state = std::size_t(need("n_state"));
  ms.h = std::size_t(need("h"));
  ms.kernel_size = std::size_t(need("kernel_size"));
  ms.rep_left_context = std::size_t(need("rep_left_context"));
  ms.blocks = std::size_t(need("blocks"));
  ms.ffn_mult = std::size_t(need("ffn_mult"));
  ms.with_attention = need("with_attention") != 0.0;
  ms.context = need("context") == 0.0 ? Context::Online : Context::Offline;
  lm.vocab = std::size_t(need("vocab"));
  if (ck.config_digest != model_digest(ms, lm.vocab))
    throw std::runtime_error("checkpoint: config digest mismatch (corrupt or foreign file)");
  lm.model = build_model(ms, lm.vocab, 0);
  for (const auto& r : registry(lm.model)) {
    auto it = ck.tensors.find(r.name);
    if (it == ck.tensors.end())
      throw std::runtime_error("checkpoint: missing tensor " + r.name);
    if (it->second.numel() != r.tensor->numel())
      throw std::runtime_error("checkpoint: shape mismatch for " + r.name);
    std::copy(it->second.raw().begin(), it->second.raw().end(), r.tensor->raw().begin());
  }
  return lm;
}

}  // namespace s4dkit
