#pragma once

#include <charconv>
#include <sstream>
#include <string>

#include "hbm/eval/synth.hpp"
#include "hbm/eval/train.hpp"

namespace hbm::eval {

/// Training corpus: a PLY list file, or synthetic sequences when `list` is empty.
struct DataConfig {
  std::string list;  ///< One PLY path per line; a blank line starts a new sequence.
  int shift = 0;     ///< Right shift applied to PLY coordinates on ingest.
  SynthParams synth;
  int sequences = 1;  ///< Synthetic sequences, seeds synth.seed, synth.seed + 1, ...
};

/// Everything a training run reads from its config file.
struct RunConfig {
  codec::ModelConfig model;
  TrainConfig train;
  DataConfig data;
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) throw std::invalid_argument("bad value for " + key + ": '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("bad value for " + key + ": '" + v + "'");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace detail

/// Applies one key. Model keys are bare (see ModelConfig); training keys are
/// prefixed "train.", corpus keys "data.". Unknown keys throw.
inline void set_run_key(RunConfig& c, const std::string& key, const std::string& v) {
  using detail::parse_bool;
  using detail::parse_number;
  auto positive = [&](double x) {
    if (!(x > 0)) throw std::invalid_argument(key + " must be positive");
    return x;
  };
  auto at_least = [&](long long x, long long lo) {
    if (x < lo) throw std::invalid_argument(key + " must be >= " + std::to_string(lo));
    return x;
  };
  TrainConfig& t = c.train;
  DataConfig& d = c.data;
  if (key == "train.lambda") {
    t.lambda = parse_number<double>(key, v);
    if (!(t.lambda >= 0)) throw std::invalid_argument(key + " must be >= 0");
  } else if (key == "train.epochs") t.epochs = static_cast<int>(at_least(parse_number<int>(key, v), 1));
  else if (key == "train.max_steps") t.max_steps = static_cast<long>(at_least(parse_number<long>(key, v), 0));
  else if (key == "train.batch") t.batch = static_cast<int>(at_least(parse_number<int>(key, v), 1));
  else if (key == "train.lr") t.lr = positive(parse_number<double>(key, v));
  else if (key == "train.lr_decay") t.lr_decay = positive(parse_number<double>(key, v));
  else if (key == "train.lr_period") t.lr_period = static_cast<int>(at_least(parse_number<int>(key, v), 1));
  else if (key == "train.two_stage") t.two_stage = parse_bool(key, v);
  else if (key == "train.warmup_lambda") t.warmup_lambda = positive(parse_number<double>(key, v));
  else if (key == "train.warmup_epochs") t.warmup_epochs = static_cast<int>(at_least(parse_number<int>(key, v), 0));
  else if (key == "train.intra_period") t.intra_period = static_cast<int>(at_least(parse_number<int>(key, v), 0));
  else if (key == "train.adam_beta1") t.adam.beta1 = parse_number<double>(key, v);
  else if (key == "train.adam_beta2") t.adam.beta2 = parse_number<double>(key, v);
  else if (key == "train.seed") t.seed = parse_number<uint64_t>(key, v);
  else if (key == "data.list") d.list = v;
  else if (key == "data.shift") d.shift = static_cast<int>(at_least(parse_number<int>(key, v), 0));
  else if (key == "data.kind") d.synth.kind = parse_synth_kind(v);
  else if (key == "data.frames") d.synth.frames = static_cast<int>(at_least(parse_number<int>(key, v), 2));
  else if (key == "data.points") d.synth.points = static_cast<size_t>(at_least(parse_number<long long>(key, v), 10));
  else if (key == "data.bit_depth") d.synth.bit_depth = static_cast<int>(at_least(parse_number<int>(key, v), 5));
  else if (key == "data.seed") d.synth.seed = parse_number<uint64_t>(key, v);
  else if (key == "data.sequences") d.sequences = static_cast<int>(at_least(parse_number<int>(key, v), 1));
  else if (codec::ModelConfig::known(key)) c.model.set(key, v);
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

/// Parses "key = value" lines; '#' starts a comment. Errors name the line.
inline RunConfig parse_run_config(const std::string& text, RunConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    try {
      if (eq == std::string::npos) throw std::invalid_argument("expected 'key = value'");
      set_run_key(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("line " + std::to_string(n) + ": " + e.what());
    }
  }
  return base;
}

/// Default configuration as a commented config file.
inline std::string default_run_config_text() {
  const RunConfig c;
  std::ostringstream o;
  o << "# Model architecture (must match at encode/decode time).\n";
  o << "# alpha: 3DAWI denominator floor; radius, k: KABM ball radius and neighbour count.\n";
  for (const auto& [k, v] : c.model.to_map()) o << k << " = " << v << "\n";
  o << "\n# Optimisation: Adam, lr decayed by lr_decay every lr_period epochs,\n"
       "# warm-up at warmup_lambda for warmup_epochs when two_stage is set.\n"
       "# Reference lambda set: 5, 6, 7, 10, 15.\n";
  o << "train.lambda = " << c.train.lambda << "\ntrain.epochs = " << c.train.epochs
    << "\ntrain.max_steps = " << c.train.max_steps << "\ntrain.batch = " << c.train.batch
    << "\ntrain.lr = " << c.train.lr << "\ntrain.lr_decay = " << c.train.lr_decay
    << "\ntrain.lr_period = " << c.train.lr_period << "\ntrain.two_stage = " << (c.train.two_stage ? "true" : "false")
    << "\ntrain.warmup_lambda = " << c.train.warmup_lambda << "\ntrain.warmup_epochs = " << c.train.warmup_epochs
    << "\ntrain.intra_period = " << c.train.intra_period << "\ntrain.adam_beta1 = " << c.train.adam.beta1
    << "\ntrain.adam_beta2 = " << c.train.adam.beta2 << "\ntrain.seed = " << c.train.seed << "\n";
  o << "\n# Corpus: data.list names a PLY list file; otherwise synthetic sequences.\n";
  o << "data.list =\ndata.shift = " << c.data.shift
    << "\ndata.kind = rigid-translate\ndata.frames = " << c.data.synth.frames
    << "\ndata.points = " << c.data.synth.points << "\ndata.bit_depth = " << c.data.synth.bit_depth
    << "\ndata.seed = " << c.data.synth.seed << "\ndata.sequences = " << c.data.sequences << "\n";
  return o.str();
}

}  // namespace hbm::eval
