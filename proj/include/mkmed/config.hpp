#pragma once

// Run configuration: a flat `key = value` file covering every training
// hyperparameter. Parsing is strict so typos cannot pass silently: unknown
// keys, duplicate keys, and out-of-range values all raise ConfigError.
// gamma has no default; every run states its label/margin mix explicitly.

#include <cstdint>
#include <map>
#include <string>

#include "mkmed/synthgen.hpp"

namespace mkmed {

struct RunConfig {
  int dim = 64;
  int gin_layers = 2;
  double delta = 0.5;    // recommendation threshold on sigmoid scores
  double beta = 0.95;    // weight of the label terms vs the interaction term
  double gamma = -1.0;   // cross-entropy vs margin mix; required, no default
  double ddi_target = 0.06;
  bool beta_controller = false;
  int pretrain_epochs = 20;
  double pretrain_lr = 1e-6;  // paper rate; desk-scale runs set 1e-4
  int pretrain_batch = 32;
  int train_epochs = 25;
  double train_lr = 5e-4;
  double weight_decay = 0.05;
  int bootstrap = 50;  // resamples per reported metric
  int n_seeds = 1;     // seeds per experiment configuration
  std::uint64_t seed = 0;
};

// Parses config text; `#` starts a comment, blank lines are skipped.
// Throws ConfigError on unknown keys, bad values, or a missing gamma.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Re-validates a hand-assembled config (same checks the parser runs).
void validate_run_config(const RunConfig& cfg);

// Synthetic corpus spec in the same file format. Keys mirror SynthSpec
// fields; coverage probabilities are coverage_image, coverage_text,
// coverage_structure, coverage_props, coverage_kg.
SynthSpec parse_synth_spec(const std::string& text);
SynthSpec load_synth_spec(const std::string& path);

// Flat string map of every field, in the config file's own syntax. Values
// use shortest round-trip formatting, so map -> config -> map is exact.
std::map<std::string, std::string> config_to_map(const RunConfig& cfg);
RunConfig config_from_map(const std::map<std::string, std::string>& kv);

// Stable 16-hex-digit digest over every field; keys experiment CSV rows.
std::string config_hash(const RunConfig& cfg);

}  // namespace mkmed
