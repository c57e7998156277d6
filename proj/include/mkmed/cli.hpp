#pragma once

// Command front end. Each cmd_* is the complete body of one subcommand and
// throws domain errors; cli_main maps them to process exit codes: 2 for bad
// configs, specs, variants, or experiment names, 3 for a non-finite loss,
// 4 for an empty intersection pool, 5 for a vocabulary mismatch, 1 for
// anything else.

#include <cstdint>
#include <optional>
#include <string>

namespace mkmed {

struct CliOptions {
  std::string config;      // run-config path (generate: synth-spec path)
  std::string data;        // corpus bundle directory
  std::string out = ".";   // output directory, created if absent
  std::string mode = "rotating";
  std::string variant = "full";
  std::string checkpoint;  // pretrain checkpoint (train) / train checkpoint (evaluate)
  std::optional<int> bootstrap;
  std::optional<std::uint64_t> seed;
};

// Synthesizes a corpus bundle into out/ and prints the coverage summary.
void cmd_generate(const CliOptions& opt);

// Contrastive pre-training; writes pretrain.ckpt and pretrain_loss.csv.
void cmd_pretrain(const CliOptions& opt);

// Downstream training; writes train.ckpt and train_loss.csv. Without a
// pretrain checkpoint the encoders stay at initialization (the pt arm).
void cmd_train(const CliOptions& opt);

// Test-split metrics with bootstrap dispersion; writes report.json and
// report.csv.
void cmd_evaluate(const CliOptions& opt);

// name: ablation | modality-sweep | alignment-comparison | param-sweep.
// Writes <name>.csv, one row per configuration x metric x seed.
void cmd_experiment(const std::string& name, const CliOptions& opt);

int cli_main(int argc, char** argv);

}  // namespace mkmed
