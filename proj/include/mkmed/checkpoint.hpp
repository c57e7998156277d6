#pragma once

// Single-file model container: an 8-byte magic, a little-endian u64 header
// length, a canonical JSON header (format version, kind, config echo, vocab
// table, named block table), then raw float32 little-endian blocks in table
// order. The header carries no timestamps and the block table is sorted by
// name, so saving the same state twice yields byte-identical files. load
// rejects anything malformed with CheckpointError.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mkmed/types.hpp"

namespace mkmed {

inline constexpr char kCheckpointMagic[9] = "MKMEDCK1";

struct CheckpointMeta {
  int format = 1;
  std::string kind;  // "pretrain" or "train"
  std::map<std::string, std::string> config;  // flat run-config echo
  std::map<std::string, long long> vocab;     // dimensions the blocks assume
};

// Blocks are (name, matrix); names must be unique. Values are cast to
// float32 on write.
void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<std::pair<std::string, Mat>>& blocks);

struct Checkpoint {
  CheckpointMeta meta;
  std::vector<std::pair<std::string, Mat>> blocks;  // sorted by name

  bool has_block(const std::string& name) const;
  const Mat& block(const std::string& name) const;  // CheckpointError if absent
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace mkmed
