#include "mkmed/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mkmed/errors.hpp"

namespace mkmed {

using nlohmann::json;

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw CheckpointError("truncated header length");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

void put_f32(std::ostream& out, double x) {
  float f = static_cast<float>(x);
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<std::pair<std::string, Mat>>& blocks) {
  std::vector<std::pair<std::string, Mat>> sorted = blocks;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::set<std::string> names;
  for (const auto& [name, m] : sorted) {
    if (name.empty()) throw CheckpointError("empty block name");
    if (!names.insert(name).second) throw CheckpointError("duplicate block name '" + name + "'");
    if (m.rows() < 1 || m.cols() < 1)
      throw CheckpointError("block '" + name + "' is empty");
  }

  json header;
  header["format"] = meta.format;
  header["kind"] = meta.kind;
  header["config"] = meta.config;
  header["vocab"] = meta.vocab;
  json table = json::array();
  for (const auto& [name, m] : sorted)
    table.push_back({{"name", name},
                     {"rows", static_cast<long long>(m.rows())},
                     {"cols", static_cast<long long>(m.cols())}});
  header["blocks"] = std::move(table);
  std::string hbytes = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path);
  out.write(kCheckpointMagic, 8);
  put_u64(out, hbytes.size());
  out.write(hbytes.data(), static_cast<std::streamsize>(hbytes.size()));
  for (const auto& [name, m] : sorted)
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) put_f32(out, m(r, c));
  if (!out) throw CheckpointError("write failed for " + path);
}

bool Checkpoint::has_block(const std::string& name) const {
  for (const auto& [n, m] : blocks)
    if (n == name) return true;
  return false;
}

const Mat& Checkpoint::block(const std::string& name) const {
  for (const auto& [n, m] : blocks)
    if (n == name) return m;
  throw CheckpointError("missing block '" + name + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);

  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw CheckpointError(path + ": bad magic");

  std::uint64_t hlen = get_u64(in);
  if (hlen == 0 || hlen > (1ull << 24)) throw CheckpointError(path + ": implausible header length");
  std::string hbytes(hlen, '\0');
  in.read(hbytes.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw CheckpointError(path + ": truncated header");
  json header = json::parse(hbytes, nullptr, false);
  if (header.is_discarded()) throw CheckpointError(path + ": header is not valid JSON");

  Checkpoint ck;
  try {
    ck.meta.format = header.at("format").get<int>();
    ck.meta.kind = header.at("kind").get<std::string>();
    ck.meta.config = header.at("config").get<std::map<std::string, std::string>>();
    ck.meta.vocab = header.at("vocab").get<std::map<std::string, long long>>();
    if (ck.meta.format != 1)
      throw CheckpointError(path + ": unsupported format " + std::to_string(ck.meta.format));
    std::set<std::string> names;
    for (const json& row : header.at("blocks")) {
      std::string name = row.at("name").get<std::string>();
      long long rows = row.at("rows").get<long long>();
      long long cols = row.at("cols").get<long long>();
      if (rows < 1 || cols < 1 || rows > (1 << 24) || cols > (1 << 24))
        throw CheckpointError(path + ": block '" + name + "' has bad shape");
      if (!names.insert(name).second)
        throw CheckpointError(path + ": duplicate block '" + name + "'");
      Mat m(rows, cols);
      std::vector<unsigned char> buf(static_cast<size_t>(rows * cols) * 4);
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
      if (!in) throw CheckpointError(path + ": truncated block '" + name + "'");
      for (long long i = 0; i < rows * cols; ++i) {
        std::uint32_t u = static_cast<std::uint32_t>(buf[static_cast<size_t>(i) * 4]) |
                          (static_cast<std::uint32_t>(buf[static_cast<size_t>(i) * 4 + 1]) << 8) |
                          (static_cast<std::uint32_t>(buf[static_cast<size_t>(i) * 4 + 2]) << 16) |
                          (static_cast<std::uint32_t>(buf[static_cast<size_t>(i) * 4 + 3]) << 24);
        float f;
        std::memcpy(&f, &u, 4);
        m(i / cols, i % cols) = static_cast<double>(f);
      }
      ck.blocks.emplace_back(std::move(name), std::move(m));
    }
  } catch (const json::exception& e) {
    throw CheckpointError(path + ": malformed header (" + e.what() + ")");
  }
  char extra;
  if (in.read(&extra, 1))
    throw CheckpointError(path + ": trailing bytes after last block");
  return ck;
}

}  // namespace mkmed
