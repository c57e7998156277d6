#include "mkmed/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "mkmed/errors.hpp"
#include "mkmed/rng.hpp"

namespace mkmed {

namespace {

struct KeyValue {
  std::string key;
  std::string value;
  int line;
};

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<KeyValue> split_pairs(const std::string& text) {
  std::vector<KeyValue> out;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    size_t hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    std::string s = trim(raw);
    if (s.empty()) continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line) + ": expected key = value");
    KeyValue kv{trim(s.substr(0, eq)), trim(s.substr(eq + 1)), line};
    if (kv.key.empty() || kv.value.empty())
      throw ConfigError("line " + std::to_string(line) + ": empty key or value");
    if (!seen.insert(kv.key).second)
      throw ConfigError("line " + std::to_string(line) + ": duplicate key '" + kv.key + "'");
    out.push_back(std::move(kv));
  }
  return out;
}

[[noreturn]] void bad_value(const KeyValue& kv, const std::string& why) {
  throw ConfigError("line " + std::to_string(kv.line) + ": key '" + kv.key + "': " + why);
}

long long to_int(const KeyValue& kv) {
  long long v = 0;
  auto [p, ec] = std::from_chars(kv.value.data(), kv.value.data() + kv.value.size(), v);
  if (ec != std::errc() || p != kv.value.data() + kv.value.size())
    bad_value(kv, "not an integer");
  return v;
}

std::uint64_t to_u64(const KeyValue& kv) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(kv.value.data(), kv.value.data() + kv.value.size(), v);
  if (ec != std::errc() || p != kv.value.data() + kv.value.size())
    bad_value(kv, "not a non-negative integer");
  return v;
}

double to_double(const KeyValue& kv) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(kv.value.data(), kv.value.data() + kv.value.size(), v);
  if (ec != std::errc() || p != kv.value.data() + kv.value.size())
    bad_value(kv, "not a number");
  if (!std::isfinite(v)) bad_value(kv, "not finite");
  return v;
}

bool to_bool(const KeyValue& kv) {
  if (kv.value == "true" || kv.value == "1") return true;
  if (kv.value == "false" || kv.value == "0") return false;
  bad_value(kv, "expected true or false");
}

std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream body;
  body << in.rdbuf();
  return body.str();
}

}  // namespace

void validate_run_config(const RunConfig& cfg) {
  auto fail = [](const std::string& why) { throw ConfigError(why); };
  if (cfg.dim < 8 || cfg.dim > 1024 || cfg.dim % 4 != 0)
    fail("dim must be a multiple of 4 in [8, 1024]");
  if (cfg.gin_layers < 1 || cfg.gin_layers > 16) fail("gin_layers must be in [1, 16]");
  if (cfg.delta < 0.0 || cfg.delta > 1.0) fail("delta must be in [0, 1]");
  if (cfg.beta < 0.0 || cfg.beta > 1.0) fail("beta must be in [0, 1]");
  if (cfg.gamma == -1.0) fail("gamma is required (no default)");
  if (cfg.gamma < 0.0 || cfg.gamma > 1.0) fail("gamma must be in [0, 1]");
  if (cfg.ddi_target < 0.0 || cfg.ddi_target > 1.0) fail("ddi_target must be in [0, 1]");
  if (cfg.pretrain_epochs < 0) fail("pretrain_epochs must be >= 0");
  if (!(cfg.pretrain_lr > 0.0)) fail("pretrain_lr must be > 0");
  if (cfg.pretrain_batch < 2) fail("pretrain_batch must be >= 2");
  if (cfg.train_epochs < 0) fail("train_epochs must be >= 0");
  if (!(cfg.train_lr > 0.0)) fail("train_lr must be > 0");
  if (cfg.weight_decay < 0.0) fail("weight_decay must be >= 0");
  if (cfg.bootstrap < 1) fail("bootstrap must be >= 1");
  if (cfg.n_seeds < 1) fail("n_seeds must be >= 1");
}

namespace {

// Shared by the text parser and the checkpoint echo loader.
RunConfig apply_run_keys(const std::vector<KeyValue>& pairs) {
  RunConfig cfg;
  for (const KeyValue& kv : pairs) {
    if (kv.key == "dim") cfg.dim = static_cast<int>(to_int(kv));
    else if (kv.key == "gin_layers") cfg.gin_layers = static_cast<int>(to_int(kv));
    else if (kv.key == "delta") cfg.delta = to_double(kv);
    else if (kv.key == "beta") cfg.beta = to_double(kv);
    else if (kv.key == "gamma") cfg.gamma = to_double(kv);
    else if (kv.key == "ddi_target") cfg.ddi_target = to_double(kv);
    else if (kv.key == "beta_controller") cfg.beta_controller = to_bool(kv);
    else if (kv.key == "pretrain_epochs") cfg.pretrain_epochs = static_cast<int>(to_int(kv));
    else if (kv.key == "pretrain_lr") cfg.pretrain_lr = to_double(kv);
    else if (kv.key == "pretrain_batch") cfg.pretrain_batch = static_cast<int>(to_int(kv));
    else if (kv.key == "train_epochs") cfg.train_epochs = static_cast<int>(to_int(kv));
    else if (kv.key == "train_lr") cfg.train_lr = to_double(kv);
    else if (kv.key == "weight_decay") cfg.weight_decay = to_double(kv);
    else if (kv.key == "bootstrap") cfg.bootstrap = static_cast<int>(to_int(kv));
    else if (kv.key == "n_seeds") cfg.n_seeds = static_cast<int>(to_int(kv));
    else if (kv.key == "seed") cfg.seed = to_u64(kv);
    else throw ConfigError("line " + std::to_string(kv.line) + ": unknown key '" + kv.key + "'");
  }
  validate_run_config(cfg);
  return cfg;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  return apply_run_keys(split_pairs(text));
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_file(path));
}

SynthSpec parse_synth_spec(const std::string& text) {
  SynthSpec spec;
  for (const KeyValue& kv : split_pairs(text)) {
    if (kv.key == "n_molecules") spec.n_molecules = static_cast<int>(to_int(kv));
    else if (kv.key == "n_diseases") spec.n_diseases = static_cast<int>(to_int(kv));
    else if (kv.key == "n_procedures") spec.n_procedures = static_cast<int>(to_int(kv));
    else if (kv.key == "n_medications") spec.n_medications = static_cast<int>(to_int(kv));
    else if (kv.key == "n_patients") spec.n_patients = static_cast<int>(to_int(kv));
    else if (kv.key == "visits_mean") spec.visits_mean = to_double(kv);
    else if (kv.key == "rule_noise") spec.rule_noise = to_double(kv);
    else if (kv.key == "ddi_density") spec.ddi_density = to_double(kv);
    else if (kv.key == "seed") spec.seed = to_u64(kv);
    else if (kv.key == "coverage_image") spec.coverage.image = to_double(kv);
    else if (kv.key == "coverage_text") spec.coverage.text = to_double(kv);
    else if (kv.key == "coverage_structure") spec.coverage.structure = to_double(kv);
    else if (kv.key == "coverage_props") spec.coverage.props = to_double(kv);
    else if (kv.key == "coverage_kg") spec.coverage.kg = to_double(kv);
    else throw ConfigError("line " + std::to_string(kv.line) + ": unknown key '" + kv.key + "'");
  }
  validate_spec(spec);
  return spec;
}

SynthSpec load_synth_spec(const std::string& path) {
  return parse_synth_spec(read_file(path));
}

std::map<std::string, std::string> config_to_map(const RunConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["dim"] = std::to_string(cfg.dim);
  kv["gin_layers"] = std::to_string(cfg.gin_layers);
  kv["delta"] = fmt_double(cfg.delta);
  kv["beta"] = fmt_double(cfg.beta);
  kv["gamma"] = fmt_double(cfg.gamma);
  kv["ddi_target"] = fmt_double(cfg.ddi_target);
  kv["beta_controller"] = cfg.beta_controller ? "true" : "false";
  kv["pretrain_epochs"] = std::to_string(cfg.pretrain_epochs);
  kv["pretrain_lr"] = fmt_double(cfg.pretrain_lr);
  kv["pretrain_batch"] = std::to_string(cfg.pretrain_batch);
  kv["train_epochs"] = std::to_string(cfg.train_epochs);
  kv["train_lr"] = fmt_double(cfg.train_lr);
  kv["weight_decay"] = fmt_double(cfg.weight_decay);
  kv["bootstrap"] = std::to_string(cfg.bootstrap);
  kv["n_seeds"] = std::to_string(cfg.n_seeds);
  kv["seed"] = std::to_string(cfg.seed);
  return kv;
}

RunConfig config_from_map(const std::map<std::string, std::string>& kv) {
  std::vector<KeyValue> pairs;
  int line = 0;
  for (const auto& [k, v] : kv) pairs.push_back({k, v, ++line});
  return apply_run_keys(pairs);
}

std::string config_hash(const RunConfig& cfg) {
  std::string blob;
  for (const auto& [k, v] : config_to_map(cfg)) {
    blob += k;
    blob += '=';
    blob += v;
    blob += ';';
  }
  std::uint64_t h = fnv1a(blob);
  static const char* hex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = hex[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace mkmed
