#include "mkmed/dataset.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mkmed/errors.hpp"

namespace mkmed {

using nlohmann::json;

namespace {

constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_index(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

std::string b64_encode(const std::vector<unsigned char>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    unsigned v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += kB64[v & 63];
  }
  size_t rem = bytes.size() - i;
  if (rem == 1) {
    unsigned v = bytes[i] << 16;
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += "==";
  } else if (rem == 2) {
    unsigned v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::vector<unsigned char> b64_decode(const std::string& s) {
  if (s.size() % 4 != 0) throw ConfigError("base64 length not a multiple of 4");
  std::vector<unsigned char> out;
  out.reserve(s.size() / 4 * 3);
  for (size_t i = 0; i < s.size(); i += 4) {
    int pad = 0;
    unsigned v = 0;
    for (int j = 0; j < 4; ++j) {
      char c = s[i + j];
      if (c == '=') {
        if (i + 4 != s.size() || j < 2) throw ConfigError("bad base64 padding");
        ++pad;
        v <<= 6;
        continue;
      }
      if (pad > 0) throw ConfigError("bad base64 padding");
      int d = b64_index(c);
      if (d < 0) throw ConfigError("bad base64 character");
      v = (v << 6) | static_cast<unsigned>(d);
    }
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<unsigned char>(v & 0xff));
  }
  return out;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  return in;
}

json parse_line(const std::string& line, const std::string& path, int n) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded())
    throw ConfigError(path + " line " + std::to_string(n) + ": invalid JSON");
  return j;
}

json parse_doc(const std::string& path) {
  std::ifstream in = open_in(path);
  std::ostringstream body;
  body << in.rdbuf();
  json j = json::parse(body.str(), nullptr, false);
  if (j.is_discarded()) throw ConfigError(path + ": invalid JSON");
  return j;
}

}  // namespace

std::string encode_f32(const std::vector<double>& values) {
  std::vector<unsigned char> bytes(values.size() * 4);
  for (size_t i = 0; i < values.size(); ++i) {
    float f = static_cast<float>(values[i]);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    bytes[i * 4 + 0] = static_cast<unsigned char>(u & 0xff);
    bytes[i * 4 + 1] = static_cast<unsigned char>((u >> 8) & 0xff);
    bytes[i * 4 + 2] = static_cast<unsigned char>((u >> 16) & 0xff);
    bytes[i * 4 + 3] = static_cast<unsigned char>((u >> 24) & 0xff);
  }
  return b64_encode(bytes);
}

std::vector<double> decode_f32(const std::string& b64) {
  std::vector<unsigned char> bytes = b64_decode(b64);
  if (bytes.size() % 4 != 0) throw ConfigError("float32 blob length not a multiple of 4");
  std::vector<double> out(bytes.size() / 4);
  for (size_t i = 0; i < out.size(); ++i) {
    std::uint32_t u = static_cast<std::uint32_t>(bytes[i * 4]) |
                      (static_cast<std::uint32_t>(bytes[i * 4 + 1]) << 8) |
                      (static_cast<std::uint32_t>(bytes[i * 4 + 2]) << 16) |
                      (static_cast<std::uint32_t>(bytes[i * 4 + 3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    out[i] = static_cast<double>(f);
  }
  return out;
}

void write_molecules(const std::string& path, const MoleculeTable& mols) {
  std::ofstream out = open_out(path);
  for (const auto& [id, smiles] : mols) {
    json j;
    j["id"] = id;
    j["smiles"] = smiles;
    out << j.dump() << '\n';
  }
}

MoleculeTable read_molecules(const std::string& path) {
  std::ifstream in = open_in(path);
  MoleculeTable mols;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = parse_line(line, path, ++n);
    if (!j.contains("id") || !j.contains("smiles"))
      throw ConfigError(path + " line " + std::to_string(n) + ": missing id or smiles");
    mols.emplace_back(j["id"].get<std::string>(), j["smiles"].get<std::string>());
  }
  return mols;
}

void write_modalities(const std::string& path, const std::vector<MultimodalRecord>& records) {
  std::ofstream out = open_out(path);
  for (const MultimodalRecord& r : records) {
    json j;
    j["id"] = r.mol_id;
    if (r.image) {
      j["image"]["shape"] = {r.image->height, r.image->width, r.image->channels};
      j["image"]["seed"] = r.image->seed;
      j["image"]["data"] = encode_f32(r.image->pixels);
    }
    if (r.text) {
      j["text"]["tokens"] = r.text->tokens;
      json segs = json::array();
      for (const auto& [b, e] : r.text->segments) segs.push_back({b, e});
      j["text"]["segments"] = segs;
    }
    if (r.conformer) {
      std::vector<double> flat;
      flat.reserve(r.conformer->coords.size() * 3);
      for (const Vec3& p : r.conformer->coords) {
        flat.push_back(p(0));
        flat.push_back(p(1));
        flat.push_back(p(2));
      }
      j["conformer"]["shape"] = {static_cast<int>(r.conformer->coords.size()), 3};
      j["conformer"]["seed"] = r.conformer->seed;
      j["conformer"]["data"] = encode_f32(flat);
    }
    if (r.props) {
      j["props"]["mw"] = r.props->mw;
      j["props"]["hba"] = r.props->hba;
      j["props"]["hbd"] = r.props->hbd;
      j["props"]["psa"] = r.props->psa;
      j["props"]["aromatic_rings"] = r.props->aromatic_rings;
    }
    if (r.kg_id) j["kg_id"] = *r.kg_id;
    out << j.dump() << '\n';
  }
}

std::vector<MultimodalRecord> read_modalities(const std::string& path,
                                              const MoleculeTable& mols) {
  std::ifstream in = open_in(path);
  std::vector<MultimodalRecord> records;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = parse_line(line, path, ++n);
    size_t i = records.size();
    if (i >= mols.size()) throw ConfigError(path + ": more records than molecules");
    MultimodalRecord r;
    r.mol_id = j.at("id").get<std::string>();
    if (r.mol_id != mols[i].first)
      throw ConfigError(path + " line " + std::to_string(n) + ": id does not match molecule table");
    r.graph = parse_smiles(mols[i].second);
    r.prepared = prepare(r.graph);
    if (j.contains("image")) {
      const json& im = j["image"];
      std::vector<int> shape = im.at("shape").get<std::vector<int>>();
      if (shape.size() != 3) throw ConfigError(path + ": image shape must have 3 dims");
      MoleculeImage img;
      img.height = shape[0];
      img.width = shape[1];
      img.channels = shape[2];
      img.seed = im.at("seed").get<std::uint64_t>();
      img.pixels = decode_f32(im.at("data").get<std::string>());
      if (static_cast<long long>(img.pixels.size()) !=
          static_cast<long long>(shape[0]) * shape[1] * shape[2])
        throw ConfigError(path + ": image data does not match declared shape");
      r.image = std::move(img);
    }
    if (j.contains("text")) {
      TextDescription td;
      td.tokens = j["text"].at("tokens").get<std::vector<int>>();
      for (const json& seg : j["text"].at("segments")) {
        if (!seg.is_array() || seg.size() != 2)
          throw ConfigError(path + ": text segment must be a [begin, end) pair");
        td.segments.emplace_back(seg[0].get<int>(), seg[1].get<int>());
      }
      r.text = std::move(td);
    }
    if (j.contains("conformer")) {
      const json& cf = j["conformer"];
      std::vector<int> shape = cf.at("shape").get<std::vector<int>>();
      if (shape.size() != 2 || shape[1] != 3)
        throw ConfigError(path + ": conformer shape must be [n, 3]");
      std::vector<double> flat = decode_f32(cf.at("data").get<std::string>());
      if (static_cast<long long>(flat.size()) != static_cast<long long>(shape[0]) * 3)
        throw ConfigError(path + ": conformer data does not match declared shape");
      Conformer c;
      c.seed = cf.at("seed").get<std::uint64_t>();
      c.coords.resize(static_cast<size_t>(shape[0]));
      for (int k = 0; k < shape[0]; ++k)
        c.coords[static_cast<size_t>(k)] =
            Vec3(flat[static_cast<size_t>(k) * 3], flat[static_cast<size_t>(k) * 3 + 1],
                 flat[static_cast<size_t>(k) * 3 + 2]);
      r.conformer = std::move(c);
    }
    if (j.contains("props")) {
      PropertyVector pv;
      pv.mw = j["props"].at("mw").get<double>();
      pv.hba = j["props"].at("hba").get<double>();
      pv.hbd = j["props"].at("hbd").get<double>();
      pv.psa = j["props"].at("psa").get<double>();
      pv.aromatic_rings = j["props"].at("aromatic_rings").get<double>();
      r.props = pv;
    }
    if (j.contains("kg_id")) r.kg_id = j["kg_id"].get<int>();
    records.push_back(std::move(r));
  }
  if (records.size() != mols.size())
    throw ConfigError(path + ": record count does not match molecule table");
  return records;
}

void write_kg(const std::string& path, const KGData& kg) {
  json j;
  j["n_entities"] = kg.n_entities;
  j["n_relations"] = kg.n_relations;
  json triples = json::array();
  for (const KGTriple& t : kg.triples) triples.push_back({t.head, t.relation, t.tail});
  j["triples"] = std::move(triples);
  json ents = json::object();
  for (const auto& [mol, ent] : kg.entity_of_mol) ents[mol] = ent;
  j["entity_of_mol"] = std::move(ents);
  open_out(path) << j.dump(2) << '\n';
}

KGData read_kg(const std::string& path) {
  json j = parse_doc(path);
  KGData kg;
  kg.n_entities = j.at("n_entities").get<int>();
  kg.n_relations = j.at("n_relations").get<int>();
  for (const json& t : j.at("triples")) {
    if (!t.is_array() || t.size() != 3)
      throw ConfigError(path + ": triple must be [head, relation, tail]");
    kg.triples.push_back({t[0].get<int>(), t[1].get<int>(), t[2].get<int>()});
  }
  for (const auto& [mol, ent] : j.at("entity_of_mol").items())
    kg.entity_of_mol[mol] = ent.get<int>();
  return kg;
}

void write_ddi(const std::string& path, const DDIMatrix& ddi) {
  json j;
  j["n_meds"] = ddi.size();
  json pairs = json::array();
  for (int a = 0; a < ddi.size(); ++a)
    for (int b = a + 1; b < ddi.size(); ++b)
      if (ddi.m(a, b) != 0.0) pairs.push_back({a, b});
  j["pairs"] = std::move(pairs);
  open_out(path) << j.dump(2) << '\n';
}

DDIMatrix read_ddi(const std::string& path) {
  json j = parse_doc(path);
  int n = j.at("n_meds").get<int>();
  std::vector<std::pair<int, int>> pairs;
  for (const json& p : j.at("pairs")) {
    if (!p.is_array() || p.size() != 2) throw ConfigError(path + ": pair must be [a, b]");
    pairs.emplace_back(p[0].get<int>(), p[1].get<int>());
  }
  return make_ddi(n, pairs);
}

void write_ehr(const std::string& path, const std::vector<PatientHistory>& patients) {
  std::ofstream out = open_out(path);
  for (const PatientHistory& p : patients) {
    json j;
    j["id"] = p.id;
    json visits = json::array();
    for (const Visit& v : p.visits) {
      json jv;
      jv["diseases"] = v.diseases;
      jv["procedures"] = v.procedures;
      jv["meds"] = v.meds;
      visits.push_back(std::move(jv));
    }
    j["visits"] = std::move(visits);
    out << j.dump() << '\n';
  }
}

std::vector<PatientHistory> read_ehr(const std::string& path) {
  std::ifstream in = open_in(path);
  std::vector<PatientHistory> patients;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = parse_line(line, path, ++n);
    PatientHistory p;
    p.id = j.at("id").get<std::string>();
    for (const json& jv : j.at("visits")) {
      Visit v;
      v.diseases = jv.at("diseases").get<IndexVec>();
      v.procedures = jv.at("procedures").get<IndexVec>();
      v.meds = jv.at("meds").get<IndexVec>();
      p.visits.push_back(std::move(v));
    }
    if (p.visits.empty())
      throw ConfigError(path + " line " + std::to_string(n) + ": patient with no visits");
    patients.push_back(std::move(p));
  }
  return patients;
}

void write_rules(const std::string& path, const EhrRules& rules) {
  json j;
  j["disease_meds"] = rules.disease_meds;
  j["procedure_meds"] = rules.procedure_meds;
  open_out(path) << j.dump(2) << '\n';
}

EhrRules read_rules(const std::string& path) {
  json j = parse_doc(path);
  EhrRules rules;
  rules.disease_meds = j.at("disease_meds").get<std::vector<IndexVec>>();
  rules.procedure_meds = j.at("procedure_meds").get<std::vector<IndexVec>>();
  return rules;
}

void write_bundle(const std::string& dir, const CorpusBundle& bundle) {
  write_molecules(dir + "/molecules.jsonl", bundle.molecules);
  write_modalities(dir + "/modalities.jsonl", bundle.corpus.records);
  write_kg(dir + "/kg.json", bundle.corpus.kg);
  write_ddi(dir + "/ddi.json", bundle.ddi);
  write_ehr(dir + "/ehr.jsonl", bundle.ehr.patients);
  write_rules(dir + "/rules.json", bundle.ehr.rules);
}

CorpusBundle read_bundle(const std::string& dir) {
  CorpusBundle b;
  b.molecules = read_molecules(dir + "/molecules.jsonl");
  b.corpus.records = read_modalities(dir + "/modalities.jsonl", b.molecules);
  b.corpus.kg = read_kg(dir + "/kg.json");
  b.ddi = read_ddi(dir + "/ddi.json");
  b.ehr.patients = read_ehr(dir + "/ehr.jsonl");
  b.ehr.rules = read_rules(dir + "/rules.json");
  return b;
}

}  // namespace mkmed
