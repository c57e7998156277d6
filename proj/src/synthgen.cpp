#include "mkmed/synthgen.hpp"

#include <algorithm>
#include <iomanip>
#include <set>
#include <sstream>
#include <unordered_set>

#include "mkmed/errors.hpp"
#include "mkmed/rng.hpp"

namespace mkmed {

namespace {

std::string padded_id(char prefix, int index, int total) {
  int width = static_cast<int>(std::to_string(total - 1).size());
  std::ostringstream os;
  os << prefix << std::setw(width) << std::setfill('0') << index;
  return os.str();
}

// k distinct values in [0, n), ascending. Caps k at n.
IndexVec sample_distinct(Rng& rng, int k, int n) {
  k = std::min(k, n);
  IndexVec out;
  while (static_cast<int>(out.size()) < k) {
    int v = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// One random SMILES string: a chain of 1-8 heavy atoms, optionally starting
// with a 3-6 membered carbon ring (aromatic when six-membered, half the
// time). Bond orders respect default valences by construction, halogens
// stay terminal.
std::string sample_smiles(Rng& rng) {
  int length = 1 + static_cast<int>(rng.below(8));
  std::string s;
  int emitted = 0;
  int prev_rem = 0;  // valence left on the chain-end atom
  if (length >= 3 && rng.bernoulli(0.35)) {
    int rmax = std::min(length, 6);
    int r = 3 + static_cast<int>(rng.below(static_cast<std::uint64_t>(rmax - 2)));
    if (r == 6 && rng.bernoulli(0.5)) {
      s = "c1ccccc1";
      prev_rem = 1;  // two aromatic bonds take three of carbon's four
    } else {
      s = "C1";
      s.append(static_cast<size_t>(r - 2), 'C');
      s += "C1";
      prev_rem = 2;
    }
    emitted = r;
  }
  for (int i = emitted; i < length; ++i) {
    bool first = s.empty();
    bool last = (i == length - 1);
    std::string sym;
    int valence;
    if (last && rng.bernoulli(0.12)) {
      const char* halogen[] = {"F", "Cl", "Br"};
      sym = halogen[rng.below(3)];
      valence = 1;
    } else {
      double u = rng.uniform();
      if (u < 0.62) {
        sym = "C";
        valence = 4;
      } else if (u < 0.76) {
        sym = "N";
        valence = 3;
      } else if (u < 0.90) {
        sym = "O";
        valence = 2;
      } else {
        sym = "S";
        valence = 2;
      }
    }
    if (first) {
      prev_rem = valence;
    } else {
      int reserve = last ? 0 : 1;  // next chain bond still needs one slot
      int order = 1;
      if (prev_rem >= 3 && sym == "C" && rng.bernoulli(0.05)) {
        order = 3;
      } else if (prev_rem >= 2 && valence >= 2 + reserve && rng.bernoulli(0.18)) {
        order = 2;
      }
      if (order == 2) s += '=';
      if (order == 3) s += '#';
      prev_rem = valence - order;
    }
    s += sym;
  }
  return s;
}

}  // namespace

void validate_spec(const SynthSpec& spec) {
  if (spec.n_molecules < 1 || spec.n_diseases < 1 || spec.n_procedures < 1 ||
      spec.n_medications < 1 || spec.n_patients < 1)
    throw ConfigError("synth spec: all entity counts must be positive");
  if (spec.n_medications > spec.n_molecules)
    throw ConfigError("synth spec: n_medications exceeds n_molecules");
  if (spec.visits_mean < 1.0)
    throw ConfigError("synth spec: visits_mean must be at least 1");
  if (spec.rule_noise < 0.0 || spec.rule_noise > 1.0)
    throw ConfigError("synth spec: rule_noise outside [0,1]");
  if (spec.ddi_density < 0.0 || spec.ddi_density > 1.0)
    throw ConfigError("synth spec: ddi_density outside [0,1]");
  for (const auto& m : kModalityOrder) {
    double p = spec.coverage.get(m);
    if (p < 0.0 || p > 1.0) throw ConfigError("synth spec: coverage for " + m + " outside [0,1]");
  }
}

std::vector<std::pair<std::string, std::string>> gen_molecules(const SynthSpec& spec) {
  validate_spec(spec);
  Rng rng(derive_seed(spec.seed, "molecules"));
  std::vector<std::pair<std::string, std::string>> out;
  std::unordered_set<std::string> seen;
  // Give up once this many draws in a row add nothing new; at that point the
  // grammar is effectively tapped out.
  const int kStallCap = 5000;
  int stall = 0;
  while (static_cast<int>(out.size()) < spec.n_molecules) {
    if (stall >= kStallCap)
      throw ExhaustedAttempts("gen_molecules: grammar yielded " + std::to_string(out.size()) +
                              " of " + std::to_string(spec.n_molecules) + " distinct molecules");
    std::string smi = sample_smiles(rng);
    MoleculeGraph g = parse_smiles(smi);  // valid by construction
    if (!seen.insert(wl_id(g)).second) {
      ++stall;
      continue;
    }
    stall = 0;
    out.emplace_back(padded_id('m', static_cast<int>(out.size()), spec.n_molecules), smi);
  }
  return out;
}

ModalityCorpus gen_modalities(
    const std::vector<std::pair<std::string, std::string>>& molecules,
    const CoverageProfile& coverage, std::uint64_t seed) {
  ModalityCorpus corpus;
  std::vector<std::pair<std::string, MoleculeGraph>> kg_mols;
  for (std::size_t i = 0; i < molecules.size(); ++i) {
    MultimodalRecord rec;
    rec.mol_id = molecules[i].first;
    rec.graph = parse_smiles(molecules[i].second);
    rec.prepared = prepare(rec.graph);
    auto present = [&](const std::string& m) {
      Rng r(derive_seed(seed, "mask." + m, i));
      return r.bernoulli(coverage.get(m));
    };
    if (present("image")) rec.image = rasterize(rec.graph, 32, derive_seed(seed, "image", i));
    if (present("text")) rec.text = describe(rec.graph, derive_seed(seed, "text", i));
    if (present("structure")) {
      try {
        rec.conformer = generate_conformer(rec.graph, derive_seed(seed, "structure", i));
      } catch (const RelaxationFailure&) {
        // drop the modality for this record rather than abort the corpus
      }
    }
    if (present("props")) rec.props = descriptors(rec.graph);
    if (present("kg")) kg_mols.emplace_back(rec.mol_id, rec.graph);
    corpus.records.push_back(std::move(rec));
  }
  if (!kg_mols.empty()) {
    corpus.kg = synth_kg(kg_mols, derive_seed(seed, "kg"));
    for (auto& rec : corpus.records) {
      auto it = corpus.kg.entity_of_mol.find(rec.mol_id);
      if (it != corpus.kg.entity_of_mol.end()) rec.kg_id = it->second;
    }
  }
  return corpus;
}

DDIMatrix gen_ddi(const SynthSpec& spec) {
  validate_spec(spec);
  Rng rng(derive_seed(spec.seed, "ddi"));
  int n = spec.n_medications;
  Mat m = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (rng.bernoulli(spec.ddi_density)) {
        m(i, j) = 1.0;
        m(j, i) = 1.0;
      }
  validate_ddi(m);
  DDIMatrix ddi;
  ddi.m = std::move(m);
  return ddi;
}

EhrCorpus gen_ehr(const SynthSpec& spec) {
  validate_spec(spec);
  EhrCorpus corpus;
  Rng rules_rng(derive_seed(spec.seed, "rules"));
  corpus.rules.disease_meds.resize(static_cast<size_t>(spec.n_diseases));
  for (auto& meds : corpus.rules.disease_meds)
    meds = sample_distinct(rules_rng, 1 + static_cast<int>(rules_rng.below(3)), spec.n_medications);
  corpus.rules.procedure_meds.resize(static_cast<size_t>(spec.n_procedures));
  for (auto& meds : corpus.rules.procedure_meds)
    meds = sample_distinct(rules_rng, static_cast<int>(rules_rng.below(3)), spec.n_medications);

  for (int p = 0; p < spec.n_patients; ++p) {
    Rng rng(derive_seed(spec.seed, "patient", static_cast<std::uint64_t>(p)));
    PatientHistory hist;
    hist.id = padded_id('p', p, spec.n_patients);
    int n_visits = 1 + rng.poisson(spec.visits_mean - 1.0);
    IndexVec prev_diseases;
    for (int v = 0; v < n_visits; ++v) {
      Visit visit;
      IndexVec ds;
      for (int d : prev_diseases)
        if (rng.bernoulli(0.5)) ds.push_back(d);
      int target = 1 + static_cast<int>(rng.below(5));
      while (static_cast<int>(ds.size()) < std::min(target, spec.n_diseases)) {
        int d = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.n_diseases)));
        if (std::find(ds.begin(), ds.end(), d) == ds.end()) ds.push_back(d);
      }
      std::sort(ds.begin(), ds.end());
      visit.diseases = ds;
      visit.procedures =
          sample_distinct(rng, static_cast<int>(rng.below(4)), spec.n_procedures);

      std::set<int> rule_meds;
      for (int d : visit.diseases)
        rule_meds.insert(corpus.rules.disease_meds[static_cast<size_t>(d)].begin(),
                         corpus.rules.disease_meds[static_cast<size_t>(d)].end());
      for (int q : visit.procedures)
        rule_meds.insert(corpus.rules.procedure_meds[static_cast<size_t>(q)].begin(),
                         corpus.rules.procedure_meds[static_cast<size_t>(q)].end());
      IndexVec meds;
      for (int m : rule_meds)
        if (!rng.bernoulli(spec.rule_noise / 2.0)) meds.push_back(m);
      if (rng.bernoulli(spec.rule_noise / 2.0)) {
        int extra = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.n_medications)));
        if (std::find(meds.begin(), meds.end(), extra) == meds.end()) meds.push_back(extra);
      }
      std::sort(meds.begin(), meds.end());
      visit.meds = meds;

      prev_diseases = visit.diseases;
      hist.visits.push_back(std::move(visit));
    }
    corpus.patients.push_back(std::move(hist));
  }
  return corpus;
}

std::vector<char> oracle_predict(const Visit& v, const EhrRules& rules, int n_meds) {
  std::vector<char> out(static_cast<size_t>(n_meds), 0);
  auto mark = [&](const std::vector<IndexVec>& table, const IndexVec& keys, const char* what) {
    for (int k : keys) {
      if (k < 0 || k >= static_cast<int>(table.size()))
        throw IndexOutOfRange(std::string("oracle_predict: ") + what + " " + std::to_string(k));
      for (int m : table[static_cast<size_t>(k)]) {
        if (m < 0 || m >= n_meds)
          throw IndexOutOfRange("oracle_predict: medication " + std::to_string(m));
        out[static_cast<size_t>(m)] = 1;
      }
    }
  };
  mark(rules.disease_meds, v.diseases, "disease");
  mark(rules.procedure_meds, v.procedures, "procedure");
  return out;
}

}  // namespace mkmed
