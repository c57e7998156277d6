#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mkmed/align.hpp"
#include "mkmed/clinical.hpp"
#include "mkmed/molkit.hpp"

namespace mkmed {

// Knobs for the whole synthetic benchmark. Medications are the first
// n_medications molecules of the generated corpus, so n_medications must
// not exceed n_molecules.
struct SynthSpec {
  int n_molecules = 131;
  int n_diseases = 40;
  int n_procedures = 25;
  int n_medications = 131;
  CoverageProfile coverage;
  int n_patients = 200;
  double visits_mean = 2.4;   // visits per patient = 1 + poisson(mean - 1)
  double rule_noise = 0.05;
  double ddi_density = 0.08;
  std::uint64_t seed = 0;
};

// Throws ConfigError on nonsensical values (counts < 1, probabilities
// outside [0,1], visits_mean < 1, n_medications > n_molecules).
void validate_spec(const SynthSpec& spec);

// Random SMILES corpus: chains of 1-8 heavy atoms, optionally one ring,
// heteroatoms and unsaturation. Every string parses; entries are
// de-duplicated by canonical id. Throws ExhaustedAttempts when the
// grammar cannot yield enough distinct molecules.
std::vector<std::pair<std::string, std::string>> gen_molecules(const SynthSpec& spec);

struct ModalityCorpus {
  std::vector<MultimodalRecord> records;
  KGData kg;  // triples over the kg-covered subset; empty when none
};

// Attaches modality payloads to each molecule. Presence of each modality
// is an independent Bernoulli draw from the coverage profile; payloads
// come from the molkit generators. kg_id indexes into corpus.kg.
ModalityCorpus gen_modalities(
    const std::vector<std::pair<std::string, std::string>>& molecules,
    const CoverageProfile& coverage, std::uint64_t seed);

// Symmetric binary interaction matrix over the medication vocabulary:
// Bernoulli(ddi_density) above the diagonal, mirrored, zero diagonal.
DDIMatrix gen_ddi(const SynthSpec& spec);

// Hidden prescription rules: each disease maps to 1-3 medications, each
// procedure to 0-2. Emitted with the corpus so evaluation can recover the
// noise-free target.
struct EhrRules {
  std::vector<IndexVec> disease_meds;
  std::vector<IndexVec> procedure_meds;
};

struct EhrCorpus {
  std::vector<PatientHistory> patients;
  EhrRules rules;
};

// Longitudinal records: visits sample 1-5 diseases (successive visits keep
// each previous disease with probability 0.5) and 0-3 procedures;
// medications are the union of rule outputs, each dropped with probability
// rule_noise/2, plus one spurious medication with probability rule_noise/2.
EhrCorpus gen_ehr(const SynthSpec& spec);

// Noise-free rule union for one visit as a multi-hot row; the ceiling any
// learned predictor is measured against.
std::vector<char> oracle_predict(const Visit& v, const EhrRules& rules, int n_meds);

}  // namespace mkmed
