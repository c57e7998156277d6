#pragma once

// Disk formats for the synthetic corpus: JSON-lines tables for molecules,
// modality payloads, and patient histories, plus single-document JSON for
// the interaction matrix, the generator's prescription rules, and the
// knowledge graph. Binary payloads (image pixels, conformer coordinates)
// are base64 float32 with a declared shape, so the files stay greppable
// while bulky arrays stay compact. Readers validate shape declarations and
// throw ConfigError on malformed input.

#include <string>
#include <utility>
#include <vector>

#include "mkmed/align.hpp"
#include "mkmed/clinical.hpp"
#include "mkmed/molkit.hpp"
#include "mkmed/synthgen.hpp"

namespace mkmed {

using MoleculeTable = std::vector<std::pair<std::string, std::string>>;  // (id, smiles)

void write_molecules(const std::string& path, const MoleculeTable& mols);
MoleculeTable read_molecules(const std::string& path);

// One line per molecule, same order as the molecule table; absent
// modalities are absent keys, never null.
void write_modalities(const std::string& path, const std::vector<MultimodalRecord>& records);

// Rebuilds graphs and prepared features from the molecule table, then
// attaches the stored payloads.
std::vector<MultimodalRecord> read_modalities(const std::string& path,
                                              const MoleculeTable& mols);

void write_kg(const std::string& path, const KGData& kg);
KGData read_kg(const std::string& path);

void write_ddi(const std::string& path, const DDIMatrix& ddi);
DDIMatrix read_ddi(const std::string& path);

void write_ehr(const std::string& path, const std::vector<PatientHistory>& patients);
std::vector<PatientHistory> read_ehr(const std::string& path);

void write_rules(const std::string& path, const EhrRules& rules);
EhrRules read_rules(const std::string& path);

// Whole-bundle helpers over a directory (molecules.jsonl, modalities.jsonl,
// kg.json, ddi.json, ehr.jsonl, rules.json).
struct CorpusBundle {
  MoleculeTable molecules;
  ModalityCorpus corpus;
  DDIMatrix ddi;
  EhrCorpus ehr;
};

void write_bundle(const std::string& dir, const CorpusBundle& bundle);
CorpusBundle read_bundle(const std::string& dir);

// Base64 float32 blob helpers (row-major), exposed for tests.
std::string encode_f32(const std::vector<double>& values);
std::vector<double> decode_f32(const std::string& b64);

}  // namespace mkmed
