#pragma once

// SMILES-subset parsing and every modality's raw observation derived from the
// parsed graph: substructures, node/edge features, conformers, images,
// descriptors, text, and synthetic knowledge-graph triples.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mkmed/errors.hpp"
#include "mkmed/types.hpp"

namespace mkmed {

enum class BondOrder { Single, Double, Triple, Aromatic };
enum class Stereo { None, Cis, Trans };

struct AtomRecord {
  std::string element;
  int charge = 0;
  bool aromatic = false;
  int implicit_h = 0;
  bool in_ring = false;
};

struct BondRecord {
  int a = 0;
  int b = 0;
  BondOrder order = BondOrder::Single;
  bool conjugated = false;
  Stereo stereo = Stereo::None;
};

struct MoleculeGraph {
  std::vector<AtomRecord> atoms;
  std::vector<BondRecord> bonds;
  std::string canonical_id;

  int n_atoms() const { return static_cast<int>(atoms.size()); }
  int n_bonds() const { return static_cast<int>(bonds.size()); }
};

struct Substructure {
  IndexVec atom_indices;  // into the parent graph, ascending
  MoleculeGraph graph;    // induced on those atoms
};

struct Conformer {
  std::vector<Vec3> coords;
  std::uint64_t seed = 0;
};

struct MoleculeImage {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<double> pixels;  // (y * width + x) * channels + c, in [0,1]
  std::uint64_t seed = 0;

  double at(int y, int x, int c) const {
    return pixels[static_cast<size_t>((y * width + x) * channels + c)];
  }
  double& at(int y, int x, int c) {
    return pixels[static_cast<size_t>((y * width + x) * channels + c)];
  }
};

struct PropertyVector {
  double mw = 0.0;
  double hba = 0.0;
  double hbd = 0.0;
  double psa = 0.0;
  double aromatic_rings = 0.0;

  Vec to_vec() const;  // [mw, hba, hbd, psa, aromatic_rings]
};

struct TextDescription {
  std::vector<int> tokens;
  std::vector<std::pair<int, int>> segments;  // [begin, end) token ranges
};

struct KGTriple {
  int head = 0;
  int relation = 0;
  int tail = 0;
};

// Triples plus the vocabularies they index. Molecules occupy entity ids
// [0, n_molecules); synthetic class/target entities follow.
struct KGData {
  std::vector<KGTriple> triples;
  int n_entities = 0;
  int n_relations = 0;
  std::unordered_map<std::string, int> entity_of_mol;
};

MoleculeGraph parse_smiles(const std::string& s);
std::string unparse(const MoleculeGraph& g);

// Stable structural fingerprint (iterated neighborhood refinement); equal for
// isomorphic graphs, used as canonical-id and for corpus dedup.
std::string wl_id(const MoleculeGraph& g);

// n x 9, channels: element-class, degree, charge, chirality (reserved 0),
// implicit-H, hybridization class, aromatic, in-ring, mass/100.
Mat node_features(const MoleculeGraph& g);

// bonds x 8: one-hot order (single,double,triple,aromatic) ++ one-hot stereo
// (none,cis,trans) ++ conjugated.
Mat edge_features(const MoleculeGraph& g);

std::vector<Substructure> decompose(const MoleculeGraph& g);

Conformer generate_conformer(const MoleculeGraph& g, std::uint64_t seed);
MoleculeImage rasterize(const MoleculeGraph& g, int size, std::uint64_t seed);
PropertyVector descriptors(const MoleculeGraph& g);
TextDescription describe(const MoleculeGraph& g, std::uint64_t seed);

const std::vector<std::string>& text_vocab();
int text_vocab_size();
// Whitespace tokenizer over the fixed vocabulary; unknown words throw
// TokenOutOfVocab.
std::vector<int> tokenize(const std::string& text);
std::string detokenize(const std::vector<int>& tokens);

KGData synth_kg(const std::vector<std::pair<std::string, MoleculeGraph>>& molecules,
                std::uint64_t seed);

// Features and decomposition cached once per molecule; reused every epoch.
struct PreparedGraph {
  MoleculeGraph graph;
  Mat node_f;
  Mat edge_f;
  std::vector<Substructure> subs;
  std::vector<Mat> sub_node_f;
  std::vector<Mat> sub_edge_f;
};
PreparedGraph prepare(const MoleculeGraph& g);

}  // namespace mkmed
