#pragma once

// Rotating pairwise contrastive pre-training. Each step pairs the
// cross-modal encoder with ONE modality encoder on a batch drawn only from
// records that possess that modality, so partially-covered corpora still
// contribute every (record, modality) pair they have. Intersection mode is
// the baseline that trains only on records possessing every modality.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mkmed/encoders.hpp"

namespace mkmed {

struct MultimodalRecord {
  std::string mol_id;
  MoleculeGraph graph;
  PreparedGraph prepared;  // fill with prepare(graph) after construction
  std::optional<MoleculeImage> image;
  std::optional<TextDescription> text;
  std::optional<Conformer> conformer;
  std::optional<PropertyVector> props;
  std::optional<int> kg_id;
};

// Fixed rotation order; config subsets preserve this order.
extern const std::vector<std::string> kModalityOrder;  // image text structure props kg

bool has_modality(const MultimodalRecord& r, const std::string& modality);

struct CoverageProfile {
  double image = 1.0, text = 1.0, structure = 1.0, props = 1.0, kg = 1.0;
  std::uint64_t seed = 0;
  double get(const std::string& modality) const;
};

struct PretrainConfig {
  int epochs = 20;
  double lr = 1e-6;  // paper rate; desk-scale runs override to 1e-4
  int batch = 32;
  std::vector<std::string> modalities = kModalityOrder;
  std::string mode = "rotating";  // or "intersection" (cli dispatch only)
  std::uint64_t seed = 0;
  bool joint = false;  // also update inactive modality encoders each step
};

// logtemp is log(tau); effective temperature clamped to <= 100.
Param make_temperature();

// Both batches are N x dim with rows paired by index. Symmetric InfoNCE over
// cosine similarities scaled by tau.
Val contrastive_loss(Tape& t, Val e_c, Val e_o, Val logtemp);

// Differentiable row normalization (throws ZeroNormRow below 1e-12).
Val normalize_rows(Tape& t, Val x);

struct ScheduledBatch {
  std::string modality;
  IndexVec records;  // indices into the record list
};

// One epoch pass: per-modality seeded shuffles split into batches of
// min(batch, pool) and interleaved in rotation order. Partial final batches
// survive if they still hold >= 2 rows.
std::vector<ScheduledBatch> rotating_schedule(const std::vector<MultimodalRecord>& records,
                                              const PretrainConfig& cfg, int epoch = 0);

struct PretrainResult {
  std::vector<double> epoch_loss;  // mean contrastive loss per epoch
  Param logtemp;
};

// Rotating-mode training; mutates encoders in place.
PretrainResult pretrain(std::vector<MultimodalRecord>& records, EncoderSet& enc,
                        const PretrainConfig& cfg);

// Same loop restricted to records possessing every configured modality.
PretrainResult intersection_pretrain(std::vector<MultimodalRecord>& records,
                                     EncoderSet& enc, const PretrainConfig& cfg);

// Modality embedding of one record on a tape (kg reads the entity table).
Val modality_encode(Tape& t, const MultimodalRecord& r, const std::string& modality,
                    EncoderSet& enc);

struct CoverageReport {
  int total = 0;
  std::vector<std::string> modalities;
  std::vector<int> counts;                  // per modality, same order
  std::vector<std::vector<int>> pairwise;   // pairwise[i][j], i < j upper triangle
  int full_intersection = 0;
  double ratio = 0.0;  // full_intersection / total
};

CoverageReport coverage_stats(const std::vector<MultimodalRecord>& records,
                              const std::vector<std::string>& modalities);

// Mean pairwise cosine distance over unordered row pairs.
double dispersion(const Mat& embeddings);

// Ranking core: query row i's true mate is key row i; accuracy = fraction of
// queries whose mate lands in the cosine top-k (ties toward lower index).
double retrieval_accuracy(const Mat& queries, const Mat& keys, int k);

// Fraction of modality-bearing records whose own cross-modal embedding ranks
// in the top k of the modality pool by cosine similarity.
double retrieval_eval(std::vector<MultimodalRecord>& records, EncoderSet& enc,
                      const std::string& modality, int k);

}  // namespace mkmed
