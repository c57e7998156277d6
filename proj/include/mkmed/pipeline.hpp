#pragma once

// End-to-end drivers: the patient split, the frozen medication table, the
// recommendation model and its training loop against the combined
// objective, reference baselines, and the experiment loops (ablations,
// modality sweep, rotating-vs-intersection comparison, capacity sweep).

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mkmed/align.hpp"
#include "mkmed/clinical.hpp"
#include "mkmed/config.hpp"
#include "mkmed/dataset.hpp"
#include "mkmed/eval.hpp"
#include "mkmed/synthgen.hpp"

namespace mkmed {

struct SplitIndices {
  std::vector<int> train, valid, test;
};

// Seeded 2/3 - 1/6 - 1/6 split by patient; every index lands in exactly
// one bucket.
SplitIndices split_patients(int n_patients, std::uint64_t seed);

// Encoder bundle sized for a corpus (text vocabulary, kg tables, config
// dims), seeded from cfg.seed.
EncoderSet make_encoders(const ModalityCorpus& corpus, const RunConfig& cfg);

// Frozen medication table: the cross-modal embedding of the first n_meds
// corpus molecules, row i = medication i. Throws ConfigError when the
// corpus is smaller than the medication vocabulary.
Mat build_med_table(const std::vector<MultimodalRecord>& records, int n_meds,
                    EncoderSet& enc);

// The downstream model: patient encoder plus the medication table. The
// table is a trainable parameter only for the molecule-free ablation.
struct MedModel {
  PatientEncoderParams penc;
  Param med_table;
  bool learnable = false;
  double delta = 0.5;
  std::vector<Param*> params();
};

MedModel init_model(const RunConfig& cfg, int n_diseases, int n_procedures,
                    const Mat& med_table, bool learnable);

struct TrainLog {
  std::vector<double> train_loss;  // one entry per epoch
  std::vector<double> valid_jaccard;
  std::vector<double> valid_ddi;
  int best_epoch = -1;  // epoch whose weights the model keeps
};

// AdamW over per-patient tapes; visit losses averaged within a patient.
// Keeps the best-validation-jaccard weights (final weights when the
// validation set is empty). Throws NonFiniteLoss with diagnostics.
void train_model(MedModel& m, const std::vector<PatientHistory>& train,
                 const std::vector<PatientHistory>& valid, const DDIMatrix& ddi,
                 const RunConfig& cfg, TrainLog* log = nullptr);

// Model outputs for every visit of every patient, thresholded at m.delta.
std::vector<PatientEval> evaluate_model(MedModel& m,
                                        const std::vector<PatientHistory>& patients);

// Per-disease prescription frequency fitted on the train split; a visit's
// score for med m is the max conditional frequency over its diseases.
std::vector<PatientEval> frequency_baseline(const std::vector<PatientHistory>& train,
                                            const std::vector<PatientHistory>& test,
                                            int n_diseases, int n_meds, double delta);

// Noise-free rule unions as predictions; the synthetic ceiling.
std::vector<PatientEval> oracle_eval(const std::vector<PatientHistory>& patients,
                                     const EhrRules& rules, int n_meds);

// Modality accumulation order for sweeps; structure first, then the
// rotation order of the rest.
extern const std::vector<std::string> kSweepOrder;  // structure text image props kg

struct RunOutcome {
  MetricsReport report;
  TrainLog log;
  double table_dispersion = 0.0;  // over medication table rows
};

// One ablation arm end to end: pretrain per variant (full: all modalities,
// pm: structure only, pt: none, mol: none + learnable table), freeze the
// table, train, report on the test split. seed overrides cfg.seed.
RunOutcome run_variant(const std::string& variant, CorpusBundle& data,
                       const RunConfig& cfg, std::uint64_t seed);

struct SweepPoint {
  int k = 0;  // number of aligned modalities, prefix of kSweepOrder
  double table_dispersion = 0.0;
  MetricsReport report;
};

std::vector<SweepPoint> run_modality_sweep(CorpusBundle& data, const RunConfig& cfg,
                                           std::uint64_t seed);

struct AlignPoint {
  int k = 0;
  int rotating_pool = 0;      // records with at least one of the k modalities
  int intersection_pool = 0;  // records with all k
  double rotating_jaccard = 0.0;
  std::optional<double> intersection_jaccard;  // empty when the pool dies
};

std::vector<AlignPoint> run_alignment_comparison(CorpusBundle& data, const RunConfig& cfg,
                                                 std::uint64_t seed);

struct ParamPoint {
  int dim = 0;
  int gin_layers = 0;
  double jaccard = 0.0;
};

// Full-variant capacity grid: dim in {32, 64, 128, 256} x layers in
// {2, 3, 4, 5}.
std::vector<ParamPoint> run_param_sweep(CorpusBundle& data, const RunConfig& cfg,
                                        std::uint64_t seed);

}  // namespace mkmed
