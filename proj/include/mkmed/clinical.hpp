#pragma once

// EHR data model and the longitudinal patient encoder: per-visit embeddings
// for the disease/procedure/medication streams, three gated recurrent units
// over visit history (the medication stream is shifted one visit right so
// the target set never feeds its own prediction), and the prediction head.

#include <cstdint>
#include <string>
#include <vector>

#include "mkmed/ad.hpp"
#include "mkmed/rng.hpp"

namespace mkmed {

using ad::Param;
using ad::Tape;
using ad::Val;

struct Visit {
  IndexVec diseases;    // indices into the disease vocabulary
  IndexVec procedures;  // indices into the procedure vocabulary
  IndexVec meds;        // indices into the medication vocabulary
};

struct PatientHistory {
  std::string id;
  std::vector<Visit> visits;
};

struct DDIMatrix {
  Mat m;  // |M| x |M|, binary, symmetric, zero diagonal
  int size() const { return static_cast<int>(m.rows()); }
};

// Builds the symmetric matrix from an undirected pair list; rejects
// out-of-range indices and self-pairs.
DDIMatrix make_ddi(int n_meds, const std::vector<std::pair<int, int>>& pairs);

// Hard validation of the matrix invariants (square, binary, symmetric,
// zero diagonal); throws ShapeMismatch.
void validate_ddi(const Mat& m);

struct GRUParams {
  Param w_ir, w_iz, w_in;  // input weights
  Param w_hr, w_hz, w_hn;  // hidden weights
  Param b_ir, b_iz, b_in;
  Param b_hr, b_hz, b_hn;
  void init(std::uint64_t seed, const std::string& prefix, int dim);
  void collect(std::vector<Param*>& out);
};

Val gru_step(Tape& t, GRUParams& g, Val x, Val h);

struct PatientEncoderParams {
  int dim = 64;
  int n_diseases = 0, n_procedures = 0, n_meds = 0;
  Param e_d, e_p;  // embedding tables
  GRUParams gru_d, gru_p, gru_m;
  Param mlp_w1, mlp_b1;  // 3*dim -> 128
  Param mlp_w2, mlp_b2;  // 128 -> |M|
  void init(std::uint64_t seed, int n_diseases, int n_procedures, int n_meds, int dim);
  std::vector<Param*> params();
};

struct VisitEmbedding {
  Val e_d, e_p, e_m;  // each 1 x dim
};

// med_table: n_meds x dim rows on the tape (a frozen constant of precomputed
// cross-modal embeddings, or a leased learnable table for the ablation).
VisitEmbedding embed_visit(Tape& t, const Visit& v, PatientEncoderParams& p,
                           Val med_table);

// e_i for predicting visit t_visit (1-based): disease and procedure streams
// see visits 1..t, the medication stream sees a zero vector then visits
// 1..t-1. Returns 1 x 3*dim.
Val encode_history(Tape& t, const PatientHistory& h, int t_visit,
                   PatientEncoderParams& p, Val med_table);

Val predict_scores(Tape& t, Val e_i, PatientEncoderParams& p);

// m_hat[i] = 1 iff scores(0,i) >= threshold.
std::vector<char> threshold_select(const Mat& scores, double threshold = 0.5);

}  // namespace mkmed
