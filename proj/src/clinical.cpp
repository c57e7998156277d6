#include "mkmed/clinical.hpp"

#include "mkmed/encoders.hpp"  // xavier_init / table_init

namespace mkmed {

using namespace ad;

DDIMatrix make_ddi(int n_meds, const std::vector<std::pair<int, int>>& pairs) {
  Mat m = Mat::Zero(n_meds, n_meds);
  for (auto [a, b] : pairs) {
    if (a < 0 || b < 0 || a >= n_meds || b >= n_meds)
      throw IndexOutOfRange("make_ddi: pair index out of range");
    if (a == b) throw ShapeMismatch("make_ddi: self-interaction pair");
    m(a, b) = 1.0;
    m(b, a) = 1.0;
  }
  return DDIMatrix{std::move(m)};
}

void validate_ddi(const Mat& m) {
  if (m.rows() != m.cols()) throw ShapeMismatch("ddi matrix: not square");
  for (int i = 0; i < m.rows(); ++i) {
    if (m(i, i) != 0.0) throw ShapeMismatch("ddi matrix: nonzero diagonal");
    for (int j = 0; j < m.cols(); ++j) {
      if (m(i, j) != 0.0 && m(i, j) != 1.0)
        throw ShapeMismatch("ddi matrix: entries must be 0 or 1");
      if (m(i, j) != m(j, i)) throw ShapeMismatch("ddi matrix: asymmetric");
    }
  }
}

namespace {

Param make_xavier(std::uint64_t seed, const std::string& name, int rows, int cols) {
  Rng rng(derive_seed(seed, name));
  return Param(name, xavier_init(rows, cols, rng));
}

Param make_table(std::uint64_t seed, const std::string& name, int rows, int cols) {
  Rng rng(derive_seed(seed, name));
  return Param(name, table_init(rows, cols, rng));
}

Param make_zero(const std::string& name, int rows, int cols) {
  return Param(name, Mat::Zero(rows, cols));
}

Val linear(Tape& t, Val x, Param& w, Param& b) {
  return add_rowvec(matmul(x, t.leaf(w)), t.leaf(b));
}

}  // namespace

void GRUParams::init(std::uint64_t seed, const std::string& prefix, int dim) {
  auto weight = [&](const char* n) { return make_xavier(seed, prefix + "." + n, dim, dim); };
  auto bias = [&](const char* n) { return make_zero(prefix + "." + n, 1, dim); };
  w_ir = weight("w_ir");
  w_iz = weight("w_iz");
  w_in = weight("w_in");
  w_hr = weight("w_hr");
  w_hz = weight("w_hz");
  w_hn = weight("w_hn");
  b_ir = bias("b_ir");
  b_iz = bias("b_iz");
  b_in = bias("b_in");
  b_hr = bias("b_hr");
  b_hz = bias("b_hz");
  b_hn = bias("b_hn");
}

void GRUParams::collect(std::vector<Param*>& out) {
  for (Param* p : {&w_ir, &w_iz, &w_in, &w_hr, &w_hz, &w_hn, &b_ir, &b_iz, &b_in, &b_hr,
                   &b_hz, &b_hn})
    out.push_back(p);
}

Val gru_step(Tape& t, GRUParams& g, Val x, Val h) {
  Val r = sigmoid(add(linear(t, x, g.w_ir, g.b_ir), linear(t, h, g.w_hr, g.b_hr)));
  Val z = sigmoid(add(linear(t, x, g.w_iz, g.b_iz), linear(t, h, g.w_hz, g.b_hz)));
  Val n = tanh_v(add(linear(t, x, g.w_in, g.b_in), mul(r, linear(t, h, g.w_hn, g.b_hn))));
  // h' = (1-z)*n + z*h
  return add(sub(n, mul(z, n)), mul(z, h));
}

void PatientEncoderParams::init(std::uint64_t seed, int nd, int np, int nm, int d) {
  dim = d;
  n_diseases = nd;
  n_procedures = np;
  n_meds = nm;
  e_d = make_table(seed, "patient.e_d", nd, d);
  e_p = make_table(seed, "patient.e_p", np, d);
  gru_d.init(seed, "patient.gru_d", d);
  gru_p.init(seed, "patient.gru_p", d);
  gru_m.init(seed, "patient.gru_m", d);
  mlp_w1 = make_xavier(seed, "patient.mlp_w1", 3 * d, 128);
  mlp_b1 = make_zero("patient.mlp_b1", 1, 128);
  mlp_w2 = make_xavier(seed, "patient.mlp_w2", 128, nm);
  mlp_b2 = make_zero("patient.mlp_b2", 1, nm);
}

std::vector<Param*> PatientEncoderParams::params() {
  std::vector<Param*> out{&e_d, &e_p, &mlp_w1, &mlp_b1, &mlp_w2, &mlp_b2};
  gru_d.collect(out);
  gru_p.collect(out);
  gru_m.collect(out);
  return out;
}

namespace {

Val sum_table_rows(Tape& t, Param& table, const IndexVec& idx, int dim, int vocab,
                   const char* who) {
  for (int i : idx)
    if (i < 0 || i >= vocab) throw VocabMismatch(std::string(who) + ": index out of vocabulary");
  if (idx.empty()) return t.constant(Mat::Zero(1, dim));
  return sum_rows_sorted(gather_rows(t.leaf(table), idx));
}

}  // namespace

VisitEmbedding embed_visit(Tape& t, const Visit& v, PatientEncoderParams& p,
                           Val med_table) {
  const Mat& meds = t.value(med_table);
  if (meds.rows() != p.n_meds || meds.cols() != p.dim)
    throw VocabMismatch("embed_visit: medication table shape");

  VisitEmbedding out;
  out.e_d = sum_table_rows(t, p.e_d, v.diseases, p.dim, p.n_diseases, "embed_visit d");
  out.e_p = sum_table_rows(t, p.e_p, v.procedures, p.dim, p.n_procedures, "embed_visit p");
  for (int i : v.meds)
    if (i < 0 || i >= p.n_meds) throw VocabMismatch("embed_visit m: index out of vocabulary");
  if (v.meds.empty()) {
    out.e_m = t.constant(Mat::Zero(1, p.dim));
  } else {
    out.e_m = cmul(sum_rows_sorted(gather_rows(med_table, v.meds)),
                   1.0 / static_cast<double>(v.meds.size()));
  }
  return out;
}

Val encode_history(Tape& t, const PatientHistory& h, int t_visit,
                   PatientEncoderParams& p, Val med_table) {
  int n = static_cast<int>(h.visits.size());
  if (t_visit < 1 || t_visit > n)
    throw IndexOutOfRange("encode_history: visit index " + std::to_string(t_visit));

  Val zero = t.constant(Mat::Zero(1, p.dim));
  Val hd = zero, hp = zero, hm = zero;
  for (int k = 1; k <= t_visit; ++k) {
    VisitEmbedding cur = embed_visit(t, h.visits[static_cast<size_t>(k - 1)], p, med_table);
    hd = gru_step(t, p.gru_d, cur.e_d, hd);
    hp = gru_step(t, p.gru_p, cur.e_p, hp);
    // the medication stream lags one visit: M_t never feeds its own prediction
    Val med_in = zero;
    if (k > 1)
      med_in = embed_visit(t, h.visits[static_cast<size_t>(k - 2)], p, med_table).e_m;
    hm = gru_step(t, p.gru_m, med_in, hm);
  }
  return concat_cols({hd, hp, hm});
}

Val predict_scores(Tape& t, Val e_i, PatientEncoderParams& p) {
  Val hidden = relu(linear(t, e_i, p.mlp_w1, p.mlp_b1));
  return sigmoid(linear(t, hidden, p.mlp_w2, p.mlp_b2));
}

std::vector<char> threshold_select(const Mat& scores, double threshold) {
  std::vector<char> out(static_cast<size_t>(scores.cols()), 0);
  for (int i = 0; i < scores.cols(); ++i)
    if (scores(0, i) >= threshold) out[static_cast<size_t>(i)] = 1;
  return out;
}

}  // namespace mkmed
