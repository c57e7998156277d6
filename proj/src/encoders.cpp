#include "mkmed/encoders.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_map>

namespace mkmed {

using namespace ad;

Mat xavier_init(int rows, int cols, Rng& rng) {
  double limit = std::sqrt(6.0 / (rows + cols));
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-limit, limit);
  return m;
}

Mat table_init(int rows, int cols, Rng& rng) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-0.1, 0.1);
  return m;
}

namespace {

enum class Init { Xavier, Table, Zero, One };

Param make_param(std::uint64_t seed, const std::string& name, int rows, int cols,
                 Init kind) {
  Rng rng(derive_seed(seed, name));
  Mat m;
  switch (kind) {
    case Init::Xavier: m = xavier_init(rows, cols, rng); break;
    case Init::Table: m = table_init(rows, cols, rng); break;
    case Init::Zero: m = Mat::Zero(rows, cols); break;
    case Init::One: m = Mat::Ones(rows, cols); break;
  }
  return Param(name, std::move(m));
}

Val linear(Tape& t, Val x, Param& w, Param& b) {
  return add_rowvec(matmul(x, t.leaf(w)), t.leaf(b));
}

void directed_edges(const MoleculeGraph& g, IndexVec& src, IndexVec& dst, IndexVec& eid) {
  for (int i = 0; i < g.n_bonds(); ++i) {
    const BondRecord& bd = g.bonds[static_cast<size_t>(i)];
    src.push_back(bd.a);
    dst.push_back(bd.b);
    eid.push_back(i);
    src.push_back(bd.b);
    dst.push_back(bd.a);
    eid.push_back(i);
  }
}

}  // namespace

// ---- GIN ----

void GINTower::init(std::uint64_t seed, const std::string& prefix, int d, int n_layers) {
  dim = d;
  node_w = make_param(seed, prefix + ".node_w", 9, d, Init::Xavier);
  node_b = make_param(seed, prefix + ".node_b", 1, d, Init::Zero);
  edge_w = make_param(seed, prefix + ".edge_w", 8, d, Init::Xavier);
  edge_b = make_param(seed, prefix + ".edge_b", 1, d, Init::Zero);
  out_w = make_param(seed, prefix + ".out_w", d, d, Init::Xavier);
  out_b = make_param(seed, prefix + ".out_b", 1, d, Init::Zero);
  layers.clear();
  for (int l = 0; l < n_layers; ++l) {
    std::string lp = prefix + ".layer" + std::to_string(l);
    GINLayerParams lay;
    lay.msg_w1 = make_param(seed, lp + ".msg_w1", 2 * d, d, Init::Xavier);
    lay.msg_b1 = make_param(seed, lp + ".msg_b1", 1, d, Init::Zero);
    lay.msg_w2 = make_param(seed, lp + ".msg_w2", d, d, Init::Xavier);
    lay.msg_b2 = make_param(seed, lp + ".msg_b2", 1, d, Init::Zero);
    lay.comb_w1 = make_param(seed, lp + ".comb_w1", d, d, Init::Xavier);
    lay.comb_b1 = make_param(seed, lp + ".comb_b1", 1, d, Init::Zero);
    lay.comb_w2 = make_param(seed, lp + ".comb_w2", d, d, Init::Xavier);
    lay.comb_b2 = make_param(seed, lp + ".comb_b2", 1, d, Init::Zero);
    lay.eps = make_param(seed, lp + ".eps", 1, 1, Init::Zero);
    layers.push_back(std::move(lay));
  }
}

void GINTower::collect(std::vector<Param*>& out) {
  out.push_back(&node_w);
  out.push_back(&node_b);
  out.push_back(&edge_w);
  out.push_back(&edge_b);
  out.push_back(&out_w);
  out.push_back(&out_b);
  for (GINLayerParams& l : layers) {
    out.push_back(&l.msg_w1);
    out.push_back(&l.msg_b1);
    out.push_back(&l.msg_w2);
    out.push_back(&l.msg_b2);
    out.push_back(&l.comb_w1);
    out.push_back(&l.comb_b1);
    out.push_back(&l.comb_w2);
    out.push_back(&l.comb_b2);
    out.push_back(&l.eps);
  }
}

void GINParams::init(std::uint64_t seed, int dim, int n_layers) {
  mol.init(seed, "gin.mol", dim, n_layers);
  sub.init(seed, "gin.sub", dim, n_layers);
}

void GINParams::collect(std::vector<Param*>& out) {
  mol.collect(out);
  sub.collect(out);
}

Val gin_encode(Tape& t, const MoleculeGraph& g, const Mat& node_f, const Mat& edge_f,
               GINTower& p) {
  int n = g.n_atoms();
  if (node_f.rows() != n || node_f.cols() != p.node_w.value.rows())
    throw DimensionMismatch("gin_encode: node feature shape");
  if (g.n_bonds() > 0 &&
      (edge_f.rows() != g.n_bonds() || edge_f.cols() != p.edge_w.value.rows()))
    throw DimensionMismatch("gin_encode: edge feature shape");

  Val h = linear(t, t.constant(node_f), p.node_w, p.node_b);
  IndexVec src, dst, eid;
  directed_edges(g, src, dst, eid);
  Val eproj;
  if (!src.empty()) eproj = linear(t, t.constant(edge_f), p.edge_w, p.edge_b);

  for (GINLayerParams& lay : p.layers) {
    Val agg;
    if (!src.empty()) {
      Val msg = concat_cols({gather_rows(h, src), gather_rows(eproj, eid)});
      msg = relu(linear(t, msg, lay.msg_w1, lay.msg_b1));
      msg = linear(t, msg, lay.msg_w2, lay.msg_b2);
      agg = segment_sum(msg, dst, n, true);
    } else {
      agg = t.constant(Mat::Zero(n, p.dim));
    }
    Val z = add(add(h, scale_by(h, t.leaf(lay.eps))), agg);
    z = relu(linear(t, z, lay.comb_w1, lay.comb_b1));
    h = linear(t, z, lay.comb_w2, lay.comb_b2);
  }
  return linear(t, sum_rows_sorted(h), p.out_w, p.out_b);
}

Val gin_encode(Tape& t, const MoleculeGraph& g, GINTower& p) {
  return gin_encode(t, g, node_features(g), edge_features(g), p);
}

// ---- substructure attention fusion ----

void AttentionFuseParams::init(std::uint64_t seed, int d) {
  dim = d;
  q_w = make_param(seed, "fuse.q_w", d, d, Init::Xavier);
  k_w = make_param(seed, "fuse.k_w", d, d, Init::Xavier);
  v_w = make_param(seed, "fuse.v_w", d, d, Init::Xavier);
  ln_gain = make_param(seed, "fuse.ln_gain", 1, d, Init::One);
  ln_bias = make_param(seed, "fuse.ln_bias", 1, d, Init::Zero);
}

void AttentionFuseParams::collect(std::vector<Param*>& out) {
  out.push_back(&q_w);
  out.push_back(&k_w);
  out.push_back(&v_w);
  out.push_back(&ln_gain);
  out.push_back(&ln_bias);
}

Val substructure_fuse(Tape& t, Val mol_emb, Val sub_embs, const std::vector<char>& padded,
                      AttentionFuseParams& p) {
  int k = static_cast<int>(t.value(sub_embs).rows());
  if (k < 1) throw DimensionMismatch("substructure_fuse: no substructure rows");
  bool any_mask = false;
  if (!padded.empty()) {
    if (static_cast<int>(padded.size()) != k)
      throw DimensionMismatch("substructure_fuse: mask length");
    bool all = true;
    for (char c : padded) {
      any_mask = any_mask || c;
      all = all && c;
    }
    if (all) throw AllMasked("substructure_fuse: every row is padding");
  }

  Val q = matmul(mol_emb, t.leaf(p.q_w));
  Val kk = matmul(sub_embs, t.leaf(p.k_w));
  Val logits = cmul(matmul(q, transpose(kk)), 1.0 / std::sqrt(static_cast<double>(p.dim)));
  if (any_mask) {
    Mat m = Mat::Zero(1, k);
    for (int i = 0; i < k; ++i)
      if (padded[static_cast<size_t>(i)]) m(0, i) = -1e9;
    logits = add(logits, t.constant(m));
  }
  Val attn = softmax_rows(logits);
  Val fused = weighted_sum_sorted(attn, matmul(sub_embs, t.leaf(p.v_w)));
  return layernorm_rows(add(fused, mol_emb), t.leaf(p.ln_gain), t.leaf(p.ln_bias));
}

void CrossModalParams::init(std::uint64_t seed, int dim, int gin_layers) {
  gin.init(seed, dim, gin_layers);
  fuse.init(seed, dim);
}

std::vector<Param*> CrossModalParams::params() {
  std::vector<Param*> out;
  gin.collect(out);
  fuse.collect(out);
  return out;
}

Val cross_modal_encode(Tape& t, const PreparedGraph& g, CrossModalParams& p) {
  Val mol = gin_encode(t, g.graph, g.node_f, g.edge_f, p.gin.mol);
  std::vector<Val> rows;
  rows.reserve(g.subs.size());
  for (size_t i = 0; i < g.subs.size(); ++i)
    rows.push_back(
        gin_encode(t, g.subs[i].graph, g.sub_node_f[i], g.sub_edge_f[i], p.gin.sub));
  return substructure_fuse(t, mol, concat_rows(rows), {}, p.fuse);
}

// ---- transformer block ----

void TransformerLayerParams::init(std::uint64_t seed, const std::string& prefix, int d) {
  ln1_g = make_param(seed, prefix + ".ln1_g", 1, d, Init::One);
  ln1_b = make_param(seed, prefix + ".ln1_b", 1, d, Init::Zero);
  ln2_g = make_param(seed, prefix + ".ln2_g", 1, d, Init::One);
  ln2_b = make_param(seed, prefix + ".ln2_b", 1, d, Init::Zero);
  wq = make_param(seed, prefix + ".wq", d, d, Init::Xavier);
  bq = make_param(seed, prefix + ".bq", 1, d, Init::Zero);
  wk = make_param(seed, prefix + ".wk", d, d, Init::Xavier);
  bk = make_param(seed, prefix + ".bk", 1, d, Init::Zero);
  wv = make_param(seed, prefix + ".wv", d, d, Init::Xavier);
  bv = make_param(seed, prefix + ".bv", 1, d, Init::Zero);
  wo = make_param(seed, prefix + ".wo", d, d, Init::Xavier);
  bo = make_param(seed, prefix + ".bo", 1, d, Init::Zero);
  ff_w1 = make_param(seed, prefix + ".ff_w1", d, 2 * d, Init::Xavier);
  ff_b1 = make_param(seed, prefix + ".ff_b1", 1, 2 * d, Init::Zero);
  ff_w2 = make_param(seed, prefix + ".ff_w2", 2 * d, d, Init::Xavier);
  ff_b2 = make_param(seed, prefix + ".ff_b2", 1, d, Init::Zero);
}

void TransformerLayerParams::collect(std::vector<Param*>& out) {
  for (Param* p : {&ln1_g, &ln1_b, &ln2_g, &ln2_b, &wq, &bq, &wk, &bk, &wv, &bv, &wo,
                   &bo, &ff_w1, &ff_b1, &ff_w2, &ff_b2})
    out.push_back(p);
}

Val transformer_layer(Tape& t, Val x, TransformerLayerParams& p, int heads) {
  int dim = static_cast<int>(t.value(x).cols());
  if (dim % heads != 0) throw DimensionMismatch("transformer_layer: heads");
  int hd = dim / heads;

  Val xn = layernorm_rows(x, t.leaf(p.ln1_g), t.leaf(p.ln1_b));
  Val q = linear(t, xn, p.wq, p.bq);
  Val k = linear(t, xn, p.wk, p.bk);
  Val v = linear(t, xn, p.wv, p.bv);
  std::vector<Val> outs;
  outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Val qh = slice_cols(q, h * hd, hd);
    Val kh = slice_cols(k, h * hd, hd);
    Val vh = slice_cols(v, h * hd, hd);
    Val attn =
        softmax_rows(cmul(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(hd))));
    outs.push_back(matmul(attn, vh));
  }
  x = add(x, linear(t, concat_cols(outs), p.wo, p.bo));
  Val x2 = layernorm_rows(x, t.leaf(p.ln2_g), t.leaf(p.ln2_b));
  Val ff = linear(t, relu(linear(t, x2, p.ff_w1, p.ff_b1)), p.ff_w2, p.ff_b2);
  return add(x, ff);
}

// ---- image encoder ----

void ViTParams::init(std::uint64_t seed, int d, int image_size) {
  dim = d;
  int per_side = image_size / patch;
  int n_patches = per_side * per_side;
  patch_w = make_param(seed, "vit.patch_w", patch * patch * 3, d, Init::Xavier);
  patch_b = make_param(seed, "vit.patch_b", 1, d, Init::Zero);
  pos = make_param(seed, "vit.pos", n_patches, d, Init::Table);
  layers.clear();
  for (int l = 0; l < 2; ++l) {
    TransformerLayerParams lay;
    lay.init(seed, "vit.layer" + std::to_string(l), d);
    layers.push_back(std::move(lay));
  }
}

std::vector<Param*> ViTParams::params() {
  std::vector<Param*> out{&patch_w, &patch_b, &pos};
  for (TransformerLayerParams& l : layers) l.collect(out);
  return out;
}

Val vit_encode(Tape& t, const MoleculeImage& img, ViTParams& p) {
  if (img.channels != 3 || img.height % p.patch != 0 || img.width % p.patch != 0)
    throw BadPatchGrid("vit_encode: image not divisible into patches");
  int py = img.height / p.patch;
  int px = img.width / p.patch;
  int n_patches = py * px;
  if (n_patches != p.pos.value.rows())
    throw DimensionMismatch("vit_encode: patch count vs positional table");

  Mat patches(n_patches, p.patch * p.patch * 3);
  for (int pi = 0; pi < py; ++pi) {
    for (int pj = 0; pj < px; ++pj) {
      int col = 0;
      for (int dy = 0; dy < p.patch; ++dy)
        for (int dx = 0; dx < p.patch; ++dx)
          for (int c = 0; c < 3; ++c)
            patches(pi * px + pj, col++) = img.at(pi * p.patch + dy, pj * p.patch + dx, c);
    }
  }
  Val x = add(linear(t, t.constant(patches), p.patch_w, p.patch_b), t.leaf(p.pos));
  for (TransformerLayerParams& lay : p.layers) x = transformer_layer(t, x, lay, p.heads);
  return cmul(col_sum(x), 1.0 / n_patches);
}

// ---- text encoder ----

void TextEncParams::init(std::uint64_t seed, int d, int vocab) {
  dim = d;
  tok = make_param(seed, "text.tok", vocab, d, Init::Table);
  pos = make_param(seed, "text.pos", max_tokens, d, Init::Table);
  layers.clear();
  for (int l = 0; l < 2; ++l) {
    TransformerLayerParams lay;
    lay.init(seed, "text.layer" + std::to_string(l), d);
    layers.push_back(std::move(lay));
  }
}

std::vector<Param*> TextEncParams::params() {
  std::vector<Param*> out{&tok, &pos};
  for (TransformerLayerParams& l : layers) l.collect(out);
  return out;
}

Val text_encode(Tape& t, const TextDescription& d, TextEncParams& p) {
  if (d.tokens.empty()) throw EmptyInput("text_encode: no tokens");
  int vocab = static_cast<int>(p.tok.value.rows());
  int limit = std::min<int>(static_cast<int>(d.tokens.size()), p.max_tokens);
  for (int i = 0; i < limit; ++i)
    if (d.tokens[static_cast<size_t>(i)] < 0 || d.tokens[static_cast<size_t>(i)] >= vocab)
      throw TokenOutOfVocab("text_encode: token id " +
                            std::to_string(d.tokens[static_cast<size_t>(i)]));

  Val total;
  bool first = true;
  for (auto [b, e] : d.segments) {
    b = std::min(b, limit);
    e = std::min(e, limit);
    int len = e - b;
    if (len <= 0) continue;
    IndexVec ids(d.tokens.begin() + b, d.tokens.begin() + e);
    Val x = add(gather_rows(t.leaf(p.tok), ids), slice_rows(t.leaf(p.pos), 0, len));
    for (TransformerLayerParams& lay : p.layers) x = transformer_layer(t, x, lay, p.heads);
    Val seg = cmul(col_sum(x), 1.0 / len);
    total = first ? seg : add(total, seg);
    first = false;
  }
  if (first) throw EmptyInput("text_encode: all segments empty");
  return total;
}

// ---- knowledge-graph embedding ----

void KGEmbedding::init(std::uint64_t seed, int d, int n_entities, int n_relations) {
  dim = d;
  double limit = 6.0 / std::sqrt(static_cast<double>(d));
  Rng er(derive_seed(seed, "kg.entities"));
  Mat ent(n_entities, d);
  for (int i = 0; i < n_entities; ++i)
    for (int j = 0; j < d; ++j) ent(i, j) = er.uniform(-limit, limit);
  for (int i = 0; i < n_entities; ++i) {
    double n = ent.row(i).norm();
    if (n > 1.0) ent.row(i) /= n;
  }
  Rng rr(derive_seed(seed, "kg.relations"));
  Mat rel(n_relations, d);
  for (int i = 0; i < n_relations; ++i)
    for (int j = 0; j < d; ++j) rel(i, j) = rr.uniform(-limit, limit);
  for (int i = 0; i < n_relations; ++i) {
    double n = rel.row(i).norm();
    if (n > 1e-12) rel.row(i) /= n;
  }
  entities = Param("kg.entities", std::move(ent));
  relations = Param("kg.relations", std::move(rel));
}

std::vector<Param*> KGEmbedding::params() { return {&entities, &relations}; }

double transe_score(const KGEmbedding& e, int head, int relation, int tail) {
  return (e.entities.value.row(head) + e.relations.value.row(relation) -
          e.entities.value.row(tail))
      .norm();
}

KGEmbedding transe_train(const KGData& kg, int dim, int epochs, std::uint64_t seed) {
  if (kg.triples.empty()) throw EmptyKG("transe_train: no triples");
  KGEmbedding e;
  e.init(seed, dim, kg.n_entities, kg.n_relations);
  Mat& ent = e.entities.value;
  Mat& rel = e.relations.value;

  const double lr = 0.01;
  const double margin = 1.0;
  Rng rng(derive_seed(seed, "transe.train"));
  std::vector<size_t> order(kg.triples.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t idx : order) {
      const KGTriple& tr = kg.triples[idx];
      bool corrupt_head = rng.bernoulli(0.5);
      int orig = corrupt_head ? tr.head : tr.tail;
      int cand = static_cast<int>(rng.below(static_cast<std::uint64_t>(kg.n_entities)));
      while (kg.n_entities > 1 && cand == orig)
        cand = static_cast<int>(rng.below(static_cast<std::uint64_t>(kg.n_entities)));
      int nh = corrupt_head ? cand : tr.head;
      int nt = corrupt_head ? tr.tail : cand;

      RowVec dpos = ent.row(tr.head) + rel.row(tr.relation) - ent.row(tr.tail);
      RowVec dneg = ent.row(nh) + rel.row(tr.relation) - ent.row(nt);
      double npos = dpos.norm(), nneg = dneg.norm();
      if (margin + npos - nneg <= 0.0) continue;
      RowVec upos = npos > 1e-12 ? RowVec(dpos / npos) : RowVec(RowVec::Zero(dim));
      RowVec uneg = nneg > 1e-12 ? RowVec(dneg / nneg) : RowVec(RowVec::Zero(dim));

      // descend: shrink the positive distance, grow the negative one
      std::unordered_map<int, RowVec> ge;
      auto bump = [&](int row, const RowVec& g) {
        auto it = ge.find(row);
        if (it == ge.end())
          ge.emplace(row, g);
        else
          it->second += g;
      };
      bump(tr.head, upos);
      bump(tr.tail, -upos);
      bump(nh, -uneg);
      bump(nt, uneg);
      rel.row(tr.relation) -= lr * (upos - uneg);
      for (auto& [row, g] : ge) {
        ent.row(row) -= lr * g;
        double n = ent.row(row).norm();
        if (n > 1.0) ent.row(row) /= n;
      }
    }
  }
  return e;
}

Val kg_lookup(Tape& t, const std::string& mol_id, const KGData& kg, KGEmbedding& e) {
  auto it = kg.entity_of_mol.find(mol_id);
  if (it == kg.entity_of_mol.end())
    throw UnknownEntity("kg_lookup: " + mol_id + " has no entity");
  return gather_rows(t.leaf(e.entities), {it->second});
}

// ---- property encoder ----

void PropEncParams::init(std::uint64_t seed, int d) {
  dim = d;
  mean = Vec::Zero(5);
  stdev = Vec::Ones(5);
  active.assign(5, 1);
  w = make_param(seed, "prop.w", 5, d, Init::Xavier);
  b = make_param(seed, "prop.b", 1, d, Init::Zero);
}

void PropEncParams::fit(const std::vector<PropertyVector>& corpus) {
  if (corpus.empty()) throw EmptyInput("prop fit: empty corpus");
  Mat all(static_cast<int>(corpus.size()), 5);
  for (size_t i = 0; i < corpus.size(); ++i)
    all.row(static_cast<int>(i)) = corpus[i].to_vec().transpose();
  mean = all.colwise().mean().transpose();
  for (int c = 0; c < 5; ++c) {
    double var = (all.col(c).array() - mean(c)).square().mean();
    double sd = std::sqrt(var);
    if (sd > 1e-12) {
      stdev(c) = sd;
      active[static_cast<size_t>(c)] = 1;
    } else {
      stdev(c) = 1.0;
      active[static_cast<size_t>(c)] = 0;
      std::fprintf(stderr, "prop fit: channel %d has zero variance, dropping\n", c);
    }
  }
}

std::vector<Param*> PropEncParams::params() { return {&w, &b}; }

Val prop_encode(Tape& t, const PropertyVector& v, PropEncParams& p) {
  Vec raw = v.to_vec();
  if (!raw.allFinite()) throw DimensionMismatch("prop_encode: non-finite input");
  Mat z = Mat::Zero(1, 5);
  for (int c = 0; c < 5; ++c)
    if (p.active[static_cast<size_t>(c)]) z(0, c) = (raw(c) - p.mean(c)) / p.stdev(c);
  return linear(t, t.constant(z), p.w, p.b);
}

// ---- geometric encoder ----

void GVPUnitParams::init(std::uint64_t seed, const std::string& prefix, int s_in,
                         int c_in, int s_out, int c_out) {
  w_h = make_param(seed, prefix + ".w_h", c_in, 64, Init::Xavier);
  w_mu = make_param(seed, prefix + ".w_mu", 64, c_out, Init::Xavier);
  mlp_w1 = make_param(seed, prefix + ".mlp_w1", 64 + s_in, 128, Init::Xavier);
  mlp_b1 = make_param(seed, prefix + ".mlp_b1", 1, 128, Init::Zero);
  mlp_w2 = make_param(seed, prefix + ".mlp_w2", 128, s_out, Init::Xavier);
  mlp_b2 = make_param(seed, prefix + ".mlp_b2", 1, s_out, Init::Zero);
}

void GVPUnitParams::collect(std::vector<Param*>& out) {
  for (Param* p : {&w_h, &w_mu, &mlp_w1, &mlp_b1, &mlp_w2, &mlp_b2}) out.push_back(p);
}

std::pair<Val, Val> gvp_unit(Tape& t, Val s, Val v, GVPUnitParams& p) {
  int m3 = static_cast<int>(t.value(v).rows());
  if (m3 % 3 != 0) throw DimensionMismatch("gvp_unit: vector rows not triples");
  int m = m3 / 3;
  if (static_cast<int>(t.value(s).rows()) != m)
    throw DimensionMismatch("gvp_unit: scalar/vector row mismatch");

  IndexVec seg(static_cast<size_t>(m3));
  for (int i = 0; i < m3; ++i) seg[static_cast<size_t>(i)] = i / 3;

  Val vh = matmul(v, t.leaf(p.w_h));
  // norm over the 3 spatial rows per channel; +1e-8 keeps sqrt differentiable at 0
  Val norms = sqrt_v(affine(segment_sum(square(vh), seg, m, true), 1.0, 1e-8));
  Val hmid = relu(linear(t, concat_cols({norms, s}), p.mlp_w1, p.mlp_b1));
  Val s_out = linear(t, hmid, p.mlp_w2, p.mlp_b2);

  Val fv = matmul(vh, t.leaf(p.w_mu));
  Val gate = sigmoid(sqrt_v(affine(segment_sum(square(fv), seg, m, true), 1.0, 1e-8)));
  IndexVec rep(static_cast<size_t>(m3));
  for (int i = 0; i < m3; ++i) rep[static_cast<size_t>(i)] = i / 3;
  Val v_out = mul(fv, gather_rows(gate, rep));
  return {s_out, v_out};
}

void GVPParams::init(std::uint64_t seed, int d) {
  dim = d;
  s_in_w = make_param(seed, "gvp.s_in_w", 9, kScalarWidth, Init::Xavier);
  s_in_b = make_param(seed, "gvp.s_in_b", 1, kScalarWidth, Init::Zero);
  edge_w = make_param(seed, "gvp.edge_w", kRBF, kEdgeScalarWidth, Init::Xavier);
  edge_b = make_param(seed, "gvp.edge_b", 1, kEdgeScalarWidth, Init::Zero);
  out_w = make_param(seed, "gvp.out_w", kScalarWidth, d, Init::Xavier);
  out_b = make_param(seed, "gvp.out_b", 1, d, Init::Zero);
  int s_in = kScalarWidth + kEdgeScalarWidth;  // neighbor scalars ++ edge scalars
  int c_in = kVectorWidth + 1;                 // neighbor vectors ++ edge unit vector
  for (int l = 0; l < 3; ++l)
    layers[static_cast<size_t>(l)].init(seed, "gvp.layer" + std::to_string(l), s_in,
                                        c_in, kScalarWidth, kVectorWidth);
}

std::vector<Param*> GVPParams::params() {
  std::vector<Param*> out{&s_in_w, &s_in_b, &edge_w, &edge_b, &out_w, &out_b};
  for (GVPUnitParams& l : layers) l.collect(out);
  return out;
}

Val gvp_encode(Tape& t, const Conformer& c, const MoleculeGraph& g, GVPParams& p) {
  int n = g.n_atoms();
  if (static_cast<int>(c.coords.size()) != n)
    throw DimensionMismatch("gvp_encode: conformer size");

  Val S = linear(t, t.constant(node_features(g)), p.s_in_w, p.s_in_b);
  Val V = t.constant(Mat::Zero(3 * n, GVPParams::kVectorWidth));

  IndexVec src, dst, eid;
  directed_edges(g, src, dst, eid);
  int m = static_cast<int>(src.size());

  if (m > 0) {
    const double span = 4.0;
    const double sigma = span / (GVPParams::kRBF - 1);
    Mat e_s_raw(m, GVPParams::kRBF);
    Mat e_v(3 * m, 1);
    for (int e = 0; e < m; ++e) {
      Vec3 delta = c.coords[static_cast<size_t>(dst[static_cast<size_t>(e)])] -
                   c.coords[static_cast<size_t>(src[static_cast<size_t>(e)])];
      double d = delta.norm();
      if (d < 1e-6) throw DegenerateEdge("gvp_encode: coincident bonded atoms");
      for (int k = 0; k < GVPParams::kRBF; ++k) {
        double center = span * k / (GVPParams::kRBF - 1);
        e_s_raw(e, k) = std::exp(-(d - center) * (d - center) / (2.0 * sigma * sigma));
      }
      e_v.block<3, 1>(3 * e, 0) = delta / d;
    }
    Val es = linear(t, t.constant(e_s_raw), p.edge_w, p.edge_b);
    Val ev = t.constant(e_v);

    IndexVec src3(static_cast<size_t>(3 * m)), dst3(static_cast<size_t>(3 * m));
    for (int e = 0; e < m; ++e)
      for (int k = 0; k < 3; ++k) {
        src3[static_cast<size_t>(3 * e + k)] = 3 * src[static_cast<size_t>(e)] + k;
        dst3[static_cast<size_t>(3 * e + k)] = 3 * dst[static_cast<size_t>(e)] + k;
      }

    for (GVPUnitParams& lay : p.layers) {
      Val s_in = concat_cols({gather_rows(S, src), es});
      Val v_in = concat_cols({gather_rows(V, src3), ev});
      auto [s_msg, v_msg] = gvp_unit(t, s_in, v_in, lay);
      S = add(S, segment_sum(s_msg, dst, n, true));
      V = add(V, segment_sum(v_msg, dst3, 3 * n, true));
    }
  }
  return linear(t, cmul(sum_rows_sorted(S), 1.0 / n), p.out_w, p.out_b);
}

// ---- bundle ----

EncoderSet::EncoderSet(std::uint64_t seed, int d, int n_gin_layers, int vocab,
                       int n_entities, int n_relations)
    : dim(d), gin_layers(n_gin_layers) {
  cross.init(derive_seed(seed, "cross"), d, n_gin_layers);
  vit.init(derive_seed(seed, "vit"), d, 32);
  text.init(derive_seed(seed, "text"), d, vocab);
  kg.init(derive_seed(seed, "kg"), d, n_entities, n_relations);
  prop.init(derive_seed(seed, "prop"), d);
  gvp.init(derive_seed(seed, "gvp"), d);
}

std::vector<Param*> EncoderSet::cross_params() { return cross.params(); }

std::vector<Param*> EncoderSet::modality_params(const std::string& modality) {
  if (modality == "image") return vit.params();
  if (modality == "text") return text.params();
  if (modality == "kg") return kg.params();
  if (modality == "props") return prop.params();
  if (modality == "structure") return gvp.params();
  throw UnknownVariant("modality_params: " + modality);
}

std::vector<Param*> EncoderSet::all_params() {
  std::vector<Param*> out = cross.params();
  for (const char* m : {"image", "text", "kg", "props", "structure"})
    for (Param* p : modality_params(m)) out.push_back(p);
  return out;
}

}  // namespace mkmed
