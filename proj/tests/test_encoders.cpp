#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <set>

#include "mkmed/encoders.hpp"

using namespace mkmed;
using ad::Tape;

namespace {

double max_abs_diff(const Mat& a, const Mat& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  if (a.size() == 0) return 0.0;
  return (a - b).cwiseAbs().maxCoeff();
}

// Central finite differences on sampled parameter coordinates. The builder
// must produce a 1x1 loss on a fresh tape; params round-robin so each one is
// probed at least once when pairs >= params.size().
void fd_check(const std::function<Val(Tape&)>& build, const std::vector<Param*>& params,
              Rng& rng, int pairs, double rtol = 1e-4) {
  Tape t;
  Val loss = build(t);
  for (Param* p : params) p->zero_grad();
  t.backward(loss);
  std::vector<Mat> grads;
  for (Param* p : params) grads.push_back(p->grad);

  const double h = 1e-5;
  for (int k = 0; k < pairs; ++k) {
    Param* p = params[static_cast<size_t>(k) % params.size()];
    int i = static_cast<int>(rng.below(static_cast<std::uint64_t>(p->value.rows())));
    int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(p->value.cols())));
    double orig = p->value(i, j);
    p->value(i, j) = orig + h;
    Tape t1;
    double f1 = t1.value(build(t1))(0, 0);
    p->value(i, j) = orig - h;
    Tape t2;
    double f2 = t2.value(build(t2))(0, 0);
    p->value(i, j) = orig;
    double fd = (f1 - f2) / (2.0 * h);
    double an = grads[static_cast<size_t>(k) % params.size()](i, j);
    double tol = 1e-7 + rtol * std::max(std::abs(an), std::abs(fd));
    INFO(p->name << "(" << i << "," << j << ") analytic " << an << " fd " << fd);
    CHECK(std::abs(an - fd) <= tol);
  }
}

Val probe_loss(Tape& t, Val out, std::uint64_t seed) {
  Rng rng(seed);
  Mat w(t.value(out).rows(), t.value(out).cols());
  for (int i = 0; i < w.rows(); ++i)
    for (int j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-1.0, 1.0);
  return ad::sum_all(ad::mul(out, t.constant(w)));
}

Mat rotation_matrix(double ax, double ay, double az) {
  Mat rx(3, 3), ry(3, 3), rz(3, 3);
  rx << 1, 0, 0, 0, std::cos(ax), -std::sin(ax), 0, std::sin(ax), std::cos(ax);
  ry << std::cos(ay), 0, std::sin(ay), 0, 1, 0, -std::sin(ay), 0, std::cos(ay);
  rz << std::cos(az), -std::sin(az), 0, std::sin(az), std::cos(az), 0, 0, 0, 1;
  return rz * ry * rx;
}

}  // namespace

TEST_CASE("gin_encode single node equals the plain mlp stack") {
  GINTower tower;
  tower.init(11, "t", 64, 2);
  MoleculeGraph g = parse_smiles("C");
  Tape t;
  Val out = gin_encode(t, g, tower);

  // independent Eigen recomputation (eps initializes to 0)
  Mat h = (node_features(g) * tower.node_w.value) + tower.node_b.value;
  for (GINLayerParams& lay : tower.layers) {
    Mat z = h;  // (1+0)*h + empty aggregation
    z = ((z * lay.comb_w1.value + lay.comb_b1.value).array().max(0.0)).matrix();
    h = z * lay.comb_w2.value + lay.comb_b2.value;
  }
  Mat expect = h * tower.out_w.value + tower.out_b.value;
  CHECK(max_abs_diff(t.value(out), expect) < 1e-12);
}

TEST_CASE("gin_encode is invariant under atom reindexing") {
  GINTower tower;
  tower.init(3, "t", 64, 2);
  Tape t1, t2, t3;
  Mat a = t1.value(gin_encode(t1, parse_smiles("OCC"), tower));
  Mat b = t2.value(gin_encode(t2, parse_smiles("CCO"), tower));
  CHECK(max_abs_diff(a, b) == 0.0);

  Mat c = t3.value(gin_encode(t3, parse_smiles("C(C)C"), tower));
  Tape t4;
  Mat d = t4.value(gin_encode(t4, parse_smiles("CCC"), tower));
  CHECK(max_abs_diff(c, d) == 0.0);
}

TEST_CASE("gin_encode rejects foreign feature shapes") {
  GINTower tower;
  tower.init(5, "t", 64, 2);
  MoleculeGraph g = parse_smiles("CC");
  Mat bad_nodes = Mat::Zero(2, 7);
  Tape t;
  CHECK_THROWS_AS(gin_encode(t, g, bad_nodes, edge_features(g), tower),
                  DimensionMismatch);
}

TEST_CASE("gin_encode gradients match finite differences") {
  GINTower tower;
  tower.init(7, "t", 64, 2);
  std::vector<Param*> ps;
  tower.collect(ps);
  Rng rng(99);
  const char* mols[] = {"CCO", "C1CC1", "c1ccccc1", "CC(=O)C"};
  for (int i = 0; i < 4; ++i) {
    MoleculeGraph g = parse_smiles(mols[i]);
    auto build = [&](Tape& t) {
      return probe_loss(t, gin_encode(t, g, tower), 17 + static_cast<std::uint64_t>(i));
    };
    fd_check(build, ps, rng, 30);
  }
}

TEST_CASE("substructure_fuse attention weights") {
  AttentionFuseParams fuse;
  fuse.init(23, 64);
  Rng rng(5);
  Mat mol = table_init(1, 64, rng);
  Mat one = table_init(1, 64, rng);

  // expose weights by replaying the logit path
  auto weights = [&](const Mat& subs, const std::vector<char>& mask) {
    Tape t;
    Val q = ad::matmul(t.constant(mol), t.leaf(fuse.q_w));
    Val kk = ad::matmul(t.constant(subs), t.leaf(fuse.k_w));
    Val logits = ad::cmul(ad::matmul(q, ad::transpose(kk)), 1.0 / 8.0);
    if (!mask.empty()) {
      Mat m = Mat::Zero(1, subs.rows());
      for (int i = 0; i < subs.rows(); ++i)
        if (mask[static_cast<size_t>(i)]) m(0, i) = -1e9;
      logits = ad::add(logits, t.constant(m));
    }
    return Mat(t.value(ad::softmax_rows(logits)));
  };

  Mat w1 = weights(one, {});
  CHECK(w1(0, 0) == 1.0);

  Mat same(3, 64);
  same << one, one, one;
  Mat w3 = weights(same, {});
  for (int i = 0; i < 3; ++i) CHECK(w3(0, i) == doctest::Approx(1.0 / 3.0));

  Mat two(2, 64);
  two << one, Mat(table_init(1, 64, rng));
  Mat wm = weights(two, {0, 1});
  CHECK(wm(0, 1) < 1e-30);
  CHECK(wm(0, 0) == doctest::Approx(1.0));

  Tape t;
  Val m = t.constant(mol), s = t.constant(two);
  CHECK_THROWS_AS(substructure_fuse(t, m, s, {1, 1}, fuse), AllMasked);
  Val fused = substructure_fuse(t, m, s, {0, 1}, fuse);
  CHECK(t.value(fused).cols() == 64);
  CHECK(t.value(fused).allFinite());
}

TEST_CASE("cross_modal_encode composition and invariance") {
  CrossModalParams p;
  p.init(31, 64, 2);

  // one substructure: fuse over the whole-molecule fragment
  PreparedGraph g = prepare(parse_smiles("C"));
  REQUIRE(g.subs.size() == 1);
  Tape t;
  Val e = cross_modal_encode(t, g, p);
  Val mol = gin_encode(t, g.graph, g.node_f, g.edge_f, p.gin.mol);
  Val sub = gin_encode(t, g.subs[0].graph, g.sub_node_f[0], g.sub_edge_f[0], p.gin.sub);
  Val manual = substructure_fuse(t, mol, sub, {}, p.fuse);
  CHECK(max_abs_diff(t.value(e), t.value(manual)) == 0.0);

  Tape t1, t2;
  Mat a = t1.value(cross_modal_encode(t1, prepare(parse_smiles("OCC")), p));
  Mat b = t2.value(cross_modal_encode(t2, prepare(parse_smiles("CCO")), p));
  CHECK(max_abs_diff(a, b) == 0.0);

  Tape t3, t4;
  Mat cc = t3.value(cross_modal_encode(t3, prepare(parse_smiles("CC")), p));
  Mat cdc = t4.value(cross_modal_encode(t4, prepare(parse_smiles("C=C")), p));
  CHECK(max_abs_diff(cc, cdc) > 1e-6);
}

TEST_CASE("cross_modal_encode gradients match finite differences") {
  CrossModalParams p;
  p.init(41, 64, 2);
  std::vector<Param*> ps = p.params();
  Rng rng(123);
  PreparedGraph g = prepare(parse_smiles("c1ccccc1CC"));
  auto build = [&](Tape& t) { return probe_loss(t, cross_modal_encode(t, g, p), 55); };
  fd_check(build, ps, rng, 60);
}

TEST_CASE("vit_encode contracts") {
  ViTParams p;
  p.init(51, 64, 32);

  MoleculeImage zero;
  zero.height = zero.width = 32;
  zero.channels = 3;
  zero.pixels.assign(32 * 32 * 3, 0.0);
  Tape t1, t2;
  Mat a = t1.value(vit_encode(t1, zero, p));
  Mat b = t2.value(vit_encode(t2, zero, p));
  CHECK(a.allFinite());
  CHECK(a.cols() == 64);
  CHECK(max_abs_diff(a, b) == 0.0);

  MoleculeImage img = rasterize(parse_smiles("CCO"), 32, 3);
  Tape t3, t4;
  Mat c = t3.value(vit_encode(t3, img, p));
  Mat d = t4.value(vit_encode(t4, img, p));
  CHECK(max_abs_diff(c, d) == 0.0);
  CHECK(max_abs_diff(a, c) > 1e-8);

  MoleculeImage odd;
  odd.height = odd.width = 30;
  odd.channels = 3;
  odd.pixels.assign(30 * 30 * 3, 0.0);
  Tape t5;
  CHECK_THROWS_AS(vit_encode(t5, odd, p), BadPatchGrid);

  MoleculeImage big;
  big.height = big.width = 40;
  big.channels = 3;
  big.pixels.assign(40 * 40 * 3, 0.0);
  Tape t6;
  CHECK_THROWS_AS(vit_encode(t6, big, p), DimensionMismatch);
}

TEST_CASE("vit_encode gradients match finite differences") {
  ViTParams p;
  p.init(61, 64, 32);
  std::vector<Param*> ps = p.params();
  Rng rng(7);
  for (int i = 0; i < 2; ++i) {
    MoleculeImage img = rasterize(parse_smiles(i == 0 ? "CCO" : "c1ccccc1"), 32,
                                  static_cast<std::uint64_t>(i + 1));
    auto build = [&](Tape& t) {
      return probe_loss(t, vit_encode(t, img, p), 70 + static_cast<std::uint64_t>(i));
    };
    fd_check(build, ps, rng, 40);
  }
}

TEST_CASE("text_encode segment arithmetic") {
  TextEncParams p;
  p.init(71, 64, text_vocab_size());

  TextDescription single;
  single.tokens = {3, 7};
  single.segments = {{0, 2}};
  TextDescription twice;
  twice.tokens = {3, 7, 3, 7};
  twice.segments = {{0, 2}, {2, 4}};
  Tape t1, t2;
  Mat v1 = t1.value(text_encode(t1, single, p));
  Mat v2 = t2.value(text_encode(t2, twice, p));
  CHECK(max_abs_diff(v2, Mat(2.0 * v1)) == 0.0);

  // one token: pool of one row is that row's contextual vector
  TextDescription one;
  one.tokens = {5};
  one.segments = {{0, 1}};
  Tape t3;
  Mat got = t3.value(text_encode(t3, one, p));
  Tape t4;
  Val x = ad::add(ad::gather_rows(t4.leaf(p.tok), {5}), ad::slice_rows(t4.leaf(p.pos), 0, 1));
  for (TransformerLayerParams& lay : p.layers) x = transformer_layer(t4, x, lay, p.heads);
  CHECK(max_abs_diff(got, t4.value(x)) == 0.0);

  // tokens beyond 64 do not matter
  TextDescription long1, long2;
  for (int i = 0; i < 70; ++i) long1.tokens.push_back(i % 20);
  long2.tokens = long1.tokens;
  for (int i = 64; i < 70; ++i) long2.tokens[static_cast<size_t>(i)] = 19 - i % 7;
  long1.segments = {{0, 64}, {64, 70}};
  long2.segments = {{0, 64}, {64, 70}};
  Tape t5, t6;
  CHECK(max_abs_diff(t5.value(text_encode(t5, long1, p)),
                     t6.value(text_encode(t6, long2, p))) == 0.0);

  TextDescription bad;
  bad.tokens = {text_vocab_size()};
  bad.segments = {{0, 1}};
  Tape t7;
  CHECK_THROWS_AS(text_encode(t7, bad, p), TokenOutOfVocab);
  TextDescription empty;
  Tape t8;
  CHECK_THROWS_AS(text_encode(t8, empty, p), EmptyInput);
}

TEST_CASE("text_encode gradients match finite differences") {
  TextEncParams p;
  p.init(81, 64, text_vocab_size());
  std::vector<Param*> ps = p.params();
  Rng rng(17);
  TextDescription d = describe(parse_smiles("c1ccccc1CO"), 0);
  auto build = [&](Tape& t) { return probe_loss(t, text_encode(t, d, p), 91); };
  fd_check(build, ps, rng, 40);
}

TEST_CASE("transe_train separates a triple from corruptions") {
  KGData kg;
  kg.n_entities = 10;
  kg.n_relations = 1;
  kg.triples = {{0, 0, 1}};
  KGEmbedding e = transe_train(kg, 64, 200, 3);

  double pos = transe_score(e, 0, 0, 1);
  int wins = 0, total = 0;
  for (int t = 0; t < 10; ++t) {
    if (t == 1) continue;
    ++total;
    if (pos < transe_score(e, 0, 0, t)) ++wins;
  }
  for (int h = 1; h < 10; ++h) {
    ++total;
    if (pos < transe_score(e, h, 0, 1)) ++wins;
  }
  CHECK(static_cast<double>(wins) / total >= 0.95);
}

TEST_CASE("transe_train determinism, zero epochs, and the norm clamp") {
  KGData kg;
  kg.n_entities = 8;
  kg.n_relations = 2;
  kg.triples = {{0, 0, 4}, {1, 1, 5}, {2, 0, 6}, {3, 1, 7}};

  KGEmbedding init1 = transe_train(kg, 64, 0, 9);
  KGEmbedding init2;
  init2.init(9, 64, 8, 2);
  CHECK(max_abs_diff(init1.entities.value, init2.entities.value) == 0.0);
  CHECK(max_abs_diff(init1.relations.value, init2.relations.value) == 0.0);

  for (int epochs = 1; epochs <= 5; ++epochs) {
    KGEmbedding e = transe_train(kg, 64, epochs, 9);
    for (int i = 0; i < 8; ++i) CHECK(e.entities.value.row(i).norm() <= 1.0 + 1e-6);
  }
  KGEmbedding a = transe_train(kg, 64, 5, 9);
  KGEmbedding b = transe_train(kg, 64, 5, 9);
  CHECK(max_abs_diff(a.entities.value, b.entities.value) == 0.0);

  KGData empty;
  empty.n_entities = 3;
  empty.n_relations = 1;
  CHECK_THROWS_AS(transe_train(empty, 64, 1, 1), EmptyKG);
}

TEST_CASE("kg_lookup returns the entity row") {
  KGData kg;
  kg.n_entities = 5;
  kg.n_relations = 1;
  kg.triples = {{0, 0, 3}};
  kg.entity_of_mol = {{"m0", 0}, {"m1", 1}};
  KGEmbedding e;
  e.init(13, 64, 5, 1);

  Tape t;
  Mat row = t.value(kg_lookup(t, "m1", kg, e));
  CHECK(max_abs_diff(row, Mat(e.entities.value.row(1))) == 0.0);
  Tape t2;
  Mat again = t2.value(kg_lookup(t2, "m1", kg, e));
  CHECK(max_abs_diff(row, again) == 0.0);
  Tape t3;
  CHECK_THROWS_AS(kg_lookup(t3, "nope", kg, e), UnknownEntity);
}

TEST_CASE("prop_encode affine identities") {
  PropEncParams p;
  p.init(91, 64);
  std::vector<PropertyVector> corpus;
  for (const char* s : {"C", "CC", "CCO", "c1ccccc1", "C(=O)O", "CCN"})
    corpus.push_back(descriptors(parse_smiles(s)));
  p.fit(corpus);

  PropertyVector at_mean;
  at_mean.mw = p.mean(0);
  at_mean.hba = p.mean(1);
  at_mean.hbd = p.mean(2);
  at_mean.psa = p.mean(3);
  at_mean.aromatic_rings = p.mean(4);
  Tape t;
  CHECK(max_abs_diff(t.value(prop_encode(t, at_mean, p)), p.b.value) == 0.0);

  PropertyVector a = corpus[2], b = corpus[3];
  PropertyVector combo;
  combo.mw = a.mw + b.mw - at_mean.mw;
  combo.hba = a.hba + b.hba - at_mean.hba;
  combo.hbd = a.hbd + b.hbd - at_mean.hbd;
  combo.psa = a.psa + b.psa - at_mean.psa;
  combo.aromatic_rings = a.aromatic_rings + b.aromatic_rings - at_mean.aromatic_rings;
  Tape t2;
  Mat lhs = t2.value(prop_encode(t2, a, p)) + t2.value(prop_encode(t2, b, p)) -
            t2.value(prop_encode(t2, at_mean, p));
  Mat rhs = t2.value(prop_encode(t2, combo, p));
  CHECK(max_abs_diff(lhs, rhs) < 1e-6);

  Tape t3, t4;
  CHECK(max_abs_diff(t3.value(prop_encode(t3, a, p)), t4.value(prop_encode(t4, a, p))) ==
        0.0);
}

TEST_CASE("prop_encode drops zero-variance channels") {
  PropEncParams p;
  p.init(93, 64);
  std::vector<PropertyVector> corpus;
  for (const char* s : {"C", "CC", "CCC"}) corpus.push_back(descriptors(parse_smiles(s)));
  p.fit(corpus);  // hba, hbd, psa, aromatic rings are constant 0 here
  CHECK(p.active[0] == 1);
  CHECK(p.active[1] == 0);
  CHECK(p.active[4] == 0);
  PropertyVector probe = descriptors(parse_smiles("c1ccccc1"));
  Tape t;
  CHECK(t.value(prop_encode(t, probe, p)).allFinite());
}

TEST_CASE("prop_encode gradients match finite differences") {
  PropEncParams p;
  p.init(95, 64);
  std::vector<PropertyVector> corpus;
  for (const char* s : {"C", "CCO", "c1ccccc1", "C(=O)O"})
    corpus.push_back(descriptors(parse_smiles(s)));
  p.fit(corpus);
  std::vector<Param*> ps = p.params();
  Rng rng(19);
  PropertyVector v = descriptors(parse_smiles("CCN"));
  auto build = [&](Tape& t) { return probe_loss(t, prop_encode(t, v, p), 101); };
  fd_check(build, ps, rng, 20);
}

TEST_CASE("gvp_unit zero vectors and covariance") {
  GVPUnitParams u;
  u.init(103, "u", 16, 5, 12, 6);
  Rng rng(29);
  Mat s = table_init(4, 16, rng);
  Mat vzero = Mat::Zero(12, 5);

  Tape t;
  auto [s_out, v_out] = gvp_unit(t, t.constant(s), t.constant(vzero), u);
  CHECK(t.value(v_out).cwiseAbs().maxCoeff() == 0.0);
  CHECK(t.value(s_out).rows() == 4);
  CHECK(t.value(s_out).cols() == 12);

  // with zero vectors, s' ignores w_mu entirely
  Param saved = u.w_mu;
  u.w_mu.value.setZero();
  Tape t2;
  auto [s_out2, v_out2] = gvp_unit(t2, t2.constant(s), t2.constant(vzero), u);
  CHECK(max_abs_diff(t.value(s_out), t2.value(s_out2)) == 0.0);
  u.w_mu = saved;

  // covariance: rotating input vector triples rotates output triples
  Mat v = table_init(12, 5, rng);
  Mat r = rotation_matrix(0.5, 0.3, 0.7);
  Mat v_rot(12, 5);
  for (int blk = 0; blk < 4; ++blk)
    v_rot.block<3, Eigen::Dynamic>(3 * blk, 0, 3, 5) = r * v.block<3, Eigen::Dynamic>(3 * blk, 0, 3, 5);
  Tape t3, t4;
  auto [sa, va] = gvp_unit(t3, t3.constant(s), t3.constant(v), u);
  auto [sb, vb] = gvp_unit(t4, t4.constant(s), t4.constant(v_rot), u);
  CHECK(max_abs_diff(t3.value(sa), t4.value(sb)) < 1e-5);
  Mat va_rot(12, 6);
  for (int blk = 0; blk < 4; ++blk)
    va_rot.block<3, Eigen::Dynamic>(3 * blk, 0, 3, 6) =
        r * t3.value(va).block<3, Eigen::Dynamic>(3 * blk, 0, 3, 6);
  CHECK(max_abs_diff(va_rot, t4.value(vb)) < 1e-5);
}

TEST_CASE("gvp_encode symmetry invariances") {
  GVPParams p;
  p.init(107, 64);
  MoleculeGraph g = parse_smiles("CC(=O)CO");
  Conformer c = generate_conformer(g, 4);

  Tape t1;
  Mat base = t1.value(gvp_encode(t1, c, g, p));
  CHECK(base.cols() == 64);
  CHECK(base.allFinite());

  Mat r = rotation_matrix(0.9, -0.4, 1.3);
  Conformer rot = c;
  for (Vec3& x : rot.coords) x = r * x;
  Tape t2;
  CHECK(max_abs_diff(base, t2.value(gvp_encode(t2, rot, g, p))) < 1e-5);

  Conformer shift = c;
  for (Vec3& x : shift.coords) x += Vec3(1.3, -2.0, 0.7);
  Tape t3;
  CHECK(max_abs_diff(base, t3.value(gvp_encode(t3, shift, g, p))) < 1e-5);

  Conformer degen = generate_conformer(parse_smiles("CC"), 1);
  degen.coords[1] = degen.coords[0];
  Tape t4;
  CHECK_THROWS_AS(gvp_encode(t4, degen, parse_smiles("CC"), p), DegenerateEdge);
}

TEST_CASE("gvp_encode gradients match finite differences") {
  GVPParams p;
  p.init(109, 64);
  std::vector<Param*> ps = p.params();
  Rng rng(31);
  MoleculeGraph g = parse_smiles("CCO");
  Conformer c = generate_conformer(g, 2);
  auto build = [&](Tape& t) { return probe_loss(t, gvp_encode(t, c, g, p), 113); };
  fd_check(build, ps, rng, 40);
}

TEST_CASE("encoder bundle emits finite 64-dim rows everywhere") {
  std::vector<std::pair<std::string, MoleculeGraph>> mols;
  for (const char* s : {"C", "CCO", "c1ccccc1", "CC(=O)Oc1ccccc1"})
    mols.push_back({unparse(parse_smiles(s)), parse_smiles(s)});
  KGData kg = synth_kg(mols, 2);
  EncoderSet enc(21, 64, 2, text_vocab_size(), kg.n_entities, kg.n_relations);

  std::vector<PropertyVector> corpus;
  for (auto& [id, g] : mols) corpus.push_back(descriptors(g));
  enc.prop.fit(corpus);

  for (auto& [id, g] : mols) {
    Tape t;
    std::vector<Val> outs;
    outs.push_back(cross_modal_encode(t, prepare(g), enc.cross));
    outs.push_back(vit_encode(t, rasterize(g, 32, 1), enc.vit));
    outs.push_back(text_encode(t, describe(g, 1), enc.text));
    outs.push_back(kg_lookup(t, id, kg, enc.kg));
    outs.push_back(prop_encode(t, descriptors(g), enc.prop));
    outs.push_back(gvp_encode(t, generate_conformer(g, 1), g, enc.gvp));
    for (Val v : outs) {
      CHECK(t.value(v).rows() == 1);
      CHECK(t.value(v).cols() == 64);
      CHECK(t.value(v).allFinite());
    }
  }

  // parameter names stay unique (checkpoint keys depend on it)
  std::vector<Param*> all = enc.all_params();
  std::set<std::string> names;
  for (Param* p : all) names.insert(p->name);
  CHECK(names.size() == all.size());

  CHECK_THROWS_AS(enc.modality_params("sound"), UnknownVariant);
}
