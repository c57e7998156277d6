#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "mkmed/errors.hpp"
#include "mkmed/eval.hpp"
#include "mkmed/rng.hpp"
#include "mkmed/synthgen.hpp"

using namespace mkmed;

namespace {

MultiHot hot(int width, std::initializer_list<int> on) {
  MultiHot v(static_cast<size_t>(width), 0);
  for (int i : on) v[static_cast<size_t>(i)] = 1;
  return v;
}

std::set<int> to_set(const MultiHot& v) {
  std::set<int> s;
  for (size_t i = 0; i < v.size(); ++i)
    if (v[i]) s.insert(static_cast<int>(i));
  return s;
}

// Set-arithmetic oracles, written without the multi-hot loops of the library.
double jaccard_oracle(const std::vector<MultiHot>& pred, const std::vector<MultiHot>& truth) {
  double sum = 0.0;
  for (size_t t = 0; t < pred.size(); ++t) {
    auto p = to_set(pred[t]), g = to_set(truth[t]);
    std::set<int> inter, uni;
    std::set_intersection(p.begin(), p.end(), g.begin(), g.end(),
                          std::inserter(inter, inter.begin()));
    std::set_union(p.begin(), p.end(), g.begin(), g.end(), std::inserter(uni, uni.begin()));
    sum += uni.empty() ? 1.0 : static_cast<double>(inter.size()) / uni.size();
  }
  return sum / pred.size();
}

double f1_oracle(const std::vector<MultiHot>& pred, const std::vector<MultiHot>& truth) {
  double sum = 0.0;
  for (size_t t = 0; t < pred.size(); ++t) {
    auto p = to_set(pred[t]), g = to_set(truth[t]);
    std::set<int> inter;
    std::set_intersection(p.begin(), p.end(), g.begin(), g.end(),
                          std::inserter(inter, inter.begin()));
    double prec = p.empty() ? 0.0 : static_cast<double>(inter.size()) / p.size();
    double rec = g.empty() ? 0.0 : static_cast<double>(inter.size()) / g.size();
    sum += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
  }
  return sum / pred.size();
}

double ddi_oracle(const std::vector<MultiHot>& pred, const std::vector<MultiHot>& truth,
                  const Mat& m, bool literal) {
  double hits = 0, denom = 0;
  for (size_t t = 0; t < pred.size(); ++t) {
    auto p = to_set(pred[t]);
    for (int a : p)
      for (int b : p)
        if (a < b) hits += m(a, b) > 0.5;
    auto base = literal ? to_set(truth[t]) : p;
    denom += 0.5 * static_cast<double>(base.size()) * (static_cast<double>(base.size()) - 1);
  }
  return denom == 0 ? 0.0 : hits / denom;
}

// Tie-break reproduced by strict-greater argmax selection instead of a sort.
double prauc_oracle(const Vec& s, const MultiHot& g) {
  int n = static_cast<int>(s.size());
  int positives = 0;
  for (char c : g) positives += c != 0;
  if (positives == 0) return 0.0;
  std::vector<char> used(static_cast<size_t>(n), 0);
  int tp = 0;
  double auc = 0.0, prev = 0.0;
  for (int k = 0; k < n; ++k) {
    int best = -1;
    for (int i = 0; i < n; ++i)
      if (!used[static_cast<size_t>(i)] && (best < 0 || s(i) > s(best))) best = i;
    used[static_cast<size_t>(best)] = 1;
    tp += g[static_cast<size_t>(best)] != 0;
    double precision = static_cast<double>(tp) / (k + 1);
    double recall = static_cast<double>(tp) / positives;
    auc += precision * (recall - prev);
    prev = recall;
  }
  return auc;
}

DDIMatrix random_ddi(int n, std::uint64_t seed) {
  SynthSpec spec;
  spec.n_molecules = n;
  spec.n_medications = n;
  spec.ddi_density = 0.3;
  spec.seed = seed;
  return gen_ddi(spec);
}

}  // namespace

TEST_CASE("jaccard_metric hand examples") {
  std::vector<MultiHot> p = {hot(4, {0, 2})}, g = {hot(4, {0, 1})};
  CHECK(jaccard_metric(p, g) == doctest::Approx(1.0 / 3.0));
  CHECK(jaccard_metric(g, g) == 1.0);
  CHECK(jaccard_metric({hot(4, {})}, {hot(4, {1})}) == 0.0);
  CHECK(jaccard_metric({hot(4, {1})}, {hot(4, {})}) == 0.0);
  CHECK(jaccard_metric({hot(4, {})}, {hot(4, {})}) == 1.0);
  // average over visits
  CHECK(jaccard_metric({hot(4, {0}), hot(4, {0})}, {hot(4, {0}), hot(4, {1})}) == 0.5);
  CHECK_THROWS_AS(jaccard_metric(p, {}), ShapeMismatch);
  CHECK_THROWS_AS(jaccard_metric(p, {hot(5, {0})}), ShapeMismatch);
}

TEST_CASE("ddi_rate_metric: pair counting in both modes") {
  int n = 5;
  Mat m = Mat::Zero(n, n);
  m(0, 1) = m(1, 0) = 1.0;
  DDIMatrix ddi{m};

  std::vector<MultiHot> g = {hot(n, {0, 1, 2, 3})};
  CHECK(ddi_rate_metric({hot(n, {0, 1, 2})}, g, ddi) == doctest::Approx(1.0 / 3.0));
  CHECK(ddi_rate_metric({hot(n, {2, 3, 4})}, g, ddi) == 0.0);
  CHECK(ddi_rate_metric({hot(n, {0, 1})}, g, ddi) == 1.0);
  // fewer than two predictions: no pairs, rate 0
  CHECK(ddi_rate_metric({hot(n, {0})}, g, ddi) == 0.0);
  CHECK(ddi_rate_metric({hot(n, {})}, g, ddi) == 0.0);

  // pair counts pool across visits before dividing: (1 hit of 3) + (0 of 1)
  std::vector<MultiHot> two = {hot(n, {0, 1, 2}), hot(n, {2, 3})};
  std::vector<MultiHot> gt = {hot(n, {0, 1}), hot(n, {2, 3, 4})};
  CHECK(ddi_rate_metric(two, gt, ddi) == doctest::Approx(0.25));
  // paper-literal divides by ground-truth pairs: 1 hit over C(2,2)+C(3,2) = 4
  CHECK(ddi_rate_metric(two, gt, ddi, "paper-literal") == doctest::Approx(0.25));
  std::vector<MultiHot> gt2 = {hot(n, {0, 1, 2}), hot(n, {2, 3, 4})};
  CHECK(ddi_rate_metric(two, gt2, ddi, "paper-literal") == doctest::Approx(1.0 / 6.0));

  CHECK_THROWS_AS(ddi_rate_metric(two, gt, ddi, "loose"), UnknownVariant);
  CHECK_THROWS_AS(ddi_rate_metric({hot(4, {0})}, {hot(4, {0})}, ddi), ShapeMismatch);
  Mat bad = m;
  bad(0, 0) = 1.0;
  CHECK_THROWS_AS(ddi_rate_metric(two, gt, DDIMatrix{bad}), ShapeMismatch);
}

TEST_CASE("f1_metric hand examples") {
  CHECK(f1_metric({hot(4, {0, 2})}, {hot(4, {0, 1})}) == doctest::Approx(0.5));
  CHECK(f1_metric({hot(4, {1, 3})}, {hot(4, {1, 3})}) == 1.0);
  CHECK(f1_metric({hot(4, {0})}, {hot(4, {1})}) == 0.0);
  CHECK(f1_metric({hot(4, {})}, {hot(4, {})}) == 0.0);
  CHECK_THROWS_AS(f1_metric({hot(4, {0})}, {hot(3, {0})}), ShapeMismatch);
}

TEST_CASE("prauc_metric: step sum, ties, degenerate truths") {
  Vec s(3);
  s << 0.9, 0.8, 0.1;
  CHECK(prauc_metric({s}, {hot(3, {0, 2})}) ==
        doctest::Approx(0.5 + 0.0 + (2.0 / 3.0) * 0.5));
  CHECK(prauc_metric({s}, {hot(3, {0, 1, 2})}) == doctest::Approx(1.0));
  Vec one(3);
  one << 0.1, 0.9, 0.2;
  CHECK(prauc_metric({one}, {hot(3, {1})}) == doctest::Approx(1.0));

  Vec tied(2);
  tied << 0.5, 0.5;
  CHECK(prauc_metric({tied}, {hot(2, {0})}) == doctest::Approx(1.0));
  CHECK(prauc_metric({tied}, {hot(2, {1})}) == doctest::Approx(0.5));

  // no positives: contributes zero, still averaged over visits
  CHECK(prauc_metric({s, s}, {hot(3, {}), hot(3, {0, 1, 2})}) == doctest::Approx(0.5));
  CHECK_THROWS_AS(prauc_metric({s}, {hot(4, {0})}), ShapeMismatch);
  CHECK_THROWS_AS(prauc_metric({s, s}, {hot(3, {0})}), ShapeMismatch);
}

TEST_CASE("avg_med_metric") {
  CHECK(avg_med_metric({hot(6, {}), hot(6, {})}) == 0.0);
  CHECK(avg_med_metric({hot(6, {0, 1, 2}), hot(6, {3, 4, 5})}) == 3.0);
  CHECK(avg_med_metric({hot(6, {0, 1}), hot(6, {0, 1, 2, 3})}) == 3.0);
  CHECK(avg_med_metric({}) == 0.0);
}

TEST_CASE("all metrics agree with set-arithmetic oracles on random instances") {
  const int width = 20;
  DDIMatrix ddi = random_ddi(width, 90);
  Rng rng(91);
  for (int trial = 0; trial < 100; ++trial) {
    int visits = 1 + static_cast<int>(rng.below(4));
    std::vector<MultiHot> pred, truth;
    std::vector<Vec> scores;
    for (int v = 0; v < visits; ++v) {
      MultiHot p(width, 0), g(width, 0);
      Vec s(width);
      for (int m = 0; m < width; ++m) {
        p[static_cast<size_t>(m)] = rng.bernoulli(0.3);
        g[static_cast<size_t>(m)] = rng.bernoulli(0.3);
        // coarse grid forces score ties through the ranking tie-break
        s(m) = static_cast<double>(rng.below(8)) / 8.0;
      }
      pred.push_back(p);
      truth.push_back(g);
      scores.push_back(s);
    }
    CHECK(jaccard_metric(pred, truth) == doctest::Approx(jaccard_oracle(pred, truth)).epsilon(1e-9));
    CHECK(f1_metric(pred, truth) == doctest::Approx(f1_oracle(pred, truth)).epsilon(1e-9));
    CHECK(ddi_rate_metric(pred, truth, ddi) ==
          doctest::Approx(ddi_oracle(pred, truth, ddi.m, false)).epsilon(1e-9));
    CHECK(ddi_rate_metric(pred, truth, ddi, "paper-literal") ==
          doctest::Approx(ddi_oracle(pred, truth, ddi.m, true)).epsilon(1e-9));
    double po = 0.0;
    for (int v = 0; v < visits; ++v) po += prauc_oracle(scores[static_cast<size_t>(v)],
                                                        truth[static_cast<size_t>(v)]);
    CHECK(prauc_metric(scores, truth) == doctest::Approx(po / visits).epsilon(1e-9));
  }
}

namespace {

PatientEval random_patient(const std::string& id, int width, Rng& rng) {
  PatientEval p;
  p.id = id;
  int visits = 1 + static_cast<int>(rng.below(3));
  for (int v = 0; v < visits; ++v) {
    VisitEval ve;
    ve.pred.assign(static_cast<size_t>(width), 0);
    ve.truth.assign(static_cast<size_t>(width), 0);
    ve.scores = Vec(width);
    for (int m = 0; m < width; ++m) {
      ve.scores(m) = rng.uniform();
      ve.pred[static_cast<size_t>(m)] = ve.scores(m) > 0.6;
      ve.truth[static_cast<size_t>(m)] = rng.bernoulli(0.4);
    }
    p.visits.push_back(ve);
  }
  return p;
}

}  // namespace

TEST_CASE("bootstrap_evaluate: degenerate resamples and determinism") {
  int width = 10;
  DDIMatrix ddi = random_ddi(width, 92);
  Rng rng(93);

  // One patient: every resample is that patient, so mean = point, std = 0.
  std::vector<PatientEval> solo = {random_patient("p0", width, rng)};
  MetricsReport r1 = bootstrap_evaluate(solo, ddi, 1, 7);
  CHECK(r1.jaccard.samples.size() == 1);
  CHECK(r1.jaccard.mean == doctest::Approx(r1.jaccard.point));
  CHECK(r1.jaccard.stdev == 0.0);
  MetricsReport r8 = bootstrap_evaluate(solo, ddi, 8, 7);
  CHECK(r8.f1.stdev == 0.0);
  CHECK(r8.prauc.mean == doctest::Approx(r8.prauc.point));

  // Identical patients: resampling cannot change any metric.
  std::vector<PatientEval> clones;
  for (int i = 0; i < 5; ++i) {
    clones.push_back(solo[0]);
    clones.back().id = "c" + std::to_string(i);
  }
  MetricsReport rc = bootstrap_evaluate(clones, ddi, 7, 11);
  CHECK(rc.jaccard.stdev == 0.0);
  CHECK(rc.ddi_rate.stdev == 0.0);
  CHECK(rc.avg_med.stdev == 0.0);

  std::vector<PatientEval> mixed;
  for (int i = 0; i < 12; ++i)
    mixed.push_back(random_patient("p" + std::to_string(i), width, rng));
  MetricsReport ra = bootstrap_evaluate(mixed, ddi, 200, 3);
  CHECK(ra.jaccard.samples.size() == 200);
  double lo = *std::min_element(ra.jaccard.samples.begin(), ra.jaccard.samples.end());
  double hi = *std::max_element(ra.jaccard.samples.begin(), ra.jaccard.samples.end());
  CHECK(ra.jaccard.mean >= lo);
  CHECK(ra.jaccard.mean <= hi);
  CHECK(ra.jaccard.stdev > 0.0);
  for (const MetricSummary* s : {&ra.jaccard, &ra.ddi_rate, &ra.f1, &ra.prauc}) {
    CHECK(s->point >= 0.0);
    CHECK(s->point <= 1.0);
  }
  CHECK(ra.avg_med.point >= 0.0);

  // Deterministic per seed, invariant to input order.
  MetricsReport rb = bootstrap_evaluate(mixed, ddi, 200, 3);
  CHECK(ra.jaccard.samples == rb.jaccard.samples);
  std::vector<PatientEval> shuffled = mixed;
  std::reverse(shuffled.begin(), shuffled.end());
  MetricsReport rs = bootstrap_evaluate(shuffled, ddi, 200, 3);
  CHECK(ra.jaccard.samples == rs.jaccard.samples);
  CHECK(ra.prauc.samples == rs.prauc.samples);
  CHECK(ra.jaccard.point == rs.jaccard.point);
  MetricsReport rd = bootstrap_evaluate(mixed, ddi, 200, 4);
  CHECK(ra.jaccard.samples != rd.jaccard.samples);

  CHECK_THROWS_AS(bootstrap_evaluate({}, ddi, 1, 0), EmptyTestSet);
  CHECK_THROWS_AS(bootstrap_evaluate(mixed, ddi, 0, 0), ConfigError);
}
