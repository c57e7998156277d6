#include "mkmed/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mkmed/errors.hpp"
#include "mkmed/rng.hpp"

namespace mkmed {

namespace {

void check_paired(const std::vector<MultiHot>& a, const std::vector<MultiHot>& b,
                  const char* where) {
  if (a.size() != b.size())
    throw ShapeMismatch(std::string(where) + ": visit counts differ");
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i].size() != b[i].size())
      throw ShapeMismatch(std::string(where) + ": vector widths differ at visit " +
                          std::to_string(i));
}

int popcount(const MultiHot& v) {
  int n = 0;
  for (char c : v) n += (c != 0);
  return n;
}

}  // namespace

double jaccard_metric(const std::vector<MultiHot>& pred, const std::vector<MultiHot>& truth) {
  check_paired(pred, truth, "jaccard_metric");
  if (pred.empty()) return 0.0;
  double sum = 0.0;
  for (size_t t = 0; t < pred.size(); ++t) {
    int inter = 0, uni = 0;
    for (size_t m = 0; m < pred[t].size(); ++m) {
      bool p = pred[t][m] != 0, g = truth[t][m] != 0;
      inter += (p && g);
      uni += (p || g);
    }
    sum += uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
  }
  return sum / static_cast<double>(pred.size());
}

double ddi_rate_metric(const std::vector<MultiHot>& pred, const std::vector<MultiHot>& truth,
                       const DDIMatrix& ddi, const std::string& mode) {
  if (mode != "standard" && mode != "paper-literal")
    throw UnknownVariant("ddi_rate_metric: mode " + mode);
  check_paired(pred, truth, "ddi_rate_metric");
  validate_ddi(ddi.m);
  long long hits = 0, denom = 0;
  for (size_t t = 0; t < pred.size(); ++t) {
    if (static_cast<long long>(pred[t].size()) != ddi.m.rows())
      throw ShapeMismatch("ddi_rate_metric: vector width vs interaction matrix");
    IndexVec on;
    for (size_t m = 0; m < pred[t].size(); ++m)
      if (pred[t][m]) on.push_back(static_cast<int>(m));
    for (size_t i = 0; i < on.size(); ++i)
      for (size_t j = i + 1; j < on.size(); ++j)
        hits += ddi.m(on[i], on[j]) > 0.5;
    long long k = static_cast<long long>(on.size());
    if (mode == "standard") {
      denom += k * (k - 1) / 2;
    } else {
      long long g = popcount(truth[t]);
      denom += g * (g - 1) / 2;
    }
  }
  return denom == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(denom);
}

double f1_metric(const std::vector<MultiHot>& pred, const std::vector<MultiHot>& truth) {
  check_paired(pred, truth, "f1_metric");
  if (pred.empty()) return 0.0;
  double sum = 0.0;
  for (size_t t = 0; t < pred.size(); ++t) {
    int tp = 0;
    for (size_t m = 0; m < pred[t].size(); ++m) tp += (pred[t][m] && truth[t][m]);
    int np = popcount(pred[t]), ng = popcount(truth[t]);
    double prec = np > 0 ? static_cast<double>(tp) / np : 0.0;
    double rec = ng > 0 ? static_cast<double>(tp) / ng : 0.0;
    sum += prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
  }
  return sum / static_cast<double>(pred.size());
}

double prauc_metric(const std::vector<Vec>& scores, const std::vector<MultiHot>& truth) {
  if (scores.size() != truth.size()) throw ShapeMismatch("prauc_metric: visit counts differ");
  if (scores.empty()) return 0.0;
  double sum = 0.0;
  for (size_t t = 0; t < scores.size(); ++t) {
    int n = static_cast<int>(scores[t].size());
    if (n != static_cast<int>(truth[t].size()))
      throw ShapeMismatch("prauc_metric: vector widths differ at visit " + std::to_string(t));
    int positives = popcount(truth[t]);
    if (positives == 0) continue;
    IndexVec order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      if (scores[t](a) != scores[t](b)) return scores[t](a) > scores[t](b);
      return a < b;
    });
    int tp = 0;
    double auc = 0.0, prev_recall = 0.0;
    for (int k = 0; k < n; ++k) {
      tp += truth[t][static_cast<size_t>(order[static_cast<size_t>(k)])] != 0;
      double precision = static_cast<double>(tp) / (k + 1);
      double recall = static_cast<double>(tp) / positives;
      auc += precision * (recall - prev_recall);
      prev_recall = recall;
    }
    sum += auc;
  }
  return sum / static_cast<double>(scores.size());
}

double avg_med_metric(const std::vector<MultiHot>& pred) {
  if (pred.empty()) return 0.0;
  double sum = 0.0;
  for (const MultiHot& v : pred) sum += popcount(v);
  return sum / static_cast<double>(pred.size());
}

namespace {

struct Flattened {
  std::vector<MultiHot> pred, truth;
  std::vector<Vec> scores;
};

Flattened flatten(const std::vector<const PatientEval*>& sample) {
  Flattened f;
  for (const PatientEval* p : sample) {
    for (const VisitEval& v : p->visits) {
      f.pred.push_back(v.pred);
      f.truth.push_back(v.truth);
      f.scores.push_back(v.scores);
    }
  }
  return f;
}

void summarize(MetricSummary& s) {
  bool constant = true;
  for (double x : s.samples) constant = constant && x == s.samples.front();
  if (constant) {  // exact-zero spread; the mean-rounding path would leak ulps
    s.mean = s.samples.front();
    s.stdev = 0.0;
    return;
  }
  double mean = 0.0;
  for (double x : s.samples) mean += x;
  mean /= static_cast<double>(s.samples.size());
  double var = 0.0;
  for (double x : s.samples) var += (x - mean) * (x - mean);
  s.mean = mean;
  s.stdev = std::sqrt(var / static_cast<double>(s.samples.size() - 1));
}

}  // namespace

MetricsReport bootstrap_evaluate(const std::vector<PatientEval>& patients,
                                 const DDIMatrix& ddi, int b_samples, std::uint64_t seed) {
  if (patients.empty()) throw EmptyTestSet("bootstrap_evaluate: no test patients");
  if (b_samples < 1) throw ConfigError("bootstrap_evaluate: b_samples must be >= 1");

  // Canonical order: results must not depend on how the caller sorted input.
  std::vector<const PatientEval*> canon;
  for (const PatientEval& p : patients) canon.push_back(&p);
  std::sort(canon.begin(), canon.end(),
            [](const PatientEval* a, const PatientEval* b) { return a->id < b->id; });

  MetricsReport rep;
  auto compute = [&](const std::vector<const PatientEval*>& sample, bool point) {
    Flattened f = flatten(sample);
    double j = jaccard_metric(f.pred, f.truth);
    double d = ddi_rate_metric(f.pred, f.truth, ddi, "standard");
    double f1 = f1_metric(f.pred, f.truth);
    double pr = prauc_metric(f.scores, f.truth);
    double am = avg_med_metric(f.pred);
    if (point) {
      rep.jaccard.point = j;
      rep.ddi_rate.point = d;
      rep.f1.point = f1;
      rep.prauc.point = pr;
      rep.avg_med.point = am;
    } else {
      rep.jaccard.samples.push_back(j);
      rep.ddi_rate.samples.push_back(d);
      rep.f1.samples.push_back(f1);
      rep.prauc.samples.push_back(pr);
      rep.avg_med.samples.push_back(am);
    }
  };

  compute(canon, true);
  std::size_t n = canon.size();
  for (int b = 0; b < b_samples; ++b) {
    Rng rng(derive_seed(seed, "bootstrap", static_cast<std::uint64_t>(b)));
    std::vector<const PatientEval*> sample;
    sample.reserve(n);
    for (std::size_t i = 0; i < n; ++i) sample.push_back(canon[rng.below(n)]);
    compute(sample, false);
  }
  for (MetricSummary* s : {&rep.jaccard, &rep.ddi_rate, &rep.f1, &rep.prauc, &rep.avg_med})
    summarize(*s);
  return rep;
}

}  // namespace mkmed
