#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mkmed/clinical.hpp"

namespace mkmed {

using MultiHot = std::vector<char>;

// Mean per-visit |pred & truth| / |pred | truth|; empty/empty counts as a
// perfect match, exactly one empty side as zero.
double jaccard_metric(const std::vector<MultiHot>& pred, const std::vector<MultiHot>& truth);

// Interacting fraction of unordered predicted pairs, pair counts summed over
// visits before dividing. mode "paper-literal" keeps the interacting
// predicted pairs in the numerator but divides by ground-truth pair counts.
double ddi_rate_metric(const std::vector<MultiHot>& pred, const std::vector<MultiHot>& truth,
                       const DDIMatrix& ddi, const std::string& mode = "standard");

// Mean per-visit harmonic F1 of set precision and recall (0 when both vanish).
double f1_metric(const std::vector<MultiHot>& pred, const std::vector<MultiHot>& truth);

// Mean per-visit area under the precision-recall step curve, medications
// ranked by descending score with ties broken toward the lower index.
// Visits without positives contribute 0.
double prauc_metric(const std::vector<Vec>& scores, const std::vector<MultiHot>& truth);

// Mean predicted-set cardinality.
double avg_med_metric(const std::vector<MultiHot>& pred);

// One target visit's model outputs next to its ground truth.
struct VisitEval {
  MultiHot pred;
  Vec scores;
  MultiHot truth;
};

struct PatientEval {
  std::string id;
  std::vector<VisitEval> visits;
};

struct MetricSummary {
  double point = 0.0;  // metric on the original, unresampled test set
  double mean = 0.0;
  double stdev = 0.0;  // sample standard deviation over resamples
  std::vector<double> samples;
};

struct MetricsReport {
  MetricSummary jaccard, ddi_rate, f1, prauc, avg_med;
};

// B patient-level resamples with replacement, each of original size, drawn
// from a per-sample derived seed. Canonicalizes patient order by id first so
// the report is invariant to input ordering.
MetricsReport bootstrap_evaluate(const std::vector<PatientEval>& patients,
                                 const DDIMatrix& ddi, int b_samples, std::uint64_t seed);

}  // namespace mkmed
