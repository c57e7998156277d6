#include "mkmed/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mkmed/errors.hpp"
#include "mkmed/objective.hpp"
#include "mkmed/rng.hpp"

namespace mkmed {

using ad::AdamW;

const std::vector<std::string> kSweepOrder = {"structure", "text", "image", "props", "kg"};

SplitIndices split_patients(int n_patients, std::uint64_t seed) {
  if (n_patients < 3) throw ConfigError("need at least 3 patients to split");
  std::vector<int> idx(static_cast<size_t>(n_patients));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(idx);
  SplitIndices sp;
  int n_train = 2 * n_patients / 3;
  int n_valid = n_patients / 6;
  sp.train.assign(idx.begin(), idx.begin() + n_train);
  sp.valid.assign(idx.begin() + n_train, idx.begin() + n_train + n_valid);
  sp.test.assign(idx.begin() + n_train + n_valid, idx.end());
  return sp;
}

EncoderSet make_encoders(const ModalityCorpus& corpus, const RunConfig& cfg) {
  return EncoderSet(cfg.seed, cfg.dim, cfg.gin_layers, text_vocab_size(),
                    std::max(1, corpus.kg.n_entities), std::max(1, corpus.kg.n_relations));
}

Mat build_med_table(const std::vector<MultimodalRecord>& records, int n_meds,
                    EncoderSet& enc) {
  if (static_cast<int>(records.size()) < n_meds)
    throw ConfigError("corpus smaller than the medication vocabulary");
  Mat table(n_meds, enc.dim);
  for (int i = 0; i < n_meds; ++i) {
    // one tape per molecule keeps peak memory flat
    Tape t;
    Val v = cross_modal_encode(t, records[static_cast<size_t>(i)].prepared, enc.cross);
    table.row(i) = t.value(v).row(0);
  }
  return table;
}

std::vector<Param*> MedModel::params() {
  std::vector<Param*> out = penc.params();
  if (learnable) out.push_back(&med_table);
  return out;
}

MedModel init_model(const RunConfig& cfg, int n_diseases, int n_procedures,
                    const Mat& med_table, bool learnable) {
  MedModel m;
  m.delta = cfg.delta;
  m.penc.init(derive_seed(cfg.seed, "patient"), n_diseases, n_procedures,
              static_cast<int>(med_table.rows()), cfg.dim);
  m.med_table = Param("med_table", med_table);
  m.learnable = learnable;
  return m;
}

namespace {

MultiHot multihot(const IndexVec& meds, int n_meds) {
  MultiHot hot(static_cast<size_t>(n_meds), 0);
  for (int m : meds) {
    if (m < 0 || m >= n_meds) throw IndexOutOfRange("medication index " + std::to_string(m));
    hot[static_cast<size_t>(m)] = 1;
  }
  return hot;
}

Mat multihot_row(const IndexVec& meds, int n_meds) {
  Mat row = Mat::Zero(1, n_meds);
  for (int m : meds) {
    if (m < 0 || m >= n_meds) throw IndexOutOfRange("medication index " + std::to_string(m));
    row(0, m) = 1.0;
  }
  return row;
}

void flatten_evals(const std::vector<PatientEval>& evals, std::vector<MultiHot>* preds,
                   std::vector<MultiHot>* truths) {
  for (const PatientEval& pe : evals)
    for (const VisitEval& ve : pe.visits) {
      preds->push_back(ve.pred);
      truths->push_back(ve.truth);
    }
}

}  // namespace

void train_model(MedModel& m, const std::vector<PatientHistory>& train,
                 const std::vector<PatientHistory>& valid, const DDIMatrix& ddi,
                 const RunConfig& cfg, TrainLog* log) {
  if (ddi.size() != m.penc.n_meds)
    throw VocabMismatch("interaction matrix is " + std::to_string(ddi.size()) +
                        " wide, model has " + std::to_string(m.penc.n_meds) + " medications");
  if (train.empty()) throw EmptyTestSet("no training patients");

  LossWeights w;
  w.beta = cfg.beta;
  w.gamma = cfg.gamma;
  w.ddi_target = cfg.ddi_target;
  w.controller = cfg.beta_controller;

  AdamW opt(cfg.train_lr, cfg.weight_decay);
  std::vector<Param*> params = m.params();

  double beta_epoch = cfg.beta;
  std::vector<Mat> best_values;
  double best_jaccard = -1.0;
  int best_epoch = -1;

  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.train_epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, "train.order", static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    for (int pi : order) {
      const PatientHistory& hist = train[static_cast<size_t>(pi)];
      Tape t;
      Val table = m.learnable ? t.leaf(m.med_table) : t.constant(m.med_table.value);
      Val acc;
      int n_visits = static_cast<int>(hist.visits.size());
      for (int tv = 1; tv <= n_visits; ++tv) {
        Val e_i = encode_history(t, hist, tv, m.penc, table);
        Val scores = predict_scores(t, e_i, m.penc);
        Mat truth = multihot_row(hist.visits[static_cast<size_t>(tv - 1)].meds, m.penc.n_meds);
        LossWeights we = w;
        we.beta = beta_epoch;
        Val visit_loss = combined_loss(t, scores, truth, ddi.m, we);
        acc = (tv == 1) ? visit_loss : ad::add(acc, visit_loss);
      }
      Val loss = ad::cmul(acc, 1.0 / n_visits);
      double lv = t.value(loss)(0, 0);
      if (!std::isfinite(lv))
        throw NonFiniteLoss("epoch " + std::to_string(epoch) + ", patient " + hist.id);
      loss_sum += lv;

      for (Param* p : params) p->zero_grad();
      t.backward(loss);
      opt.step(params);
    }
    if (log) log->train_loss.push_back(loss_sum / static_cast<double>(train.size()));

    if (!valid.empty()) {
      std::vector<PatientEval> evals = evaluate_model(m, valid);
      std::vector<MultiHot> preds, truths;
      flatten_evals(evals, &preds, &truths);
      double vj = jaccard_metric(preds, truths);
      double vd = ddi_rate_metric(preds, truths, ddi, "standard");
      if (log) {
        log->valid_jaccard.push_back(vj);
        log->valid_ddi.push_back(vd);
      }
      if (vj > best_jaccard) {
        best_jaccard = vj;
        best_epoch = epoch;
        best_values.clear();
        for (Param* p : params) best_values.push_back(p->value);
      }
      // retune the interaction weight from the observed rate, if enabled
      beta_epoch = beta_controller(vd, w);
    }
  }

  if (best_epoch >= 0) {
    for (size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
    if (log) log->best_epoch = best_epoch;
  } else if (log) {
    log->best_epoch = cfg.train_epochs - 1;
  }
}

std::vector<PatientEval> evaluate_model(MedModel& m,
                                        const std::vector<PatientHistory>& patients) {
  std::vector<PatientEval> out;
  out.reserve(patients.size());
  for (const PatientHistory& hist : patients) {
    PatientEval pe;
    pe.id = hist.id;
    int n_visits = static_cast<int>(hist.visits.size());
    for (int tv = 1; tv <= n_visits; ++tv) {
      Tape t;
      Val table = t.constant(m.med_table.value);
      Val e_i = encode_history(t, hist, tv, m.penc, table);
      Val scores = predict_scores(t, e_i, m.penc);
      const Mat& row = t.value(scores);
      VisitEval ve;
      ve.scores = row.row(0).transpose();
      ve.pred = threshold_select(row, m.delta);
      ve.truth = multihot(hist.visits[static_cast<size_t>(tv - 1)].meds, m.penc.n_meds);
      pe.visits.push_back(std::move(ve));
    }
    out.push_back(std::move(pe));
  }
  return out;
}

std::vector<PatientEval> frequency_baseline(const std::vector<PatientHistory>& train,
                                            const std::vector<PatientHistory>& test,
                                            int n_diseases, int n_meds, double delta) {
  std::vector<long long> disease_count(static_cast<size_t>(n_diseases), 0);
  Mat joint = Mat::Zero(n_diseases, n_meds);
  for (const PatientHistory& p : train)
    for (const Visit& v : p.visits)
      for (int d : v.diseases) {
        if (d < 0 || d >= n_diseases) throw IndexOutOfRange("disease index " + std::to_string(d));
        ++disease_count[static_cast<size_t>(d)];
        for (int m : v.meds) {
          if (m < 0 || m >= n_meds) throw IndexOutOfRange("medication index " + std::to_string(m));
          joint(d, m) += 1.0;
        }
      }
  Mat cond = Mat::Zero(n_diseases, n_meds);
  for (int d = 0; d < n_diseases; ++d)
    if (disease_count[static_cast<size_t>(d)] > 0)
      cond.row(d) = joint.row(d) / static_cast<double>(disease_count[static_cast<size_t>(d)]);

  std::vector<PatientEval> out;
  out.reserve(test.size());
  for (const PatientHistory& p : test) {
    PatientEval pe;
    pe.id = p.id;
    for (const Visit& v : p.visits) {
      VisitEval ve;
      ve.scores = Vec::Zero(n_meds);
      for (int d : v.diseases) {
        if (d < 0 || d >= n_diseases) throw IndexOutOfRange("disease index " + std::to_string(d));
        ve.scores = ve.scores.cwiseMax(cond.row(d).transpose());
      }
      ve.pred.assign(static_cast<size_t>(n_meds), 0);
      for (int m = 0; m < n_meds; ++m)
        if (ve.scores(m) >= delta) ve.pred[static_cast<size_t>(m)] = 1;
      ve.truth = multihot(v.meds, n_meds);
      pe.visits.push_back(std::move(ve));
    }
    out.push_back(std::move(pe));
  }
  return out;
}

std::vector<PatientEval> oracle_eval(const std::vector<PatientHistory>& patients,
                                     const EhrRules& rules, int n_meds) {
  std::vector<PatientEval> out;
  out.reserve(patients.size());
  for (const PatientHistory& p : patients) {
    PatientEval pe;
    pe.id = p.id;
    for (const Visit& v : p.visits) {
      VisitEval ve;
      ve.pred = oracle_predict(v, rules, n_meds);
      ve.scores = Vec::Zero(n_meds);
      for (int m = 0; m < n_meds; ++m) ve.scores(m) = ve.pred[static_cast<size_t>(m)] ? 1.0 : 0.0;
      ve.truth = multihot(v.meds, n_meds);
      pe.visits.push_back(std::move(ve));
    }
    out.push_back(std::move(pe));
  }
  return out;
}

namespace {

std::vector<PatientHistory> gather(const std::vector<PatientHistory>& all,
                                   const std::vector<int>& idx) {
  std::vector<PatientHistory> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(all[static_cast<size_t>(i)]);
  return out;
}

// The shared tail of every experiment arm: split, train, report.
RunOutcome run_downstream(CorpusBundle& data, const RunConfig& cfg, const Mat& table,
                          bool learnable, std::uint64_t seed) {
  int n_diseases = static_cast<int>(data.ehr.rules.disease_meds.size());
  int n_procedures = static_cast<int>(data.ehr.rules.procedure_meds.size());
  RunConfig c = cfg;
  c.seed = seed;
  MedModel model = init_model(c, n_diseases, n_procedures, table, learnable);
  SplitIndices sp = split_patients(static_cast<int>(data.ehr.patients.size()), seed);
  std::vector<PatientHistory> tr = gather(data.ehr.patients, sp.train);
  std::vector<PatientHistory> va = gather(data.ehr.patients, sp.valid);
  std::vector<PatientHistory> te = gather(data.ehr.patients, sp.test);

  RunOutcome out;
  train_model(model, tr, va, data.ddi, c, &out.log);
  std::vector<PatientEval> evals = evaluate_model(model, te);
  out.report = bootstrap_evaluate(evals, data.ddi, c.bootstrap, derive_seed(seed, "report"));
  out.table_dispersion = dispersion(model.med_table.value);
  return out;
}

PretrainConfig pretrain_config(const RunConfig& cfg, std::uint64_t seed,
                               const std::vector<std::string>& modalities) {
  PretrainConfig pc;
  pc.epochs = cfg.pretrain_epochs;
  pc.lr = cfg.pretrain_lr;
  pc.batch = cfg.pretrain_batch;
  pc.modalities = modalities;
  pc.seed = seed;
  return pc;
}

}  // namespace

RunOutcome run_variant(const std::string& variant, CorpusBundle& data, const RunConfig& cfg,
                       std::uint64_t seed) {
  if (variant != "full" && variant != "mol" && variant != "pt" && variant != "pm")
    throw UnknownVariant("variant '" + variant + "'");
  RunConfig c = cfg;
  c.seed = seed;
  int n_meds = data.ddi.size();

  Mat table;
  bool learnable = variant == "mol";
  if (learnable) {
    Rng rng(derive_seed(seed, "med_table"));
    table = table_init(n_meds, c.dim, rng);
  } else {
    EncoderSet enc = make_encoders(data.corpus, c);
    if (variant == "full") {
      pretrain(data.corpus.records, enc, pretrain_config(c, seed, kModalityOrder));
    } else if (variant == "pm") {
      pretrain(data.corpus.records, enc, pretrain_config(c, seed, {"structure"}));
    }
    table = build_med_table(data.corpus.records, n_meds, enc);
  }
  return run_downstream(data, c, table, learnable, seed);
}

std::vector<SweepPoint> run_modality_sweep(CorpusBundle& data, const RunConfig& cfg,
                                           std::uint64_t seed) {
  // The rotating schedule visits one modality per epoch, so a fixed epoch
  // budget would give small k several times the per-modality passes of
  // large k. Scaling the budget with k holds passes-per-modality constant
  // and leaves modality count as the only variable.
  const int n_all = static_cast<int>(kSweepOrder.size());
  std::vector<SweepPoint> out;
  for (int k = 0; k <= n_all; ++k) {
    RunConfig c = cfg;
    c.seed = seed;
    c.pretrain_epochs = cfg.pretrain_epochs * k / n_all;
    EncoderSet enc = make_encoders(data.corpus, c);
    if (k > 0 && c.pretrain_epochs > 0) {
      std::vector<std::string> subset(kSweepOrder.begin(), kSweepOrder.begin() + k);
      pretrain(data.corpus.records, enc, pretrain_config(c, seed, subset));
    }
    Mat table = build_med_table(data.corpus.records, data.ddi.size(), enc);
    RunOutcome r = run_downstream(data, c, table, false, seed);
    out.push_back({k, r.table_dispersion, r.report});
  }
  return out;
}

std::vector<AlignPoint> run_alignment_comparison(CorpusBundle& data, const RunConfig& cfg,
                                                 std::uint64_t seed) {
  std::vector<AlignPoint> out;
  for (int k = 1; k <= static_cast<int>(kSweepOrder.size()); ++k) {
    std::vector<std::string> subset(kSweepOrder.begin(), kSweepOrder.begin() + k);
    AlignPoint pt;
    pt.k = k;
    for (const MultimodalRecord& r : data.corpus.records) {
      bool any = false, all = true;
      for (const std::string& m : subset) {
        bool has = has_modality(r, m);
        any = any || has;
        all = all && has;
      }
      pt.rotating_pool += any ? 1 : 0;
      pt.intersection_pool += all ? 1 : 0;
    }

    RunConfig c = cfg;
    c.seed = seed;
    {
      EncoderSet enc = make_encoders(data.corpus, c);
      pretrain(data.corpus.records, enc, pretrain_config(c, seed, subset));
      Mat table = build_med_table(data.corpus.records, data.ddi.size(), enc);
      pt.rotating_jaccard = run_downstream(data, c, table, false, seed).report.jaccard.point;
    }
    try {
      EncoderSet enc = make_encoders(data.corpus, c);
      intersection_pretrain(data.corpus.records, enc, pretrain_config(c, seed, subset));
      Mat table = build_med_table(data.corpus.records, data.ddi.size(), enc);
      pt.intersection_jaccard = run_downstream(data, c, table, false, seed).report.jaccard.point;
    } catch (const EmptyIntersection&) {
      pt.intersection_jaccard.reset();
    }
    out.push_back(std::move(pt));
  }
  return out;
}

std::vector<ParamPoint> run_param_sweep(CorpusBundle& data, const RunConfig& cfg,
                                        std::uint64_t seed) {
  static const int kDims[] = {32, 64, 128, 256};
  static const int kLayers[] = {2, 3, 4, 5};
  std::vector<ParamPoint> out;
  for (int dim : kDims)
    for (int layers : kLayers) {
      RunConfig c = cfg;
      c.dim = dim;
      c.gin_layers = layers;
      RunOutcome r = run_variant("full", data, c, seed);
      out.push_back({dim, layers, r.report.jaccard.point});
    }
  return out;
}

}  // namespace mkmed
