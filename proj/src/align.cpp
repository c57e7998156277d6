#include "mkmed/align.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mkmed {

using namespace ad;

const std::vector<std::string> kModalityOrder = {"image", "text", "structure", "props",
                                                 "kg"};

bool has_modality(const MultimodalRecord& r, const std::string& modality) {
  if (modality == "image") return r.image.has_value();
  if (modality == "text") return r.text.has_value();
  if (modality == "structure") return r.conformer.has_value();
  if (modality == "props") return r.props.has_value();
  if (modality == "kg") return r.kg_id.has_value();
  throw UnknownVariant("has_modality: " + modality);
}

double CoverageProfile::get(const std::string& modality) const {
  if (modality == "image") return image;
  if (modality == "text") return text;
  if (modality == "structure") return structure;
  if (modality == "props") return props;
  if (modality == "kg") return kg;
  throw UnknownVariant("CoverageProfile::get: " + modality);
}

Param make_temperature() {
  return Param("align.logtemp", Mat::Constant(1, 1, std::log(1.0 / 0.07)));
}

Val normalize_rows(Tape& t, Val x) {
  const Mat& v = t.value(x);
  for (int i = 0; i < v.rows(); ++i)
    if (v.row(i).norm() < 1e-12)
      throw ZeroNormRow("normalize_rows: row " + std::to_string(i));
  return scale_rows(x, rsqrt(row_sum(square(x))));
}

Val contrastive_loss(Tape& t, Val e_c, Val e_o, Val logtemp) {
  const Mat& a = t.value(e_c);
  const Mat& b = t.value(e_o);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch("contrastive_loss: operand shapes");
  Val sim = matmul(normalize_rows(t, e_c), transpose(normalize_rows(t, e_o)));
  Val scaled = scale_by(sim, clamp_max(exp_v(logtemp), 100.0));
  return cmul(add(nll_diagonal(scaled), nll_diagonal(transpose(scaled))), 0.5);
}

// ---- scheduling ----

namespace {

std::vector<ScheduledBatch> schedule_pools(
    const std::map<std::string, IndexVec>& pools,
    const std::vector<std::string>& order, int batch, std::uint64_t seed, int epoch) {
  std::map<std::string, std::vector<IndexVec>> per_modality;
  for (const std::string& m : order) {
    IndexVec pool = pools.at(m);
    if (static_cast<int>(pool.size()) < 2)
      throw ModalityUnderfilled("schedule: modality " + m + " has " +
                                std::to_string(pool.size()) + " records");
    int eff = std::min<int>(batch, static_cast<int>(pool.size()));
    Rng rng(derive_seed(seed, "schedule." + m, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(pool);
    std::vector<IndexVec> batches;
    for (size_t at = 0; at < pool.size(); at += static_cast<size_t>(eff)) {
      size_t end = std::min(pool.size(), at + static_cast<size_t>(eff));
      if (end - at < 2) break;  // a 1-row remainder has no negatives
      batches.emplace_back(pool.begin() + static_cast<long>(at),
                           pool.begin() + static_cast<long>(end));
    }
    per_modality[m] = std::move(batches);
  }
  size_t max_batches = 0;
  for (auto& [m, bs] : per_modality) max_batches = std::max(max_batches, bs.size());

  std::vector<ScheduledBatch> out;
  for (size_t b = 0; b < max_batches; ++b)
    for (const std::string& m : order)
      if (b < per_modality[m].size())
        out.push_back(ScheduledBatch{m, std::move(per_modality[m][b])});
  return out;
}

std::vector<std::string> ordered_subset(const std::vector<std::string>& subset) {
  std::vector<std::string> order;
  for (const std::string& m : kModalityOrder)
    if (std::find(subset.begin(), subset.end(), m) != subset.end()) order.push_back(m);
  if (order.size() != subset.size())
    throw UnknownVariant("pretrain: unknown modality in config subset");
  if (order.empty()) throw UnknownVariant("pretrain: empty modality subset");
  return order;
}

}  // namespace

std::vector<ScheduledBatch> rotating_schedule(const std::vector<MultimodalRecord>& records,
                                              const PretrainConfig& cfg, int epoch) {
  std::vector<std::string> order = ordered_subset(cfg.modalities);
  std::map<std::string, IndexVec> pools;
  for (const std::string& m : order) {
    IndexVec pool;
    for (size_t i = 0; i < records.size(); ++i)
      if (has_modality(records[i], m)) pool.push_back(static_cast<int>(i));
    pools[m] = std::move(pool);
  }
  return schedule_pools(pools, order, cfg.batch, cfg.seed, epoch);
}

// ---- training ----

Val modality_encode(Tape& t, const MultimodalRecord& r, const std::string& modality,
                    EncoderSet& enc) {
  if (modality == "image") return vit_encode(t, *r.image, enc.vit);
  if (modality == "text") return text_encode(t, *r.text, enc.text);
  if (modality == "structure") return gvp_encode(t, *r.conformer, r.graph, enc.gvp);
  if (modality == "props") return prop_encode(t, *r.props, enc.prop);
  if (modality == "kg") return gather_rows(t.leaf(enc.kg.entities), {*r.kg_id});
  throw UnknownVariant("modality_encode: " + modality);
}

namespace {

PretrainResult pretrain_core(std::vector<MultimodalRecord>& records, EncoderSet& enc,
                             const PretrainConfig& cfg, bool intersection) {
  std::vector<std::string> order = ordered_subset(cfg.modalities);

  std::vector<MultimodalRecord>* pool = &records;
  std::vector<MultimodalRecord> inter;
  if (intersection) {
    for (const MultimodalRecord& r : records) {
      bool all = true;
      for (const std::string& m : order) all = all && has_modality(r, m);
      if (all) inter.push_back(r);
    }
    if (static_cast<int>(inter.size()) < 2)
      throw EmptyIntersection("intersection_pretrain: " + std::to_string(inter.size()) +
                              " records carry all modalities");
    pool = &inter;
  }

  PretrainResult result;
  result.logtemp = make_temperature();

  // Property z-scoring is a corpus statistic; pin it to the training pool.
  if (cfg.epochs > 0 &&
      std::find(order.begin(), order.end(), "props") != order.end()) {
    std::vector<PropertyVector> pv;
    for (const MultimodalRecord& r : *pool)
      if (r.props) pv.push_back(*r.props);
    if (!pv.empty()) enc.prop.fit(pv);
  }

  AdamW opt_shared(cfg.lr);  // cross-modal encoder + temperature, every step
  std::map<std::string, AdamW> opt_modality;
  for (const std::string& m : order) opt_modality.emplace(m, AdamW(cfg.lr));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<ScheduledBatch> schedule = rotating_schedule(*pool, cfg, epoch);
    double epoch_sum = 0.0;
    int steps = 0;
    for (const ScheduledBatch& batch : schedule) {
      Tape t;
      std::vector<Val> c_rows, o_rows;
      for (int idx : batch.records) {
        MultimodalRecord& r = (*pool)[static_cast<size_t>(idx)];
        c_rows.push_back(cross_modal_encode(t, r.prepared, enc.cross));
        o_rows.push_back(modality_encode(t, r, batch.modality, enc));
      }
      Val loss = contrastive_loss(t, concat_rows(c_rows), concat_rows(o_rows),
                                  t.leaf(result.logtemp));
      double lv = t.value(loss)(0, 0);
      if (!std::isfinite(lv))
        throw NonFiniteLoss("pretrain: epoch " + std::to_string(epoch) + " modality " +
                            batch.modality + " batch of " +
                            std::to_string(batch.records.size()));

      std::vector<Param*> shared = enc.cross_params();
      shared.push_back(&result.logtemp);
      std::vector<Param*> active;
      if (cfg.joint) {
        for (const std::string& m : order)
          for (Param* p : enc.modality_params(m)) active.push_back(p);
      } else {
        active = enc.modality_params(batch.modality);
      }
      for (Param* p : shared) p->zero_grad();
      for (Param* p : active) p->zero_grad();
      t.backward(loss);
      opt_shared.step(shared);
      if (cfg.joint) {
        for (const std::string& m : order) opt_modality.at(m).step(enc.modality_params(m));
      } else {
        opt_modality.at(batch.modality).step(active);
      }

      epoch_sum += lv;
      ++steps;
    }
    result.epoch_loss.push_back(steps > 0 ? epoch_sum / steps : 0.0);
  }
  return result;
}

}  // namespace

PretrainResult pretrain(std::vector<MultimodalRecord>& records, EncoderSet& enc,
                        const PretrainConfig& cfg) {
  return pretrain_core(records, enc, cfg, false);
}

PretrainResult intersection_pretrain(std::vector<MultimodalRecord>& records,
                                     EncoderSet& enc, const PretrainConfig& cfg) {
  return pretrain_core(records, enc, cfg, true);
}

// ---- diagnostics ----

CoverageReport coverage_stats(const std::vector<MultimodalRecord>& records,
                              const std::vector<std::string>& modalities) {
  std::vector<std::string> order = ordered_subset(modalities);
  CoverageReport rep;
  rep.total = static_cast<int>(records.size());
  rep.modalities = order;
  int n = static_cast<int>(order.size());
  rep.counts.assign(static_cast<size_t>(n), 0);
  rep.pairwise.assign(static_cast<size_t>(n), std::vector<int>(static_cast<size_t>(n), 0));

  for (const MultimodalRecord& r : records) {
    std::vector<char> has(static_cast<size_t>(n), 0);
    bool all = true;
    for (int i = 0; i < n; ++i) {
      has[static_cast<size_t>(i)] = has_modality(r, order[static_cast<size_t>(i)]) ? 1 : 0;
      all = all && has[static_cast<size_t>(i)];
      rep.counts[static_cast<size_t>(i)] += has[static_cast<size_t>(i)];
    }
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (has[static_cast<size_t>(i)] && has[static_cast<size_t>(j)])
          rep.pairwise[static_cast<size_t>(i)][static_cast<size_t>(j)] += 1;
    if (all) rep.full_intersection += 1;
  }
  rep.ratio = rep.total > 0 ? static_cast<double>(rep.full_intersection) / rep.total : 0.0;
  return rep;
}

double dispersion(const Mat& embeddings) {
  int n = static_cast<int>(embeddings.rows());
  if (n < 2) throw ShapeMismatch("dispersion: needs at least two rows");
  std::vector<RowVec> unit(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double norm = embeddings.row(i).norm();
    if (norm < 1e-12) throw ZeroNormRow("dispersion: row " + std::to_string(i));
    unit[static_cast<size_t>(i)] = embeddings.row(i) / norm;
  }
  double sum = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      sum += 1.0 - unit[static_cast<size_t>(i)].dot(unit[static_cast<size_t>(j)]);
  return sum / (0.5 * n * (n - 1));
}

double retrieval_accuracy(const Mat& queries, const Mat& keys, int k) {
  if (k < 1) throw ConfigError("retrieval_accuracy: k must be >= 1");
  if (queries.rows() != keys.rows() || queries.cols() != keys.cols())
    throw ShapeMismatch("retrieval_accuracy: query/key shapes differ");
  int n = static_cast<int>(queries.rows());
  Mat q = queries, d = keys;
  for (int i = 0; i < n; ++i) {
    double nq = q.row(i).norm(), nd = d.row(i).norm();
    if (nq < 1e-12 || nd < 1e-12) throw ZeroNormRow("retrieval_accuracy");
    q.row(i) /= nq;
    d.row(i) /= nd;
  }
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    Vec sims = d * q.row(i).transpose();
    double own = sims(i);
    int rank = 1;  // ties broken toward the lower key index
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      if (sims(j) > own || (sims(j) == own && j < i)) ++rank;
    }
    if (rank <= k) ++hits;
  }
  return static_cast<double>(hits) / n;
}

double retrieval_eval(std::vector<MultimodalRecord>& records, EncoderSet& enc,
                      const std::string& modality, int k) {
  IndexVec pool;
  for (size_t i = 0; i < records.size(); ++i)
    if (has_modality(records[static_cast<size_t>(i)], modality))
      pool.push_back(static_cast<int>(i));
  int n = static_cast<int>(pool.size());
  if (n < 2) throw ModalityUnderfilled("retrieval_eval: pool of " + std::to_string(n));

  Mat cross(n, enc.dim), obs(n, enc.dim);
  for (int i = 0; i < n; ++i) {
    MultimodalRecord& r = records[static_cast<size_t>(pool[static_cast<size_t>(i)])];
    Tape t;
    cross.row(i) = t.value(cross_modal_encode(t, r.prepared, enc.cross));
    obs.row(i) = t.value(modality_encode(t, r, modality, enc));
  }
  return retrieval_accuracy(obs, cross, k);
}

}  // namespace mkmed
