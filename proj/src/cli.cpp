#include "mkmed/cli.hpp"

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include "mkmed/checkpoint.hpp"
#include "mkmed/errors.hpp"
#include "mkmed/pipeline.hpp"
#include "mkmed/rng.hpp"

namespace mkmed {

using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  return out;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create directory " + dir);
}

// Vocabulary facts an encoder checkpoint must agree on to be loadable.
std::map<std::string, long long> encoder_vocab(const ModalityCorpus& corpus,
                                               const RunConfig& cfg) {
  return {{"dim", cfg.dim},
          {"gin_layers", cfg.gin_layers},
          {"text_vocab", text_vocab_size()},
          {"kg_entities", std::max(1, corpus.kg.n_entities)},
          {"kg_relations", std::max(1, corpus.kg.n_relations)}};
}

std::vector<std::pair<std::string, Mat>> encoder_blocks(EncoderSet& enc,
                                                        const Param& logtemp) {
  std::vector<std::pair<std::string, Mat>> blocks;
  for (Param* p : enc.all_params()) blocks.emplace_back(p->name, p->value);
  blocks.emplace_back(logtemp.name, logtemp.value);
  // z-scoring state is fitted, not trained; persist it alongside the weights
  blocks.emplace_back("prop.fit.mean", Mat(enc.prop.mean.transpose()));
  blocks.emplace_back("prop.fit.stdev", Mat(enc.prop.stdev.transpose()));
  Mat active(1, static_cast<int>(enc.prop.active.size()));
  for (size_t i = 0; i < enc.prop.active.size(); ++i)
    active(0, static_cast<int>(i)) = enc.prop.active[i] ? 1.0 : 0.0;
  blocks.emplace_back("prop.fit.active", active);
  return blocks;
}

void load_encoder_blocks(EncoderSet& enc, const Checkpoint& ck) {
  for (Param* p : enc.all_params()) {
    const Mat& m = ck.block(p->name);
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols())
      throw VocabMismatch("block '" + p->name + "' is " + std::to_string(m.rows()) + "x" +
                          std::to_string(m.cols()) + ", expected " +
                          std::to_string(p->value.rows()) + "x" +
                          std::to_string(p->value.cols()));
    p->value = m;
  }
  const Mat& mean = ck.block("prop.fit.mean");
  const Mat& stdev = ck.block("prop.fit.stdev");
  const Mat& active = ck.block("prop.fit.active");
  enc.prop.mean = mean.row(0).transpose();
  enc.prop.stdev = stdev.row(0).transpose();
  enc.prop.active.assign(static_cast<size_t>(active.cols()), 0);
  for (int i = 0; i < active.cols(); ++i)
    enc.prop.active[static_cast<size_t>(i)] = active(0, i) != 0.0 ? 1 : 0;
}

void check_vocab(const Checkpoint& ck, const std::map<std::string, long long>& expect) {
  for (const auto& [key, want] : expect) {
    auto it = ck.meta.vocab.find(key);
    if (it == ck.meta.vocab.end())
      throw VocabMismatch("checkpoint lacks vocab entry '" + key + "'");
    if (it->second != want)
      throw VocabMismatch("vocab '" + key + "' is " + std::to_string(it->second) +
                          ", corpus needs " + std::to_string(want));
  }
}

int count_ddi_pairs(const DDIMatrix& ddi) {
  int n = 0;
  for (int a = 0; a < ddi.size(); ++a)
    for (int b = a + 1; b < ddi.size(); ++b)
      if (ddi.m(a, b) != 0.0) ++n;
  return n;
}

}  // namespace

void cmd_generate(const CliOptions& opt) {
  SynthSpec spec = load_synth_spec(opt.config);
  if (opt.seed) spec.seed = *opt.seed;
  validate_spec(spec);
  ensure_dir(opt.out);

  CorpusBundle b;
  b.molecules = gen_molecules(spec);
  b.corpus = gen_modalities(b.molecules, spec.coverage, spec.seed);
  b.ddi = gen_ddi(spec);
  b.ehr = gen_ehr(spec);
  write_bundle(opt.out, b);

  int visits = 0;
  for (const PatientHistory& p : b.ehr.patients) visits += static_cast<int>(p.visits.size());
  CoverageReport cr = coverage_stats(b.corpus.records, kModalityOrder);
  std::cout << "molecules " << b.molecules.size() << "\n"
            << "medications " << b.ddi.size() << "\n"
            << "ddi_pairs " << count_ddi_pairs(b.ddi) << "\n"
            << "patients " << b.ehr.patients.size() << "\n"
            << "visits " << visits << "\n";
  for (size_t i = 0; i < cr.modalities.size(); ++i)
    std::cout << "coverage " << cr.modalities[i] << " " << cr.counts[i] << "/" << cr.total
              << "\n";
  std::cout << "intersection " << cr.full_intersection << "/" << cr.total << "\n";
}

void cmd_pretrain(const CliOptions& opt) {
  RunConfig cfg = load_run_config(opt.config);
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.mode != "rotating" && opt.mode != "intersection")
    throw ConfigError("mode must be rotating or intersection");
  CorpusBundle b = read_bundle(opt.data);
  ensure_dir(opt.out);

  EncoderSet enc = make_encoders(b.corpus, cfg);
  PretrainConfig pc;
  pc.epochs = cfg.pretrain_epochs;
  pc.lr = cfg.pretrain_lr;
  pc.batch = cfg.pretrain_batch;
  pc.modalities = kModalityOrder;
  pc.mode = opt.mode;
  pc.seed = cfg.seed;
  PretrainResult res = opt.mode == "intersection"
                           ? intersection_pretrain(b.corpus.records, enc, pc)
                           : pretrain(b.corpus.records, enc, pc);

  std::ofstream csv = open_out(opt.out + "/pretrain_loss.csv");
  csv << "epoch,loss\n";
  for (size_t e = 0; e < res.epoch_loss.size(); ++e)
    csv << e << "," << fmt(res.epoch_loss[e]) << "\n";

  CheckpointMeta meta;
  meta.kind = "pretrain";
  meta.config = config_to_map(cfg);
  meta.vocab = encoder_vocab(b.corpus, cfg);
  save_checkpoint(opt.out + "/pretrain.ckpt", meta, encoder_blocks(enc, res.logtemp));
  std::cout << "pretrain epochs " << res.epoch_loss.size() << " final_loss "
            << (res.epoch_loss.empty() ? "none" : fmt(res.epoch_loss.back())) << "\n";
}

void cmd_train(const CliOptions& opt) {
  RunConfig cfg = load_run_config(opt.config);
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.variant != "full" && opt.variant != "mol" && opt.variant != "pt" &&
      opt.variant != "pm")
    throw UnknownVariant("variant '" + opt.variant + "'");
  CorpusBundle b = read_bundle(opt.data);
  ensure_dir(opt.out);

  int n_meds = b.ddi.size();
  int n_diseases = static_cast<int>(b.ehr.rules.disease_meds.size());
  int n_procedures = static_cast<int>(b.ehr.rules.procedure_meds.size());

  Mat table;
  bool learnable = opt.variant == "mol";
  if (learnable) {
    Rng rng(derive_seed(cfg.seed, "med_table"));
    table = table_init(n_meds, cfg.dim, rng);
  } else {
    EncoderSet enc = make_encoders(b.corpus, cfg);
    if (!opt.checkpoint.empty()) {
      Checkpoint ck = load_checkpoint(opt.checkpoint);
      if (ck.meta.kind != "pretrain")
        throw CheckpointError("expected a pretrain checkpoint, got kind '" + ck.meta.kind + "'");
      check_vocab(ck, encoder_vocab(b.corpus, cfg));
      load_encoder_blocks(enc, ck);
    }
    table = build_med_table(b.corpus.records, n_meds, enc);
  }

  MedModel model = init_model(cfg, n_diseases, n_procedures, table, learnable);
  SplitIndices sp = split_patients(static_cast<int>(b.ehr.patients.size()), cfg.seed);
  std::vector<PatientHistory> tr, va;
  for (int i : sp.train) tr.push_back(b.ehr.patients[static_cast<size_t>(i)]);
  for (int i : sp.valid) va.push_back(b.ehr.patients[static_cast<size_t>(i)]);

  TrainLog log;
  train_model(model, tr, va, b.ddi, cfg, &log);

  std::ofstream csv = open_out(opt.out + "/train_loss.csv");
  csv << "epoch,loss,valid_jaccard,valid_ddi\n";
  for (size_t e = 0; e < log.train_loss.size(); ++e) {
    csv << e << "," << fmt(log.train_loss[e]);
    if (e < log.valid_jaccard.size())
      csv << "," << fmt(log.valid_jaccard[e]) << "," << fmt(log.valid_ddi[e]);
    else
      csv << ",,";
    csv << "\n";
  }

  CheckpointMeta meta;
  meta.kind = "train";
  meta.config = config_to_map(cfg);
  meta.vocab = {{"dim", cfg.dim},
                {"n_diseases", n_diseases},
                {"n_procedures", n_procedures},
                {"n_meds", n_meds}};
  std::vector<std::pair<std::string, Mat>> blocks;
  for (Param* p : model.penc.params()) blocks.emplace_back(p->name, p->value);
  blocks.emplace_back("med_table", model.med_table.value);
  save_checkpoint(opt.out + "/train.ckpt", meta, blocks);
  std::cout << "train best_epoch " << log.best_epoch << " valid_jaccard "
            << (log.valid_jaccard.empty() ? "none"
                                          : fmt(log.valid_jaccard[static_cast<size_t>(
                                                std::max(log.best_epoch, 0))]))
            << "\n";
}

void cmd_evaluate(const CliOptions& opt) {
  Checkpoint ck = load_checkpoint(opt.checkpoint);
  if (ck.meta.kind != "train")
    throw CheckpointError("expected a train checkpoint, got kind '" + ck.meta.kind + "'");
  RunConfig cfg = config_from_map(ck.meta.config);
  CorpusBundle b = read_bundle(opt.data);
  ensure_dir(opt.out);

  check_vocab(ck, {{"n_meds", b.ddi.size()},
                   {"n_diseases", static_cast<long long>(b.ehr.rules.disease_meds.size())},
                   {"n_procedures", static_cast<long long>(b.ehr.rules.procedure_meds.size())},
                   {"dim", cfg.dim}});

  MedModel model = init_model(cfg, static_cast<int>(b.ehr.rules.disease_meds.size()),
                              static_cast<int>(b.ehr.rules.procedure_meds.size()),
                              ck.block("med_table"), false);
  for (Param* p : model.penc.params()) {
    const Mat& m = ck.block(p->name);
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols())
      throw VocabMismatch("block '" + p->name + "' shape mismatch");
    p->value = m;
  }

  // same split the training run used; its seed rides in the config echo
  SplitIndices sp = split_patients(static_cast<int>(b.ehr.patients.size()), cfg.seed);
  std::vector<PatientHistory> te;
  for (int i : sp.test) te.push_back(b.ehr.patients[static_cast<size_t>(i)]);

  int b_samples = opt.bootstrap ? *opt.bootstrap : cfg.bootstrap;
  if (b_samples < 1) throw ConfigError("bootstrap must be >= 1");
  std::uint64_t seed = opt.seed ? *opt.seed : cfg.seed;

  std::vector<PatientEval> evals = evaluate_model(model, te);
  MetricsReport rep = bootstrap_evaluate(evals, b.ddi, b_samples, derive_seed(seed, "report"));

  int visits = 0;
  for (const PatientEval& pe : evals) visits += static_cast<int>(pe.visits.size());

  const std::pair<const char*, const MetricSummary*> rows[] = {
      {"jaccard", &rep.jaccard},
      {"ddi_rate", &rep.ddi_rate},
      {"f1", &rep.f1},
      {"prauc", &rep.prauc},
      {"avg_med", &rep.avg_med}};

  json j;
  j["b_samples"] = b_samples;
  j["n_patients"] = te.size();
  j["n_visits"] = visits;
  for (const auto& [name, s] : rows) {
    j["metrics"][name]["point"] = s->point;
    j["metrics"][name]["mean"] = s->mean;
    j["metrics"][name]["stdev"] = s->stdev;
  }
  open_out(opt.out + "/report.json") << j.dump(2) << "\n";

  std::ofstream csv = open_out(opt.out + "/report.csv");
  csv << "metric,point,mean,stdev\n";
  for (const auto& [name, s] : rows)
    csv << name << "," << fmt(s->point) << "," << fmt(s->mean) << "," << fmt(s->stdev) << "\n";

  for (const auto& [name, s] : rows)
    std::cout << name << " " << fmt(s->point) << " +- " << fmt(s->stdev) << "\n";
}

void cmd_experiment(const std::string& name, const CliOptions& opt) {
  RunConfig cfg = load_run_config(opt.config);
  if (opt.seed) cfg.seed = *opt.seed;
  if (name != "ablation" && name != "modality-sweep" && name != "alignment-comparison" &&
      name != "param-sweep")
    throw UnknownVariant("experiment '" + name + "'");
  CorpusBundle b = read_bundle(opt.data);
  ensure_dir(opt.out);

  std::ofstream csv = open_out(opt.out + "/" + name + ".csv");
  csv << "experiment,configuration,seed,metric,value,config_hash\n";
  auto row = [&](const std::string& config, std::uint64_t seed, const std::string& metric,
                 const std::string& value, const std::string& hash) {
    csv << name << "," << config << "," << seed << "," << metric << "," << value << ","
        << hash << "\n";
  };
  auto report_rows = [&](const std::string& config, std::uint64_t seed,
                         const MetricsReport& rep, const std::string& hash) {
    row(config, seed, "jaccard", fmt(rep.jaccard.point), hash);
    row(config, seed, "ddi_rate", fmt(rep.ddi_rate.point), hash);
    row(config, seed, "f1", fmt(rep.f1.point), hash);
    row(config, seed, "prauc", fmt(rep.prauc.point), hash);
    row(config, seed, "avg_med", fmt(rep.avg_med.point), hash);
  };

  for (int s = 0; s < cfg.n_seeds; ++s) {
    std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(s);
    RunConfig c = cfg;
    c.seed = seed;
    std::string hash = config_hash(c);
    if (name == "ablation") {
      for (const std::string& variant : {"full", "mol", "pt", "pm"}) {
        RunOutcome r = run_variant(variant, b, cfg, seed);
        report_rows(variant, seed, r.report, hash);
        row(variant, seed, "dispersion", fmt(r.table_dispersion), hash);
      }
    } else if (name == "modality-sweep") {
      for (const SweepPoint& pt : run_modality_sweep(b, cfg, seed)) {
        std::string config = "k=" + std::to_string(pt.k);
        report_rows(config, seed, pt.report, hash);
        row(config, seed, "dispersion", fmt(pt.table_dispersion), hash);
      }
    } else if (name == "alignment-comparison") {
      for (const AlignPoint& pt : run_alignment_comparison(b, cfg, seed)) {
        std::string kk = "k=" + std::to_string(pt.k);
        row(kk + ";mode=rotating", seed, "jaccard", fmt(pt.rotating_jaccard), hash);
        row(kk + ";mode=rotating", seed, "pool", std::to_string(pt.rotating_pool), hash);
        row(kk + ";mode=intersection", seed, "jaccard",
            pt.intersection_jaccard ? fmt(*pt.intersection_jaccard) : "", hash);
        row(kk + ";mode=intersection", seed, "pool", std::to_string(pt.intersection_pool),
            hash);
      }
    } else {
      for (const ParamPoint& pt : run_param_sweep(b, cfg, seed)) {
        RunConfig pc = c;
        pc.dim = pt.dim;
        pc.gin_layers = pt.gin_layers;
        row("dim=" + std::to_string(pt.dim) + ";layers=" + std::to_string(pt.gin_layers),
            seed, "jaccard", fmt(pt.jaccard), config_hash(pc));
      }
    }
  }
  std::cout << "experiment " << name << " written to " << opt.out << "/" << name << ".csv\n";
}

int cli_main(int argc, char** argv) {
  if (const char* threads = std::getenv("MKMED_THREADS")) {
    int n = std::atoi(threads);
    if (n > 0) Eigen::setNbThreads(n);
  }

  CLI::App app{"multimodal medication recommendation workbench"};
  app.require_subcommand(1);
  CliOptions opt;
  std::string experiment_name;

  CLI::App* generate = app.add_subcommand("generate", "synthesize a corpus bundle");
  generate->add_option("--config", opt.config, "synth spec file")->required();
  generate->add_option("--out", opt.out, "output directory");
  generate->add_option("--seed", opt.seed, "override the spec seed");

  CLI::App* pretrain = app.add_subcommand("pretrain", "contrastive encoder pre-training");
  pretrain->add_option("--config", opt.config, "run config file")->required();
  pretrain->add_option("--data", opt.data, "corpus bundle directory")->required();
  pretrain->add_option("--out", opt.out, "output directory");
  pretrain->add_option("--mode", opt.mode, "rotating or intersection")
      ->check(CLI::IsMember({"rotating", "intersection"}));
  pretrain->add_option("--seed", opt.seed, "override the config seed");

  CLI::App* train = app.add_subcommand("train", "train the recommendation model");
  train->add_option("--config", opt.config, "run config file")->required();
  train->add_option("--data", opt.data, "corpus bundle directory")->required();
  train->add_option("--out", opt.out, "output directory");
  train->add_option("--variant", opt.variant, "full, mol, pt, or pm")
      ->check(CLI::IsMember({"full", "mol", "pt", "pm"}));
  train->add_option("--checkpoint", opt.checkpoint, "pretrain checkpoint to start from");
  train->add_option("--seed", opt.seed, "override the config seed");

  CLI::App* evaluate = app.add_subcommand("evaluate", "score a trained model");
  evaluate->add_option("--data", opt.data, "corpus bundle directory")->required();
  evaluate->add_option("--checkpoint", opt.checkpoint, "train checkpoint")->required();
  evaluate->add_option("--out", opt.out, "output directory");
  evaluate->add_option("--bootstrap", opt.bootstrap, "bootstrap resamples");
  evaluate->add_option("--seed", opt.seed, "override the bootstrap seed");

  CLI::App* experiment = app.add_subcommand("experiment", "run a paper experiment");
  experiment->add_option("name", experiment_name, "experiment name")->required();
  experiment->add_option("--config", opt.config, "run config file")->required();
  experiment->add_option("--data", opt.data, "corpus bundle directory")->required();
  experiment->add_option("--out", opt.out, "output directory");
  experiment->add_option("--seed", opt.seed, "override the config seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (generate->parsed()) cmd_generate(opt);
    else if (pretrain->parsed()) cmd_pretrain(opt);
    else if (train->parsed()) cmd_train(opt);
    else if (evaluate->parsed()) cmd_evaluate(opt);
    else if (experiment->parsed()) cmd_experiment(experiment_name, opt);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const UnknownVariant& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NonFiniteLoss& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const EmptyIntersection& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const VocabMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace mkmed
