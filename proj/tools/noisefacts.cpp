// noisefacts: contextual knowledge diffusion at desk scale.
//
// Subcommands: pretrain-embedder, train, generate, evaluate, webnlg-score,
// inspect-schedule. Exit codes: 0 success, 2 usage/input error, 3 numeric
// failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>

#include "noisefacts/corpus.hpp"
#include "noisefacts/diffuser.hpp"
#include "noisefacts/embedder.hpp"
#include "noisefacts/entitypipe.hpp"
#include "noisefacts/evalmetrics.hpp"
#include "noisefacts/runconfig.hpp"
#include "noisefacts/schedule.hpp"

namespace fs = std::filesystem;
using namespace noisefacts;

namespace {

using Scalar = float;  // 32-bit train mode throughout the CLI

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- checkpoint directory helpers ----

void save_embedder_dir(const fs::path& dir, const Embedder<Scalar>& em,
                       const RelationCatalog& catalog, const std::string& mode,
                       const PretrainReport& rep, const RunConfig& rc) {
  save_checkpoint(dir, em.ps, em.cfg);
  {
    std::ofstream f(dir / "vocab.json", std::ios::binary);
    f << em.vocab.to_json().dump(2) << "\n";
  }
  {
    std::ofstream f(dir / "catalog.json", std::ios::binary);
    f << catalog.to_json().dump(2) << "\n";
  }
  {
    nlohmann::ordered_json meta;
    meta["kind"] = "embedder";
    meta["mode"] = mode;
    std::ofstream f(dir / "meta.json", std::ios::binary);
    f << meta.dump(2) << "\n";
  }
  {
    nlohmann::ordered_json j;
    j["n_items"] = rep.n_items;
    j["initial_loss"] = rep.initial_loss;
    j["epoch_loss"] = rep.epoch_loss;
    j["reconstruction_rate"] = rep.reconstruction_rate;
    j["eok_reconstruction_rate"] = rep.eok_reconstruction_rate;
    std::ofstream f(dir / "report.json", std::ios::binary);
    f << j.dump(2) << "\n";
  }
  write_runconfig_sidecar(dir, rc);
}

struct LoadedEmbedder {
  Embedder<Scalar> em;
  RelationCatalog catalog;
  std::string mode;
};

LoadedEmbedder load_embedder_dir(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json"))
    throw UsageError("embedder checkpoint not found at " + dir.string());
  LoadedEmbedder out;
  ParameterStore<Scalar> ps;
  ModelConfig cfg = load_checkpoint(dir, ps);
  {
    std::ifstream f(dir / "vocab.json");
    if (!f) throw UsageError("missing vocab.json in " + dir.string());
    out.em.vocab = Vocabulary::from_json(nlohmann::json::parse(f));
  }
  {
    std::ifstream f(dir / "catalog.json");
    if (!f) throw UsageError("missing catalog.json in " + dir.string());
    out.catalog = RelationCatalog::from_json(nlohmann::json::parse(f));
  }
  {
    std::ifstream f(dir / "meta.json");
    if (f) {
      auto meta = nlohmann::json::parse(f);
      out.mode = meta.value("mode", "fact");
    } else {
      out.mode = "fact";
    }
  }
  out.em.cfg = cfg;
  out.em.ps = std::move(ps);
  out.em.enc = TextEncoder<Scalar>{cfg, "embed.enc", &out.em.ps};
  out.em.dec = SeqDecoder<Scalar>{cfg, "embed.dec", &out.em.ps};
  out.em.dec.vocab_size = out.em.vocab.size();
  out.em.ps.freeze();
  return out;
}

void save_diffuser_dir(const fs::path& dir, const Diffuser<Scalar>& diff) {
  save_checkpoint(dir, diff.ps, diff.cfg);
}

Diffuser<Scalar> load_diffuser_dir(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json"))
    throw UsageError("model checkpoint not found at " + dir.string());
  Diffuser<Scalar> diff;
  diff.cfg = load_checkpoint(dir, diff.ps);
  diff.ctx_enc = TextEncoder<Scalar>{diff.cfg, "ctx", &diff.ps};
  diff.den = Denoiser<Scalar>{diff.cfg, "den", &diff.ps};
  return diff;
}

void write_loss_csv(const fs::path& path, const TrainStats& stats) {
  std::ofstream f(path, std::ios::binary);
  f << "step,mse,anchor,total\n";
  for (const auto& row : stats.log)
    f << row.step << "," << row.mse << "," << row.anchor << "," << row.total << "\n";
}

void write_schedule_json(const fs::path& path, const NoiseSchedule& sched) {
  std::ofstream f(path, std::ios::binary);
  f << sched.to_json().dump() << "\n";
}

NoiseSchedule load_schedule_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("missing schedule dump: " + path.string());
  return NoiseSchedule::from_json(nlohmann::json::parse(f));
}

TrainConfig make_train_config(const RunConfig& rc, const std::string& role) {
  TrainConfig tc;
  tc.steps = rc.steps;
  tc.batch = rc.batch;
  tc.gamma = rc.resolved_gamma();
  tc.optim.lr = rc.lr;
  tc.optim.warmup = rc.warmup;
  tc.optim.total = rc.total_steps;
  tc.optim.weight_decay = rc.weight_decay;
  tc.seed = Rng::derive(rc.seed, role);
  tc.adapt_every = rc.adapt_every;
  tc.log_every = rc.log_every;
  return tc;
}

OptimConfig make_pretrain_optim(const RunConfig& rc, int64_t n_updates) {
  OptimConfig oc;
  oc.lr = rc.pretrain_lr;
  oc.weight_decay = rc.pretrain_weight_decay;
  oc.warmup = std::max<int64_t>(1, std::min<int64_t>(rc.warmup, n_updates / 10));
  oc.total = std::max<int64_t>(rc.total_steps, n_updates);
  return oc;
}

RelationCatalog catalog_from_flags(const std::string& relations_file,
                                   bool open_catalog) {
  if (open_catalog) return RelationCatalog::open_rdf();
  if (!relations_file.empty())
    return RelationCatalog::from_json_file(relations_file);
  return RelationCatalog::atomic();
}

std::vector<double> parse_thresholds(const std::string& spec) {
  std::vector<double> out;
  std::string cur;
  for (char c : spec + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(std::stod(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  return out;
}

// ---- generation file io ----

struct GenerationFile {
  std::vector<std::string> contexts;
  std::vector<std::vector<FactTriple>> facts;
};

GenerationFile read_generations(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot read generations: " + path.string());
  GenerationFile out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (normalize_ws(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      out.contexts.push_back(j.at("context").get<std::string>());
      std::vector<FactTriple> fs_;
      for (const auto& fj : j.at("facts"))
        fs_.push_back({fj.at("head").get<std::string>(),
                       fj.at("relation").get<std::string>(),
                       fj.at("tail").get<std::string>()});
      out.facts.push_back(std::move(fs_));
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(path.string() + " line " + std::to_string(line_no) + ": " +
                       e.what());
    }
  }
  return out;
}

// ---- subcommands ----

int cmd_pretrain_embedder(const RunConfig& rc, const std::string& kg_path,
                          const std::string& narratives_path,
                          const std::string& relations_path, const fs::path& out,
                          const std::string& mode) {
  RelationCatalog catalog = catalog_from_flags(relations_path, false);
  IngestCounts counts;
  KnowledgeSet kg = ingest_kg(kg_path, catalog, &counts);
  std::vector<NarrativeSample> samples;
  if (!narratives_path.empty()) samples = ingest_narratives(narratives_path, catalog);
  Vocabulary vocab = build_vocab(samples, kg, catalog, rc.min_count);

  int64_t items = static_cast<int64_t>(kg.facts.size()) + 1;
  int64_t updates = rc.pretrain_epochs * std::max<int64_t>(1, items / 16);
  OptimConfig oc = make_pretrain_optim(rc, updates);

  PretrainReport rep;
  Embedder<Scalar> em;
  if (mode == "entity") {
    std::set<std::string> ents;
    for (const auto& k : kg.facts) {
      ents.insert(k.head);
      ents.insert(k.tail);
    }
    for (const auto& s : samples)
      for (const auto& k : s.gold.facts) {
        ents.insert(k.head);
        ents.insert(k.tail);
      }
    std::vector<std::string> entities(ents.begin(), ents.end());
    em = pretrain_entity_embedder<Scalar>(entities, vocab, rc.model,
                                          rc.pretrain_epochs, oc,
                                          Rng::derive(rc.seed, "embedder"), &rep);
  } else {
    em = pretrain_embedder<Scalar>(kg, catalog, vocab, rc.model, rc.pretrain_epochs,
                                   oc, Rng::derive(rc.seed, "embedder"), &rep);
  }
  save_embedder_dir(out, em, catalog, mode, rep, rc);
  std::cout << "pretrained " << mode << " embedder on " << rep.n_items
            << " items (dropped: tail=" << counts.dropped_invalid_tail
            << " blank=" << counts.dropped_blank
            << " relation=" << counts.dropped_unknown_relation << ")\n"
            << "reconstruction " << rep.reconstruction_rate * 100.0 << "% | <eok> "
            << rep.eok_reconstruction_rate * 100.0 << "% | final loss "
            << (rep.epoch_loss.empty() ? 0.0 : rep.epoch_loss.back()) << "\n"
            << "checkpoint: " << out.string() << "\n";
  return 0;
}

int cmd_train(const RunConfig& rc, const std::string& mode,
              const std::string& narratives_path, const fs::path& embedder_dir,
              const fs::path& out) {
  LoadedEmbedder le = load_embedder_dir(embedder_dir);
  std::vector<NarrativeSample> data = ingest_narratives(narratives_path, le.catalog);
  fs::create_directories(out);

  if (mode == "fact") {
    if (le.mode != "fact")
      throw UsageError("train --mode fact needs a fact-mode embedder checkpoint");
    NoiseSchedule sched = sqrt_schedule(rc.T, rc.s, rc.resolved_amp());
    Diffuser<Scalar> diff;
    diff.init(le.em.vocab.size(), rc.model, Rng::derive(rc.seed, "diffuser"));
    size_t skipped = 0;
    auto items = build_fact_items(data, le.em, le.catalog, &skipped);
    if (skipped)
      std::cerr << "warning: skipped " << skipped
                << " samples whose gold set exceeds max_slots\n";
    TrainStats stats = train_diffuser(diff, items, le.em, sched,
                                      make_train_config(rc, "train.fact"));
    save_diffuser_dir(out / "diffuser", diff);
    write_loss_csv(out / "loss.csv", stats);
    write_schedule_json(out / "schedule.json", sched);
    for (size_t i = 0; i < stats.schedule_dumps.size(); ++i)
      write_schedule_json(out / ("schedule_adapt_" + std::to_string(i + 1) + ".json"),
                          stats.schedule_dumps[i]);
    write_runconfig_sidecar(out, rc);
    std::cout << "trained fact diffuser for " << rc.steps << " steps; final loss "
              << (stats.log.empty() ? 0.0 : stats.log.back().total) << "\n";
    return 0;
  }

  if (mode != "entity") throw UsageError("train: mode must be fact or entity");
  if (le.mode != "entity")
    throw UsageError("train --mode entity needs an entity-mode embedder checkpoint");

  NoiseSchedule head_sched = sqrt_schedule(rc.T, rc.s, rc.resolved_amp());
  NoiseSchedule tail_sched = sqrt_schedule(rc.T, rc.s, rc.resolved_amp());

  Diffuser<Scalar> head_diff, tail_diff;
  head_diff.init(le.em.vocab.size(), rc.model, Rng::derive(rc.seed, "head"));
  tail_diff.init(le.em.vocab.size(), rc.model, Rng::derive(rc.seed, "tail"));

  size_t skipped_h = 0, skipped_t = 0;
  auto head_items = build_head_items(data, le.em, &skipped_h);
  auto tail_items = build_tail_items(data, le.em, &skipped_t);
  if (skipped_h + skipped_t)
    std::cerr << "warning: skipped " << skipped_h << " head / " << skipped_t
              << " tail items exceeding max_slots\n";

  TrainStats hs = train_diffuser(head_diff, head_items, le.em, head_sched,
                                 make_train_config(rc, "train.head"));
  TrainStats ts = train_diffuser(tail_diff, tail_items, le.em, tail_sched,
                                 make_train_config(rc, "train.tail"));

  RelationClassifier<Scalar> rel;
  rel.init(le.em.vocab, le.catalog, rc.model, Rng::derive(rc.seed, "relation"));
  OptimConfig rel_oc = make_pretrain_optim(rc, rc.pretrain_epochs * 8);
  RelationTrainReport rel_rep;
  train_relation_classifier(rel, data, rc.pretrain_epochs, rel_oc,
                            Rng::derive(rc.seed, "relation.train"), &rel_rep);

  save_diffuser_dir(out / "head", head_diff);
  save_diffuser_dir(out / "tail", tail_diff);
  save_checkpoint(out / "relation", rel.ps, rc.model);
  write_loss_csv(out / "head_loss.csv", hs);
  write_loss_csv(out / "tail_loss.csv", ts);
  write_schedule_json(out / "head_schedule.json", head_sched);
  write_schedule_json(out / "tail_schedule.json", tail_sched);
  write_runconfig_sidecar(out, rc);
  std::cout << "trained entity pipeline (head, tail, relation); relation accuracy "
            << rel_rep.accuracy * 100.0 << "%\n";
  return 0;
}

int cmd_generate(const RunConfig& rc, const std::string& mode,
                 const std::string& narratives_path, const fs::path& embedder_dir,
                 const fs::path& model_dir, const fs::path& out) {
  LoadedEmbedder le = load_embedder_dir(embedder_dir);
  std::vector<NarrativeSample> data = ingest_narratives(narratives_path, le.catalog);

  GenerationConfig gen;
  gen.inference_steps = rc.inference_steps;
  gen.max_decode_len = rc.max_decode_len;

  std::ofstream outf(out, std::ios::binary);
  if (!outf) throw UsageError("cannot write " + out.string());

  if (mode == "fact") {
    Diffuser<Scalar> diff = load_diffuser_dir(model_dir / "diffuser");
    if (diff.cfg.d != le.em.cfg.d)
      throw UsageError("checkpoint/config mismatch: diffuser d=" +
                       std::to_string(diff.cfg.d) + " embedder d=" +
                       std::to_string(le.em.cfg.d));
    NoiseSchedule sched = load_schedule_json(model_dir / "schedule.json");
    gen.n_slots = std::min(rc.max_facts, diff.cfg.max_slots);
    int steps = gen.inference_steps == 0 ? sched.T : gen.inference_steps;
    for (size_t i = 0; i < data.size(); ++i) {
      gen.seed = Rng::derive(rc.seed, "generate." + std::to_string(i));
      auto res = generate_facts(diff, le.em, sched, data[i].context, le.catalog, gen);
      nlohmann::ordered_json facts = nlohmann::ordered_json::array();
      for (const auto& k : res.facts)
        facts.push_back(
            {{"head", k.head}, {"relation", k.relation}, {"tail", k.tail}});
      nlohmann::ordered_json line{{"context", data[i].context},
                                  {"facts", facts},
                                  {"n_dropped", res.n_dropped},
                                  {"inference_steps", steps},
                                  {"seed", gen.seed}};
      outf << line.dump() << "\n";
    }
  } else if (mode == "entity") {
    EntityPipeline<Scalar> pipe;
    pipe.entity_embedder = &le.em;
    pipe.catalog = &le.catalog;
    pipe.head_diff = load_diffuser_dir(model_dir / "head");
    pipe.tail_diff = load_diffuser_dir(model_dir / "tail");
    if (pipe.head_diff.cfg.d != le.em.cfg.d)
      throw UsageError("checkpoint/config mismatch: head diffuser d differs");
    pipe.head_sched = load_schedule_json(model_dir / "head_schedule.json");
    pipe.tail_sched = load_schedule_json(model_dir / "tail_schedule.json");
    pipe.rel.vocab = le.em.vocab;
    pipe.rel.labels = le.catalog.labels();
    pipe.rel.cfg = load_checkpoint(model_dir / "relation", pipe.rel.ps);
    pipe.rel.enc = TextEncoder<Scalar>{pipe.rel.cfg, "rel.enc", &pipe.rel.ps};
    gen.n_slots = std::min(rc.max_facts, pipe.head_diff.cfg.max_slots);
    int steps = gen.inference_steps == 0 ? pipe.head_sched.T : gen.inference_steps;
    for (size_t i = 0; i < data.size(); ++i) {
      gen.seed = Rng::derive(rc.seed, "generate." + std::to_string(i));
      auto res = pipe.generate_fact_graph(data[i].context, gen);
      std::vector<FactTriple> facts_vec(res.facts.begin(), res.facts.end());
      if (static_cast<int>(facts_vec.size()) > rc.max_facts)
        facts_vec.resize(rc.max_facts);
      nlohmann::ordered_json facts = nlohmann::ordered_json::array();
      for (const auto& k : facts_vec)
        facts.push_back(
            {{"head", k.head}, {"relation", k.relation}, {"tail", k.tail}});
      nlohmann::ordered_json line{{"context", data[i].context},
                                  {"facts", facts},
                                  {"n_dropped", 0},
                                  {"inference_steps", steps},
                                  {"seed", gen.seed},
                                  {"heads", res.heads},
                                  {"pairs_scored", res.pairs_scored}};
      outf << line.dump() << "\n";
    }
  } else {
    throw UsageError("generate: mode must be fact or entity");
  }
  outf.close();
  write_runconfig_sidecar(out, rc);
  std::cout << "wrote " << data.size() << " generations to " << out.string() << "\n";
  return 0;
}

int cmd_evaluate(const RunConfig& rc, const fs::path& gen_path,
                 const fs::path& gold_path, const std::string& relations_path,
                 bool open_catalog, const std::string& scores_path,
                 const std::string& vectors_path, const std::string& embedder_path,
                 const fs::path& report_path, const fs::path& md_path, bool force) {
  RelationCatalog catalog = catalog_from_flags(relations_path, open_catalog);
  GenerationFile gen = read_generations(gen_path);
  std::vector<NarrativeSample> gold = ingest_narratives(gold_path, catalog);

  if (gen.contexts.size() != gold.size())
    throw UsageError("misaligned files: " + std::to_string(gen.contexts.size()) +
                     " generations vs " + std::to_string(gold.size()) + " gold");
  for (size_t i = 0; i < gold.size(); ++i)
    if (gen.contexts[i] != gold[i].context)
      throw UsageError("misaligned files: first mismatched context id " +
                       std::to_string(i));

  if (!force) {
    std::set<std::string> hashes;
    for (const fs::path& p : {gen_path, fs::path(scores_path), fs::path(vectors_path)})
      if (!p.empty())
        if (auto h = read_sidecar_hash(p)) hashes.insert(*h);
    if (hashes.size() > 1)
      throw UsageError("mixed RunConfig hashes across inputs (use --force to override)");
  }

  if (open_catalog) {
    std::vector<std::string> labels;
    std::set<std::string> seen;
    for (const auto& s : gold)
      for (const auto& k : s.gold.facts)
        if (seen.insert(k.relation).second) labels.push_back(k.relation);
    for (const auto& fs_ : gen.facts)
      for (const auto& k : fs_)
        if (seen.insert(k.relation).second) labels.push_back(k.relation);
    catalog = RelationCatalog::from_relations(labels);
  }

  std::optional<LoadedEmbedder> le;
  std::unique_ptr<EmbeddingProvider> provider;
  if (!vectors_path.empty()) {
    provider = std::make_unique<FileEmbeddingProvider>(vectors_path, catalog);
  } else if (!embedder_path.empty()) {
    le = load_embedder_dir(embedder_path);
    provider = std::make_unique<ModelEmbeddingProvider<Scalar>>(le->em, catalog);
  }

  std::unique_ptr<RelevanceScorer> scorer;
  if (rc.scorer == "overlap")
    scorer = std::make_unique<TokenOverlapScorer>(catalog);
  else if (rc.scorer == "file")
    scorer = std::make_unique<FileRelevanceScorer>(scores_path, catalog);
  else if (rc.scorer != "none")
    throw UsageError("unknown scorer: " + rc.scorer);

  std::vector<KnowledgeSet> gold_sets;
  std::vector<std::string> contexts;
  for (const auto& s : gold) {
    gold_sets.push_back(s.gold);
    contexts.push_back(s.context);
  }

  std::vector<Geometry> geoms;
  if (rc.geometry == "edit") geoms = {Geometry::edit};
  else if (rc.geometry == "embedding") geoms = {Geometry::embedding};
  else if (rc.geometry == "both") geoms = {Geometry::edit, Geometry::embedding};
  else throw UsageError("unknown geometry: " + rc.geometry);

  nlohmann::ordered_json report;
  report["run_config_hash"] = rc.hash();
  nlohmann::ordered_json geom_reports = nlohmann::ordered_json::array();
  std::vector<GeometryReport> greps;
  for (Geometry g : geoms) {
    SimilarityConfig cfg;
    cfg.geometry = g;
    cfg.catalog = &catalog;
    cfg.scorer = scorer.get();
    cfg.provider = provider.get();
    if (g == Geometry::embedding && !provider)
      throw UsageError("embedding geometry needs --vectors or --embedder");
    std::vector<double> thresholds;
    if (rc.thresholds != "auto") thresholds = parse_thresholds(rc.thresholds);
    GeometryReport rep =
        evaluate_geometry(gen.facts, gold_sets, contexts, cfg, thresholds);
    greps.push_back(rep);
    geom_reports.push_back(rep.to_json());

    if (rc.with_novelty) {
      if (!provider || !scorer)
        throw UsageError("novelty needs an embedding provider and a scorer");
      std::vector<FactTriple> pool;
      for (const auto& gs : gold_sets)
        for (const auto& k : gs.facts) pool.push_back(k);
      report["novelty_" + geometry_name(g)] =
          novelty(gen.facts, pool, contexts, cfg, rep.thresholds).to_json();
    }
  }
  report["geometries"] = geom_reports;
  report["nlg"] = nlg_scores(gen.facts, gold_sets, catalog).to_json();
  if (rc.with_webnlg)
    report["webnlg"] = webnlg_scores(gen.facts, gold_sets).to_json();
  report["knowledge_types"] =
      knowledge_type_proportions(gen.facts, catalog).to_json();

  {
    std::ofstream f(report_path, std::ios::binary);
    if (!f) throw UsageError("cannot write " + report_path.string());
    f << report.dump(2) << "\n";
  }
  {
    std::ofstream f(md_path, std::ios::binary);
    if (!f) throw UsageError("cannot write " + md_path.string());
    f << "# Evaluation report\n\n";
    f << "| geometry | #Facts | #Clusters | Relevance | Alignment | RA-F1 |\n";
    f << "|---|---|---|---|---|---|\n";
    auto cell = [](const std::optional<double>& v) {
      if (!v) return std::string("-");
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.4f", *v);
      return std::string(buf);
    };
    for (const auto& rep : greps) {
      char facts_buf[32], cl_buf[32];
      std::snprintf(facts_buf, sizeof(facts_buf), "%.2f", rep.mean_facts);
      std::snprintf(cl_buf, sizeof(cl_buf), "%.2f", rep.mean_clusters);
      f << "| " << rep.geometry << " | " << facts_buf << " | " << cl_buf << " | "
        << cell(rep.mean_relevance) << " | " << cell(rep.mean_alignment) << " | "
        << cell(rep.mean_ra_f1) << " |\n";
    }
    f << "\nContexts: " << contexts.size() << "\n";
  }
  write_runconfig_sidecar(report_path, rc);
  std::cout << "wrote " << report_path.string() << " and " << md_path.string()
            << "\n";
  return 0;
}

int cmd_webnlg_score(const fs::path& gen_path, const fs::path& gold_path,
                     const fs::path& report_path) {
  RelationCatalog catalog = RelationCatalog::open_rdf();
  GenerationFile gen = read_generations(gen_path);
  std::vector<NarrativeSample> gold = ingest_narratives(gold_path, catalog);
  if (gen.contexts.size() != gold.size())
    throw UsageError("misaligned files: generation/gold context counts differ");
  std::vector<KnowledgeSet> gold_sets;
  for (const auto& s : gold) gold_sets.push_back(s.gold);
  WebnlgReport rep = webnlg_scores(gen.facts, gold_sets);
  std::ofstream f(report_path, std::ios::binary);
  if (!f) throw UsageError("cannot write " + report_path.string());
  f << rep.to_json().dump(2) << "\n";
  std::cout << "strict P/R/F1: " << rep.strict.precision << " / " << rep.strict.recall
            << " / " << rep.strict.f1 << "\n";
  return 0;
}

int cmd_inspect_schedule(const RunConfig& rc, const std::string& dump_path,
                         const std::string& out_path) {
  NoiseSchedule sched;
  if (!dump_path.empty())
    sched = load_schedule_json(dump_path);
  else
    sched = sqrt_schedule(rc.T, rc.s, rc.resolved_amp());
  sched.check_valid();
  std::cout << "T=" << sched.T << " s=" << sched.s << " A_amp=" << sched.A_amp
            << "\n"
            << "alpha_bar[0]=" << sched.alpha_bar(0)
            << " beta[0]=" << sched.beta(0)
            << " alpha_bar[T]=" << sched.alpha_bar(sched.T) << "\n"
            << "rows: " << (sched.per_position_active() ? sched.per_position.size() : 1)
            << (sched.per_position_active() ? " (per-position)" : " (shared)")
            << "\n";
  if (!out_path.empty()) {
    write_schedule_json(out_path, sched);
    std::cout << "wrote " << out_path << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contextual knowledge diffusion at desk scale"};
  app.require_subcommand(1);

  std::string config_path;

  // shared flag storage; each subcommand binds what it needs
  std::string kg_path, narratives_path, relations_path, mode = "fact";
  std::string embedder_path, model_path, out_path, gen_path, gold_path;
  std::string scores_path, vectors_path, dump_path, report_path = "report.json";
  std::string md_path = "report.md";
  bool open_catalog = false, force = false, with_novelty = false, with_webnlg = false;
  std::optional<uint64_t> seed_flag;
  std::optional<int> steps_flag, T_flag, max_facts_flag, epochs_flag;
  std::optional<int64_t> train_steps_flag;
  std::optional<double> gamma_flag, lr_flag, amp_flag;
  std::optional<std::string> geometry_flag, scorer_flag, thresholds_flag, scale_flag;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON RunConfig file (flags win)");
    cmd->add_option("--seed", seed_flag, "base seed (overrides config and env)");
    cmd->add_option("--scale", scale_flag, "small|large default preset");
  };

  CLI::App* pre = app.add_subcommand("pretrain-embedder",
                                     "pretrain the fact/entity embedding module");
  pre->add_option("--kg", kg_path, "kg.jsonl")->required();
  pre->add_option("--narratives", narratives_path, "narratives.jsonl for vocab");
  pre->add_option("--relations", relations_path, "relations.json catalog");
  pre->add_option("--mode", mode, "fact|entity")->check(CLI::IsMember({"fact", "entity"}));
  pre->add_option("--out", out_path, "checkpoint directory")->required();
  pre->add_option("--epochs", epochs_flag, "pretraining epochs");
  pre->add_option("--lr", lr_flag, "pretraining learning rate");
  add_common(pre);

  CLI::App* train = app.add_subcommand("train", "train diffusion model(s)");
  train->add_option("--mode", mode, "fact|entity")
      ->check(CLI::IsMember({"fact", "entity"}));
  train->add_option("--narratives", narratives_path, "training narratives.jsonl")
      ->required();
  train->add_option("--embedder", embedder_path, "embedder checkpoint dir")
      ->required();
  train->add_option("--out", out_path, "output directory")->required();
  train->add_option("--steps", train_steps_flag, "training steps");
  train->add_option("--gamma", gamma_flag, "anchor loss weight");
  train->add_option("--lr", lr_flag, "learning rate");
  train->add_option("--T", T_flag, "diffusion steps");
  train->add_option("--amp", amp_flag, "noise amplification A");
  add_common(train);

  CLI::App* gen = app.add_subcommand("generate", "generate fact sets per context");
  gen->add_option("--mode", mode, "fact|entity")
      ->check(CLI::IsMember({"fact", "entity"}));
  gen->add_option("--narratives", narratives_path, "contexts to generate for")
      ->required();
  gen->add_option("--embedder", embedder_path, "embedder checkpoint dir")->required();
  gen->add_option("--model", model_path, "trained model directory")->required();
  gen->add_option("--out", gen_path, "output generations.jsonl")->required();
  gen->add_option("--steps", steps_flag, "inference diffusion steps (0 = full T)");
  gen->add_option("--max-facts", max_facts_flag, "generation width cap");
  add_common(gen);

  CLI::App* ev = app.add_subcommand("evaluate", "run the metric suite");
  ev->add_option("--generations", gen_path, "generations.jsonl")->required();
  ev->add_option("--gold", gold_path, "gold narratives.jsonl")->required();
  ev->add_option("--relations", relations_path, "relations.json catalog");
  ev->add_flag("--open-catalog", open_catalog, "admit every relation label");
  ev->add_option("--geometry", geometry_flag, "edit|embedding|both");
  ev->add_option("--scorer", scorer_flag, "overlap|file|none");
  ev->add_option("--scores", scores_path, "scores.jsonl for --scorer file");
  ev->add_option("--vectors", vectors_path, "vectors.tsv embedding file");
  ev->add_option("--embedder", embedder_path, "embedder checkpoint as provider");
  ev->add_option("--thresholds", thresholds_flag, "auto or comma list");
  ev->add_flag("--novelty", with_novelty, "report novelty counts");
  ev->add_flag("--webnlg", with_webnlg, "report WebNLG match scores");
  ev->add_option("--out-report", report_path, "report.json path");
  ev->add_option("--out-md", md_path, "report.md path");
  ev->add_flag("--force", force, "allow mixed RunConfig hashes");
  add_common(ev);

  CLI::App* wb = app.add_subcommand("webnlg-score", "WebNLG official-style scores");
  wb->add_option("--generations", gen_path, "generations.jsonl")->required();
  wb->add_option("--gold", gold_path, "gold narratives.jsonl")->required();
  wb->add_option("--out", report_path, "report.json path");

  CLI::App* insp = app.add_subcommand("inspect-schedule", "audit a noise schedule");
  insp->add_option("--dump", dump_path, "schedule dump to inspect");
  insp->add_option("--T", T_flag, "steps for a fresh schedule");
  insp->add_option("--amp", amp_flag, "noise amplification A");
  insp->add_option("--out", out_path, "write dump JSON here");
  add_common(insp);

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig rc;
    if (!config_path.empty()) rc = RunConfig::from_file(config_path);
    rc.apply_env_seed();
    if (seed_flag) rc.seed = *seed_flag;
    if (scale_flag) rc.scale = *scale_flag;
    if (gamma_flag) rc.gamma = *gamma_flag;
    if (lr_flag) {
      rc.lr = *lr_flag;
      rc.pretrain_lr = *lr_flag;
    }
    if (T_flag) rc.T = *T_flag;
    if (amp_flag) rc.A_amp = *amp_flag;
    if (train_steps_flag) rc.steps = *train_steps_flag;
    if (steps_flag) rc.inference_steps = *steps_flag;
    if (max_facts_flag) rc.max_facts = *max_facts_flag;
    if (epochs_flag) rc.pretrain_epochs = *epochs_flag;
    if (geometry_flag) rc.geometry = *geometry_flag;
    if (scorer_flag) rc.scorer = *scorer_flag;
    if (thresholds_flag) rc.thresholds = *thresholds_flag;
    rc.with_novelty = with_novelty;
    rc.with_webnlg = with_webnlg;

    if (app.got_subcommand(pre)) {
      rc.command = "pretrain-embedder";
      return cmd_pretrain_embedder(rc, kg_path, narratives_path, relations_path,
                                   out_path, mode);
    }
    if (app.got_subcommand(train)) {
      rc.command = "train";
      return cmd_train(rc, mode, narratives_path, embedder_path, out_path);
    }
    if (app.got_subcommand(gen)) {
      rc.command = "generate";
      return cmd_generate(rc, mode, narratives_path, embedder_path, model_path,
                          gen_path);
    }
    if (app.got_subcommand(ev)) {
      rc.command = "evaluate";
      return cmd_evaluate(rc, gen_path, gold_path, relations_path, open_catalog,
                          scores_path, vectors_path, embedder_path, report_path,
                          md_path, force);
    }
    if (app.got_subcommand(wb)) {
      rc.command = "webnlg-score";
      return cmd_webnlg_score(gen_path, gold_path, report_path);
    }
    if (app.got_subcommand(insp)) {
      rc.command = "inspect-schedule";
      return cmd_inspect_schedule(rc, dump_path, out_path);
    }
    throw UsageError("no subcommand");
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
