#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "noisefacts/corpus.hpp"
#include "noisefacts/embedder.hpp"
#include "noisefacts/nn.hpp"
#include "noisefacts/optim.hpp"

namespace noisefacts {

// ---- similarity geometry ----

inline int word_levenshtein(const std::vector<std::string>& a,
                            const std::vector<std::string>& b) {
  size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j) {
      int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

// Normalized word-level edit distance, Edit / MaxLen.
inline double edit_distance_normalized(const FactTriple& k1, const FactTriple& k2,
                                       const RelationCatalog& catalog) {
  auto a = render_fact(k1, catalog);
  auto b = render_fact(k2, catalog);
  size_t maxlen = std::max(a.size(), b.size());
  if (maxlen == 0) return 0.0;  // both empty: identical by convention
  return double(word_levenshtein(a, b)) / double(maxlen);
}

inline double edit_similarity(const FactTriple& k1, const FactTriple& k2,
                              const RelationCatalog& catalog) {
  return 1.0 - edit_distance_normalized(k1, k2, catalog);
}

// Fixed-dimension fact vectors from the internal embedder or a vector file.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<double> vector(const FactTriple& k) const = 0;
};

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// vectors.tsv: fact display string TAB space-separated floats.
class FileEmbeddingProvider : public EmbeddingProvider {
 public:
  FileEmbeddingProvider(const std::filesystem::path& path,
                        const RelationCatalog& catalog)
      : catalog_(&catalog) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read vector file: " + path.string());
    std::string line;
    size_t dim = 0;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      auto tab = line.find('\t');
      if (tab == std::string::npos)
        throw std::runtime_error("vector file line without TAB: " + line);
      std::string key = join_tokens(tokenize(line.substr(0, tab)));
      std::istringstream rest(line.substr(tab + 1));
      std::vector<double> v;
      double x;
      while (rest >> x) v.push_back(x);
      if (v.empty()) throw std::runtime_error("vector file line without values");
      if (dim == 0) dim = v.size();
      if (v.size() != dim)
        throw std::runtime_error("inconsistent vector dimension in file");
      vectors_[key] = std::move(v);
    }
  }

  std::vector<double> vector(const FactTriple& k) const override {
    auto it = vectors_.find(fact_display(k, *catalog_));
    if (it == vectors_.end())
      throw std::runtime_error("no embedding vector for fact: " +
                               fact_display(k, *catalog_));
    return it->second;
  }

 private:
  std::map<std::string, std::vector<double>> vectors_;
  const RelationCatalog* catalog_;
};

template <class T>
class ModelEmbeddingProvider : public EmbeddingProvider {
 public:
  ModelEmbeddingProvider(const Embedder<T>& em, const RelationCatalog& catalog)
      : em_(&em), catalog_(&catalog) {}

  std::vector<double> vector(const FactTriple& k) const override {
    auto key = fact_display(k, *catalog_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    Mat<T> e = em_->embed_fact(k, *catalog_);
    std::vector<double> v(e.cols());
    for (int j = 0; j < e.cols(); ++j) v[j] = double(e(0, j));
    cache_[key] = v;
    return v;
  }

 private:
  const Embedder<T>* em_;
  const RelationCatalog* catalog_;
  mutable std::map<std::string, std::vector<double>> cache_;
};

// ---- relevance scoring plug-ins ----

class RelevanceScorer {
 public:
  virtual ~RelevanceScorer() = default;
  // context_id indexes the evaluation corpus; scorers may ignore it.
  virtual double score(const FactTriple& k, int context_id,
                       const std::string& context) const = 0;
};

// Jaccard overlap of content words between the rendered fact and the context.
class TokenOverlapScorer : public RelevanceScorer {
 public:
  explicit TokenOverlapScorer(const RelationCatalog& catalog) : catalog_(&catalog) {}

  double score(const FactTriple& k, int, const std::string& context) const override {
    std::set<std::string> a = content_words(render_fact(k, *catalog_));
    std::set<std::string> b = content_words(tokenize(context));
    if (a.empty() || b.empty()) return 0.0;
    size_t inter = 0;
    for (const auto& w : a) inter += b.count(w);
    size_t uni = a.size() + b.size() - inter;
    return uni == 0 ? 0.0 : double(inter) / double(uni);
  }

  static std::set<std::string> content_words(const std::vector<std::string>& toks) {
    static const std::set<std::string> stop = {
        "a",  "an", "the", "to", "of", "in", "on", "at", "is", "are",
        "be", "as", "for", "and", "or", "with", "by", ",", ".", "/",
        "(", ")", "'", "x"};
    std::set<std::string> out;
    for (const auto& t : toks)
      if (!stop.count(t)) out.insert(t);
    return out;
  }

 private:
  const RelationCatalog* catalog_;
};

// scores.jsonl: {"context_id": int, "fact": str, "score": float}
class FileRelevanceScorer : public RelevanceScorer {
 public:
  FileRelevanceScorer(const std::filesystem::path& path, const RelationCatalog& catalog)
      : catalog_(&catalog) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read score file: " + path.string());
    std::string line;
    size_t line_no = 0;
    while (std::getline(f, line)) {
      ++line_no;
      if (normalize_ws(line).empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
        int cid = j.at("context_id");
        std::string fact = join_tokens(tokenize(j.at("fact").get<std::string>()));
        double s = j.at("score");
        if (s < 0.0 || s > 1.0)
          throw std::runtime_error("score out of [0,1]");
        scores_[{cid, fact}] = s;
      } catch (const std::exception& e) {
        throw std::runtime_error(path.string() + " line " + std::to_string(line_no) +
                                 ": " + e.what());
      }
    }
  }

  double score(const FactTriple& k, int context_id, const std::string&) const override {
    auto it = scores_.find({context_id, fact_display(k, *catalog_)});
    if (it == scores_.end())
      throw std::runtime_error("no precomputed relevance score for fact: " +
                               fact_display(k, *catalog_));
    return it->second;
  }

 private:
  std::map<std::pair<int, std::string>, double> scores_;
  const RelationCatalog* catalog_;
};

// Trained binary relevance head over the shared text encoder architecture.
template <class T>
struct RelevanceClassifier {
  ModelConfig cfg;
  ParameterStore<T> ps;
  TextEncoder<T> enc;
  Vocabulary vocab;
  const RelationCatalog* catalog = nullptr;

  RelevanceClassifier() = default;
  RelevanceClassifier(const RelevanceClassifier&) = delete;
  RelevanceClassifier& operator=(const RelevanceClassifier&) = delete;
  RelevanceClassifier(RelevanceClassifier&& o) noexcept { *this = std::move(o); }
  RelevanceClassifier& operator=(RelevanceClassifier&& o) noexcept {
    cfg = o.cfg;
    ps = std::move(o.ps);
    enc = std::move(o.enc);
    vocab = std::move(o.vocab);
    catalog = o.catalog;
    enc.ps = &ps;
    return *this;
  }

  void init(const Vocabulary& v, const RelationCatalog& cat, const ModelConfig& c,
            uint64_t seed) {
    cfg = c;
    cfg.validate();
    vocab = v;
    catalog = &cat;
    enc = TextEncoder<T>{cfg, "relv.enc", &ps};
    enc.init(vocab.size(), Rng::derive(seed, "relv.enc"));
    nn::init_linear(ps, "relv.head", cfg.d, 1, Rng::derive(seed, "relv.head"));
  }

  std::vector<int> pair_tokens(const std::string& context, const FactTriple& k) const {
    std::vector<int> ids{Vocabulary::kBos};
    for (const auto& t : tokenize(context)) ids.push_back(vocab.id(t));
    ids.push_back(Vocabulary::kFsep);
    for (const auto& t : render_fact(k, *catalog)) ids.push_back(vocab.id(t));
    ids.push_back(Vocabulary::kEos);
    return ids;
  }

  Var<T> logit(const std::vector<int>& ids, const FwdMode& mode) const {
    Var<T> h = slice_rows(enc.forward(ids, mode), 0, 1);
    return nn::linear(ps, "relv.head", h);
  }

  double score(const std::string& context, const FactTriple& k) const {
    double z = double(logit(pair_tokens(context, k), FwdMode{})->val(0, 0));
    return 1.0 / (1.0 + std::exp(-z));
  }
};

template <class T>
struct RelevanceExample {
  std::string context;
  FactTriple fact;
  bool relevant = true;
};

template <class T>
void train_relevance_classifier(RelevanceClassifier<T>& rc,
                                const std::vector<RelevanceExample<T>>& examples,
                                int epochs, const OptimConfig& oc, uint64_t seed,
                                int batch_size = 16) {
  if (examples.empty())
    throw std::invalid_argument("train_relevance_classifier: no examples");
  Rng shuffle_rng(Rng::derive(seed, "relv.shuffle"));
  Rng drop_rng(Rng::derive(seed, "relv.dropout"));
  FwdMode train_mode{true, &drop_rng};
  std::vector<size_t> order(examples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, int64_t(i) - 1)]);
    for (size_t start = 0; start < order.size(); start += batch_size) {
      size_t end = std::min(order.size(), start + batch_size);
      Var<T> batch_loss;
      for (size_t i = start; i < end; ++i) {
        const auto& ex = examples[order[i]];
        Var<T> z = rc.logit(rc.pair_tokens(ex.context, ex.fact), train_mode);
        // binary CE via 2-way softmax over [0, z]
        Var<T> two = concat_cols(constant<T>(Mat<T>::Zero(1, 1)), z);
        Var<T> l = cross_entropy_sum(two, {ex.relevant ? 1 : 0});
        batch_loss = batch_loss ? add(batch_loss, l) : l;
      }
      backward(scale(batch_loss, 1.0 / double(end - start)));
      adamw_step(rc.ps, oc);
    }
  }
}

template <class T>
class ClassifierRelevanceScorer : public RelevanceScorer {
 public:
  explicit ClassifierRelevanceScorer(const RelevanceClassifier<T>& rc) : rc_(&rc) {}
  double score(const FactTriple& k, int, const std::string& context) const override {
    return rc_->score(context, k);
  }

 private:
  const RelevanceClassifier<T>* rc_;
};

// ---- clustering ----

enum class Geometry { edit, embedding };

inline std::string geometry_name(Geometry g) {
  return g == Geometry::edit ? "edit" : "embedding";
}
inline Geometry geometry_from_name(const std::string& s) {
  if (s == "edit") return Geometry::edit;
  if (s == "embedding") return Geometry::embedding;
  throw std::invalid_argument("unknown geometry: " + s);
}

struct SimilarityConfig {
  Geometry geometry = Geometry::edit;
  const RelationCatalog* catalog = nullptr;
  const EmbeddingProvider* provider = nullptr;
  const RelevanceScorer* scorer = nullptr;
};

inline double fact_distance(const FactTriple& a, const FactTriple& b,
                            const SimilarityConfig& cfg) {
  if (cfg.geometry == Geometry::edit)
    return edit_distance_normalized(a, b, *cfg.catalog);
  if (!cfg.provider)
    throw std::logic_error("embedding geometry without a provider");
  return euclidean(cfg.provider->vector(a), cfg.provider->vector(b));
}

// Pairwise similarity per Geometry: 1 - Edit/MaxLen, or cosine clipped at 0.
inline double fact_similarity(const FactTriple& a, const FactTriple& b,
                              const SimilarityConfig& cfg) {
  if (cfg.geometry == Geometry::edit) return edit_similarity(a, b, *cfg.catalog);
  if (!cfg.provider)
    throw std::logic_error("embedding geometry without a provider");
  return std::max(cosine(cfg.provider->vector(a), cfg.provider->vector(b)), 0.0);
}

struct FactClustering {
  std::vector<FactTriple> facts;
  std::vector<int> assignment;  // cluster index per fact, 0..n_clusters-1
  int n_clusters = 0;
  Geometry geometry = Geometry::edit;
  double eps = 0.0;

  std::vector<std::vector<int>> members() const {
    std::vector<std::vector<int>> out(n_clusters);
    for (size_t i = 0; i < assignment.size(); ++i)
      out[assignment[i]].push_back(static_cast<int>(i));
    return out;
  }
};

// DBSCAN over the configured distance. With min_samples = 1 (the default
// used by the metrics) this is exactly the connected components of the
// eps-neighborhood graph; with larger min_samples, leftover noise points
// become singleton clusters so every fact stays assigned.
inline FactClustering cluster_facts(const std::vector<FactTriple>& facts,
                                    const SimilarityConfig& cfg, double eps,
                                    int min_samples = 1) {
  if (eps <= 0.0) throw std::invalid_argument("cluster_facts: eps > 0");
  int n = static_cast<int>(facts.size());
  FactClustering out;
  out.facts = facts;
  out.geometry = cfg.geometry;
  out.eps = eps;
  out.assignment.assign(n, -1);
  if (n == 0) return out;

  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      dist[i][j] = dist[j][i] = fact_distance(facts[i], facts[j], cfg);

  auto region = [&](int p) {
    std::vector<int> r;
    for (int q = 0; q < n; ++q)
      if (dist[p][q] <= eps) r.push_back(q);
    return r;
  };

  int next_cluster = 0;
  std::vector<bool> visited(n, false);
  for (int p = 0; p < n; ++p) {
    if (visited[p]) continue;
    visited[p] = true;
    std::vector<int> reg = region(p);
    if (static_cast<int>(reg.size()) < min_samples) continue;  // noise for now
    int cid = next_cluster++;
    out.assignment[p] = cid;
    std::vector<int> frontier = reg;
    while (!frontier.empty()) {
      int q = frontier.back();
      frontier.pop_back();
      if (out.assignment[q] == -1) out.assignment[q] = cid;
      if (visited[q]) continue;
      visited[q] = true;
      std::vector<int> reg_q = region(q);
      if (static_cast<int>(reg_q.size()) >= min_samples)
        for (int r : reg_q) frontier.push_back(r);
    }
  }
  for (int p = 0; p < n; ++p)
    if (out.assignment[p] == -1) out.assignment[p] = next_cluster++;
  out.n_clusters = next_cluster;
  return out;
}

// Threshold sweep at interval 0.05 (scaled to the observed distance range in
// embedding geometry); keeps the contiguous range where the mean gold
// cluster count falls from >= 90% of its max toward <= 110% of its min.
inline std::vector<double> auto_threshold_range(
    const std::vector<KnowledgeSet>& gold_sets, const SimilarityConfig& cfg) {
  if (gold_sets.empty())
    throw std::invalid_argument("auto_threshold_range: need at least one gold set");
  double step = 0.05;
  if (cfg.geometry == Geometry::embedding) {
    double dmax = 0.0;
    for (const auto& g : gold_sets)
      for (size_t i = 0; i < g.facts.size(); ++i)
        for (size_t j = i + 1; j < g.facts.size(); ++j)
          dmax = std::max(dmax, fact_distance(g.facts[i], g.facts[j], cfg));
    if (dmax <= 0.0) return {0.05};
    step = 0.05 * dmax;
  }
  std::vector<double> grid;
  for (int j = 1; j <= 19; ++j) grid.push_back(step * j);

  std::vector<double> mean_clusters(grid.size(), 0.0);
  size_t n_nonempty = 0;
  for (const auto& g : gold_sets) {
    if (g.facts.empty()) continue;
    ++n_nonempty;
    for (size_t j = 0; j < grid.size(); ++j)
      mean_clusters[j] += cluster_facts(g.facts, cfg, grid[j]).n_clusters;
  }
  if (n_nonempty == 0)
    throw std::invalid_argument("auto_threshold_range: all gold sets empty");
  for (auto& v : mean_clusters) v /= double(n_nonempty);

  double nmax = *std::max_element(mean_clusters.begin(), mean_clusters.end());
  double nmin = *std::min_element(mean_clusters.begin(), mean_clusters.end());
  if (nmax <= 1.1 * nmin) return {grid.front()};

  size_t i_start = 0, i_end = grid.size() - 1;
  for (size_t j = 0; j < grid.size(); ++j)
    if (mean_clusters[j] >= 0.9 * nmax) i_start = j;
  for (size_t j = grid.size(); j > 0; --j)
    if (mean_clusters[j - 1] <= 1.1 * nmin) i_end = j - 1;
  if (i_end < i_start) return {grid[i_start]};
  return std::vector<double>(grid.begin() + i_start, grid.begin() + i_end + 1);
}

// ---- relevance / alignment / RA-F1 ----

// Mean over clusters of the mean member relevance. Empty clustering has no
// value (absent, not zero).
inline std::optional<double> relevance(const FactClustering& clustering,
                                       int context_id, const std::string& context,
                                       const SimilarityConfig& cfg) {
  if (!cfg.scorer) throw std::logic_error("relevance: no scorer configured");
  if (clustering.n_clusters == 0) return std::nullopt;
  double total = 0.0;
  for (const auto& cluster : clustering.members()) {
    double s = 0.0;
    for (int i : cluster)
      s += cfg.scorer->score(clustering.facts[i], context_id, context);
    total += s / double(cluster.size());
  }
  return total / double(clustering.n_clusters);
}

// Mean over gold clusters of the max generated-to-member similarity.
inline double alignment(const std::vector<FactTriple>& generated,
                        const FactClustering& gold_clustering,
                        const SimilarityConfig& cfg) {
  if (gold_clustering.n_clusters == 0)
    throw std::invalid_argument("alignment: gold clustering is empty");
  if (generated.empty()) return 0.0;
  double total = 0.0;
  for (const auto& cluster : gold_clustering.members()) {
    double best = 0.0;
    for (const auto& g : generated)
      for (int i : cluster)
        best = std::max(best, fact_similarity(g, gold_clustering.facts[i], cfg));
    total += best;
  }
  return total / double(gold_clustering.n_clusters);
}

inline double ra_f1(double rel, double align) {
  if (rel <= 0.0 && align <= 0.0) return 0.0;
  return 2.0 * rel * align / (rel + align);
}

// ---- aggregate suite ----

struct PerContextMetrics {
  int context_id = 0;
  int n_facts = 0;
  double n_clusters = 0.0;  // averaged over thresholds
  std::optional<double> relevance;
  std::optional<double> alignment;
  std::optional<double> ra_f1;
};

struct GeometryReport {
  std::string geometry;
  std::vector<double> thresholds;
  std::vector<PerContextMetrics> per_context;
  double mean_facts = 0.0;
  double mean_clusters = 0.0;
  std::optional<double> mean_relevance;
  std::optional<double> mean_alignment;
  std::optional<double> mean_ra_f1;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["geometry"] = geometry;
    j["thresholds"] = thresholds;
    j["mean_facts"] = mean_facts;
    j["mean_clusters"] = mean_clusters;
    j["mean_relevance"] = mean_relevance ? nlohmann::ordered_json(*mean_relevance)
                                         : nlohmann::ordered_json(nullptr);
    j["mean_alignment"] = mean_alignment ? nlohmann::ordered_json(*mean_alignment)
                                         : nlohmann::ordered_json(nullptr);
    j["mean_ra_f1"] = mean_ra_f1 ? nlohmann::ordered_json(*mean_ra_f1)
                                 : nlohmann::ordered_json(nullptr);
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : per_context) {
      nlohmann::ordered_json row;
      row["context_id"] = r.context_id;
      row["n_facts"] = r.n_facts;
      row["n_clusters"] = r.n_clusters;
      row["relevance"] = r.relevance ? nlohmann::ordered_json(*r.relevance)
                                     : nlohmann::ordered_json(nullptr);
      row["alignment"] = r.alignment ? nlohmann::ordered_json(*r.alignment)
                                     : nlohmann::ordered_json(nullptr);
      row["ra_f1"] = r.ra_f1 ? nlohmann::ordered_json(*r.ra_f1)
                             : nlohmann::ordered_json(nullptr);
      rows.push_back(row);
    }
    j["per_context"] = rows;
    return j;
  }
};

// Clustering metrics for one geometry across all contexts: per threshold and
// context, #Facts, #Clusters, Relevance on the generated clustering,
// Alignment to the gold clustering, RA-F1; averaged over thresholds, then
// over contexts.
inline GeometryReport evaluate_geometry(
    const std::vector<std::vector<FactTriple>>& gen_sets,
    const std::vector<KnowledgeSet>& gold_sets,
    const std::vector<std::string>& contexts, const SimilarityConfig& cfg,
    std::vector<double> thresholds = {}) {
  if (gen_sets.size() != gold_sets.size() || gen_sets.size() != contexts.size())
    throw std::invalid_argument("evaluate_geometry: misaligned inputs");
  if (thresholds.empty()) thresholds = auto_threshold_range(gold_sets, cfg);

  GeometryReport rep;
  rep.geometry = geometry_name(cfg.geometry);
  rep.thresholds = thresholds;

  for (size_t i = 0; i < gen_sets.size(); ++i) {
    PerContextMetrics row;
    row.context_id = static_cast<int>(i);
    row.n_facts = static_cast<int>(gen_sets[i].size());
    double cl = 0.0, rel_sum = 0.0, align_sum = 0.0, raf1_sum = 0.0;
    int rel_n = 0, align_n = 0, raf1_n = 0;
    for (double eps : thresholds) {
      FactClustering gen_cl = cluster_facts(gen_sets[i], cfg, eps);
      cl += gen_cl.n_clusters;
      std::optional<double> r;
      if (cfg.scorer) {
        r = relevance(gen_cl, static_cast<int>(i), contexts[i], cfg);
        if (r) {
          rel_sum += *r;
          ++rel_n;
        }
      }
      if (!gold_sets[i].facts.empty()) {
        FactClustering gold_cl = cluster_facts(gold_sets[i].facts, cfg, eps);
        double a = alignment(gen_sets[i], gold_cl, cfg);
        align_sum += a;
        ++align_n;
        if (r) {
          raf1_sum += ra_f1(*r, a);
          ++raf1_n;
        }
      }
    }
    row.n_clusters = cl / double(thresholds.size());
    if (rel_n) row.relevance = rel_sum / rel_n;
    if (align_n) row.alignment = align_sum / align_n;
    if (raf1_n) row.ra_f1 = raf1_sum / raf1_n;
    rep.per_context.push_back(row);
  }

  double f = 0.0, c = 0.0, r = 0.0, a = 0.0, h = 0.0;
  int rn = 0, an = 0, hn = 0;
  for (const auto& row : rep.per_context) {
    f += row.n_facts;
    c += row.n_clusters;
    if (row.relevance) {
      r += *row.relevance;
      ++rn;
    }
    if (row.alignment) {
      a += *row.alignment;
      ++an;
    }
    if (row.ra_f1) {
      h += *row.ra_f1;
      ++hn;
    }
  }
  size_t n = rep.per_context.size();
  rep.mean_facts = n ? f / n : 0.0;
  rep.mean_clusters = n ? c / n : 0.0;
  if (rn) rep.mean_relevance = r / rn;
  if (an) rep.mean_alignment = a / an;
  if (hn) rep.mean_ra_f1 = h / hn;
  return rep;
}

// ---- novelty ----

struct NoveltyRow {
  int context_id = 0;
  int n_novel_facts = 0;
  double n_novel_clusters = 0.0;  // averaged over thresholds
};

struct NoveltyReport {
  std::vector<NoveltyRow> per_context;
  double mean_novel_facts = 0.0;
  double mean_novel_clusters = 0.0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["mean_novel_facts"] = mean_novel_facts;
    j["mean_novel_clusters"] = mean_novel_clusters;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : per_context)
      rows.push_back({{"context_id", r.context_id},
                      {"n_novel_facts", r.n_novel_facts},
                      {"n_novel_clusters", r.n_novel_clusters}});
    j["per_context"] = rows;
    return j;
  }
};

inline constexpr double kNoveltyCosineCutoff = 0.45;
inline constexpr double kNoveltyRelevanceCutoff = 0.97;

// A generated fact is novel iff its max cosine similarity to the reference
// pool is below 0.45 and its contextual relevance exceeds 0.97.
inline NoveltyReport novelty(const std::vector<std::vector<FactTriple>>& gen_sets,
                             const std::vector<FactTriple>& reference_pool,
                             const std::vector<std::string>& contexts,
                             const SimilarityConfig& cfg,
                             const std::vector<double>& thresholds) {
  if (gen_sets.size() != contexts.size())
    throw std::invalid_argument("novelty: misaligned inputs");
  if (!cfg.provider || !cfg.scorer)
    throw std::logic_error("novelty: needs embedding provider and scorer");
  NoveltyReport rep;
  std::vector<std::vector<double>> pool_vecs;
  pool_vecs.reserve(reference_pool.size());
  for (const auto& k : reference_pool) pool_vecs.push_back(cfg.provider->vector(k));

  for (size_t i = 0; i < gen_sets.size(); ++i) {
    NoveltyRow row;
    row.context_id = static_cast<int>(i);
    std::vector<FactTriple> novel;
    for (const auto& k : gen_sets[i]) {
      std::vector<double> v = cfg.provider->vector(k);
      double max_cos = 0.0;
      for (const auto& pv : pool_vecs) max_cos = std::max(max_cos, cosine(v, pv));
      if (max_cos >= kNoveltyCosineCutoff) continue;
      if (cfg.scorer->score(k, static_cast<int>(i), contexts[i]) <=
          kNoveltyRelevanceCutoff)
        continue;
      novel.push_back(k);
    }
    row.n_novel_facts = static_cast<int>(novel.size());
    if (!novel.empty() && !thresholds.empty()) {
      double c = 0.0;
      for (double eps : thresholds)
        c += cluster_facts(novel, cfg, eps).n_clusters;
      row.n_novel_clusters = c / double(thresholds.size());
    }
    rep.per_context.push_back(row);
    rep.mean_novel_facts += row.n_novel_facts;
    rep.mean_novel_clusters += row.n_novel_clusters;
  }
  if (!rep.per_context.empty()) {
    rep.mean_novel_facts /= double(rep.per_context.size());
    rep.mean_novel_clusters /= double(rep.per_context.size());
  }
  return rep;
}

// ---- NLG surface metrics ----

namespace detail {

inline std::map<std::vector<std::string>, int> ngram_counts(
    const std::vector<std::string>& toks, int n) {
  std::map<std::vector<std::string>, int> out;
  if (static_cast<int>(toks.size()) < n) return out;
  for (size_t i = 0; i + n <= toks.size(); ++i)
    ++out[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)];
  return out;
}

}  // namespace detail

// Sentence BLEU up to 4-grams: clipped modified precision against the
// reference set, brevity penalty against the closest reference length,
// add-one smoothing on orders above 1.
inline double sentence_bleu(const std::vector<std::string>& cand,
                            const std::vector<std::vector<std::string>>& refs) {
  if (cand.empty() || refs.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    auto cc = detail::ngram_counts(cand, n);
    int total = 0, matched = 0;
    for (const auto& [g, cnt] : cc) total += cnt;
    for (const auto& [g, cnt] : cc) {
      int best = 0;
      for (const auto& ref : refs) {
        auto rc = detail::ngram_counts(ref, n);
        auto it = rc.find(g);
        if (it != rc.end()) best = std::max(best, it->second);
      }
      matched += std::min(cnt, best);
    }
    double p;
    if (n == 1) {
      if (total == 0 || matched == 0) return 0.0;
      p = double(matched) / double(total);
    } else {
      p = double(matched + 1) / double(total + 1);
    }
    log_sum += 0.25 * std::log(p);
  }
  size_t c = cand.size();
  size_t r = refs[0].size();
  for (const auto& ref : refs) {
    auto diff = [c](size_t len) {
      return len > c ? len - c : c - len;
    };
    if (diff(ref.size()) < diff(r) || (diff(ref.size()) == diff(r) && ref.size() < r))
      r = ref.size();
  }
  double bp = c >= r ? 1.0 : std::exp(1.0 - double(r) / double(c));
  return bp * std::exp(log_sum);
}

inline int lcs_length(const std::vector<std::string>& a,
                      const std::vector<std::string>& b) {
  std::vector<int> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// ROUGE-L F1 (LCS F-measure), max over references.
inline double rouge_l(const std::vector<std::string>& cand,
                      const std::vector<std::vector<std::string>>& refs) {
  if (cand.empty() || refs.empty()) return 0.0;
  double best = 0.0;
  for (const auto& ref : refs) {
    if (ref.empty()) continue;
    int l = lcs_length(cand, ref);
    if (l == 0) continue;
    double p = double(l) / double(cand.size());
    double r = double(l) / double(ref.size());
    best = std::max(best, 2.0 * p * r / (p + r));
  }
  return best;
}

struct NlgScores {
  double bleu = 0.0;
  double rouge_l = 0.0;
  double distinct_4 = 0.0;

  nlohmann::ordered_json to_json() const {
    return {{"bleu", bleu}, {"rouge_l", rouge_l}, {"distinct_4", distinct_4}};
  }
};

// Each generated fact scored multi-reference against its context's gold
// facts; averaged over facts, then contexts. Distinct-4 pools the 4-grams of
// all of a context's generations.
inline NlgScores nlg_scores(const std::vector<std::vector<FactTriple>>& gen_sets,
                            const std::vector<KnowledgeSet>& gold_sets,
                            const RelationCatalog& catalog) {
  if (gen_sets.size() != gold_sets.size())
    throw std::invalid_argument("nlg_scores: misaligned inputs");
  NlgScores out;
  size_t n_ctx = gen_sets.size();
  if (n_ctx == 0) return out;
  for (size_t i = 0; i < n_ctx; ++i) {
    std::vector<std::vector<std::string>> refs;
    for (const auto& k : gold_sets[i].facts) refs.push_back(render_fact(k, catalog));
    double b = 0.0, r = 0.0;
    if (!gen_sets[i].empty()) {
      for (const auto& k : gen_sets[i]) {
        auto cand = render_fact(k, catalog);
        b += sentence_bleu(cand, refs);
        r += rouge_l(cand, refs);
      }
      b /= double(gen_sets[i].size());
      r /= double(gen_sets[i].size());
    }
    std::set<std::vector<std::string>> distinct;
    size_t total4 = 0;
    for (const auto& k : gen_sets[i]) {
      auto toks = render_fact(k, catalog);
      for (const auto& [g, cnt] : detail::ngram_counts(toks, 4)) {
        distinct.insert(g);
        total4 += size_t(cnt);
      }
    }
    double d4 = total4 == 0 ? 0.0 : double(distinct.size()) / double(total4);
    out.bleu += b;
    out.rouge_l += r;
    out.distinct_4 += d4;
  }
  out.bleu /= double(n_ctx);
  out.rouge_l /= double(n_ctx);
  out.distinct_4 /= double(n_ctx);
  return out;
}

// ---- WebNLG official-style matching ----

enum class WebnlgMode { exact, partial, strict };

namespace detail {

inline bool partial_match(const std::string& a, const std::string& b) {
  auto ta = tokenize(a);
  auto tb = tokenize(b);
  std::set<std::string> sb(tb.begin(), tb.end());
  for (const auto& t : ta)
    if (sb.count(t)) return true;
  return false;
}

// Matched element count (0..3) between one generated and one gold triple.
inline int webnlg_pair_score(const FactTriple& g, const FactTriple& r,
                             WebnlgMode mode) {
  auto norm = [](const std::string& s) { return join_tokens(tokenize(s)); };
  std::array<std::string, 3> ge{norm(g.head), norm(g.relation), norm(g.tail)};
  std::array<std::string, 3> re{norm(r.head), norm(r.relation), norm(r.tail)};
  if (mode == WebnlgMode::strict) {
    int m = 0;
    for (int i = 0; i < 3; ++i)
      if (ge[i] == re[i]) ++m;
    return m;
  }
  auto matches = [&](int i, int j) {
    return mode == WebnlgMode::exact ? ge[i] == re[j] : partial_match(ge[i], re[j]);
  };
  static const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                  {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  int best = 0;
  for (const auto& p : perms) {
    int m = 0;
    for (int i = 0; i < 3; ++i)
      if (matches(i, p[i])) ++m;
    best = std::max(best, m);
  }
  return best;
}

// Max-weight assignment via the O(n^3) potentials method (rows <= cols).
inline int hungarian_max(const std::vector<std::vector<int>>& score) {
  int n = static_cast<int>(score.size());
  if (n == 0) return 0;
  int m = static_cast<int>(score[0].size());
  bool transposed = n > m;
  int rows = transposed ? m : n;
  int cols = transposed ? n : m;
  auto cost = [&](int i, int j) {
    int s = transposed ? score[j][i] : score[i][j];
    return -s;  // maximize
  };
  const int INF = std::numeric_limits<int>::max() / 4;
  std::vector<int> u(rows + 1, 0), v(cols + 1, 0), p(cols + 1, 0), way(cols + 1, 0);
  for (int i = 1; i <= rows; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<int> minv(cols + 1, INF);
    std::vector<bool> used(cols + 1, false);
    do {
      used[j0] = true;
      int i0 = p[j0], delta = INF, j1 = -1;
      for (int j = 1; j <= cols; ++j) {
        if (used[j]) continue;
        int cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= cols; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  int total = 0;
  for (int j = 1; j <= cols; ++j)
    if (p[j] != 0) total += transposed ? score[j - 1][p[j] - 1] : score[p[j] - 1][j - 1];
  return total;
}

inline int enumerate_max(const std::vector<std::vector<int>>& score) {
  int n = static_cast<int>(score.size());
  if (n == 0) return 0;
  int m = static_cast<int>(score[0].size());
  bool transposed = n > m;
  int small = transposed ? m : n;
  int big = transposed ? n : m;
  auto at = [&](int i, int j) { return transposed ? score[j][i] : score[i][j]; };
  std::vector<int> pick(small, -1);
  std::vector<bool> used(big, false);
  int best = 0;
  std::function<void(int, int)> rec = [&](int i, int acc) {
    if (i == small) {
      best = std::max(best, acc);
      return;
    }
    for (int j = 0; j < big; ++j) {
      if (used[j]) continue;
      used[j] = true;
      rec(i + 1, acc + at(i, j));
      used[j] = false;
    }
    rec(i + 1, acc);  // leave row i unmatched
  };
  rec(0, 0);
  return best;
}

}  // namespace detail

// Best total matched-element count over an injective generated-to-gold
// pairing: full enumeration when the smaller side has <= 6 triples (and the
// search space stays small), optimal-assignment search otherwise.
inline int webnlg_optimal_matching(const std::vector<FactTriple>& gen,
                                   const std::vector<FactTriple>& gold,
                                   WebnlgMode mode) {
  if (gen.empty() || gold.empty()) return 0;
  std::vector<std::vector<int>> score(gen.size(), std::vector<int>(gold.size()));
  for (size_t i = 0; i < gen.size(); ++i)
    for (size_t j = 0; j < gold.size(); ++j)
      score[i][j] = detail::webnlg_pair_score(gen[i], gold[j], mode);
  size_t small = std::min(gen.size(), gold.size());
  size_t big = std::max(gen.size(), gold.size());
  double space = 1.0;
  for (size_t i = 0; i < small; ++i) space *= double(big - i);
  if (small <= 6 && space <= 2e5) return detail::enumerate_max(score);
  return detail::hungarian_max(score);
}

struct PrecisionRecallF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  nlohmann::ordered_json to_json() const {
    return {{"precision", precision}, {"recall", recall}, {"f1", f1}};
  }
};

struct WebnlgReport {
  PrecisionRecallF1 exact, partial, strict;

  nlohmann::ordered_json to_json() const {
    return {{"exact", exact.to_json()},
            {"partial", partial.to_json()},
            {"strict", strict.to_json()}};
  }
};

// Micro-averaged WebNLG scores: matched element counts under the optimal
// pairing, aggregated across contexts.
inline WebnlgReport webnlg_scores(const std::vector<std::vector<FactTriple>>& gen_sets,
                                  const std::vector<KnowledgeSet>& gold_sets) {
  if (gen_sets.size() != gold_sets.size())
    throw std::invalid_argument("webnlg_scores: misaligned inputs");
  WebnlgReport rep;
  const WebnlgMode modes[3] = {WebnlgMode::exact, WebnlgMode::partial,
                               WebnlgMode::strict};
  PrecisionRecallF1* outs[3] = {&rep.exact, &rep.partial, &rep.strict};
  for (int mi = 0; mi < 3; ++mi) {
    double matched = 0.0, gen_total = 0.0, gold_total = 0.0;
    for (size_t i = 0; i < gen_sets.size(); ++i) {
      matched += webnlg_optimal_matching(gen_sets[i], gold_sets[i].facts, modes[mi]);
      gen_total += 3.0 * double(gen_sets[i].size());
      gold_total += 3.0 * double(gold_sets[i].facts.size());
    }
    PrecisionRecallF1& o = *outs[mi];
    o.precision = gen_total > 0.0 ? matched / gen_total : 0.0;
    o.recall = gold_total > 0.0 ? matched / gold_total : 0.0;
    o.f1 = (o.precision + o.recall) > 0.0
               ? 2.0 * o.precision * o.recall / (o.precision + o.recall)
               : 0.0;
  }
  return rep;
}

// ---- knowledge-type proportions ----

struct KnowledgeTypeReport {
  double physical = 0.0;
  double event = 0.0;
  double social = 0.0;
  double other = 0.0;

  nlohmann::ordered_json to_json() const {
    return {{"physical", physical}, {"event", event}, {"social", social},
            {"other", other}};
  }
};

// Percentage of generated facts per relation group, averaged per context.
inline KnowledgeTypeReport knowledge_type_proportions(
    const std::vector<std::vector<FactTriple>>& gen_sets,
    const RelationCatalog& catalog) {
  KnowledgeTypeReport rep;
  size_t n_ctx = 0;
  for (const auto& gen : gen_sets) {
    if (gen.empty()) continue;
    ++n_ctx;
    double p = 0, e = 0, s = 0, o = 0;
    for (const auto& k : gen) {
      if (!catalog.contains(k.relation)) {
        o += 1;
        continue;
      }
      switch (catalog.group(k.relation)) {
        case RelationGroup::physical: p += 1; break;
        case RelationGroup::event: e += 1; break;
        case RelationGroup::social: s += 1; break;
      }
    }
    double tot = double(gen.size());
    rep.physical += 100.0 * p / tot;
    rep.event += 100.0 * e / tot;
    rep.social += 100.0 * s / tot;
    rep.other += 100.0 * o / tot;
  }
  if (n_ctx) {
    rep.physical /= double(n_ctx);
    rep.event /= double(n_ctx);
    rep.social /= double(n_ctx);
    rep.other /= double(n_ctx);
  }
  return rep;
}

}  // namespace noisefacts
