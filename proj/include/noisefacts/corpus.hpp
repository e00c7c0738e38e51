#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace noisefacts {

// ---- text normalization ----

inline std::string normalize_ws(const std::string& s) {
  std::string out;
  bool in_space = true;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!in_space && !out.empty()) out.push_back(' ');
      in_space = true;
    } else {
      out.push_back(c);
      in_space = false;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

// Lowercased word-level tokens: alphanumeric runs, with each punctuation
// character standing alone.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> toks;
  std::string cur;
  for (char raw : text) {
    unsigned char c = static_cast<unsigned char>(raw);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      if (!cur.empty()) {
        toks.push_back(cur);
        cur.clear();
      }
      if (!std::isspace(c)) toks.push_back(std::string(1, raw));
    }
  }
  if (!cur.empty()) toks.push_back(cur);
  return toks;
}

inline std::string join_tokens(const std::vector<std::string>& toks) {
  std::string out;
  for (size_t i = 0; i < toks.size(); ++i) {
    if (i) out.push_back(' ');
    out += toks[i];
  }
  return out;
}

// ---- domain types ----

struct FactTriple {
  std::string head;
  std::string relation;
  std::string tail;

  bool operator==(const FactTriple& o) const {
    return head == o.head && relation == o.relation && tail == o.tail;
  }
  bool operator<(const FactTriple& o) const {
    return std::tie(head, relation, tail) < std::tie(o.head, o.relation, o.tail);
  }
};

struct KnowledgeSet {
  std::vector<FactTriple> facts;

  std::vector<std::string> heads() const { return unique_of(&FactTriple::head); }
  std::vector<std::string> relations() const { return unique_of(&FactTriple::relation); }
  std::vector<std::string> tails() const { return unique_of(&FactTriple::tail); }

 private:
  std::vector<std::string> unique_of(std::string FactTriple::* field) const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& f : facts)
      if (seen.insert(f.*field).second) out.push_back(f.*field);
    return out;
  }
};

struct NarrativeSample {
  std::string context;
  KnowledgeSet gold;
};

enum class RelationGroup { physical, event, social };

inline std::string group_name(RelationGroup g) {
  switch (g) {
    case RelationGroup::physical: return "physical";
    case RelationGroup::event: return "event";
    case RelationGroup::social: return "social";
  }
  return "physical";
}

inline RelationGroup group_from_name(const std::string& s) {
  if (s == "physical") return RelationGroup::physical;
  if (s == "event") return RelationGroup::event;
  if (s == "social") return RelationGroup::social;
  throw std::invalid_argument("unknown relation group: " + s);
}

struct RelationInfo {
  std::string phrase;
  RelationGroup group = RelationGroup::physical;
};

// Relation label -> surface phrase and type group. An open catalog admits
// every label (RDF-style data), verbalizing it as its own normalized text.
class RelationCatalog {
 public:
  static RelationCatalog atomic() {
    RelationCatalog c;
    auto P = RelationGroup::physical;
    auto E = RelationGroup::event;
    auto S = RelationGroup::social;
    c.add("ObjectUse", "used for", P);
    c.add("AtLocation", "located or found at/in/on", P);
    c.add("MadeUpOf", "made (up) of", P);
    c.add("HasProperty", "can be characterized by being/having", P);
    c.add("CapableOf", "is/are capable of", P);
    c.add("Desires", "desires", P);
    c.add("NotDesires", "do(es) not desire", P);
    c.add("IsAfter", "happens after", E);
    c.add("IsBefore", "happens before", E);
    c.add("HasSubEvent", "includes the event/action", E);
    c.add("HinderedBy", "can be hindered by", E);
    c.add("Causes", "causes", E);
    c.add("xReason", "because", E);
    c.add("xNeed", "but before, person X needs", S);
    c.add("xAttr", "person X is seen as", S);
    c.add("xEffect", "as a result, person X will", S);
    c.add("xReact", "as a result, person X feels", S);
    c.add("xWant", "as a result, person X wants", S);
    c.add("xIntent", "because person X wants", S);
    c.add("oEffect", "as a result, others will", S);
    c.add("oReact", "as a result, others feel", S);
    c.add("oWant", "as a result, others want", S);
    return c;
  }

  // Every predicate admitted, physical group placeholder, phrase = label text.
  static RelationCatalog open_rdf() {
    RelationCatalog c;
    c.open_ = true;
    return c;
  }

  // Closed catalog over an observed predicate list (RDF data): each label
  // verbalizes as its own normalized text, physical group placeholder.
  static RelationCatalog from_relations(const std::vector<std::string>& labels) {
    RelationCatalog c;
    for (const auto& label : labels) {
      std::string phrase = join_tokens(tokenize(label));
      if (phrase.empty()) phrase = label;
      c.add(label, phrase, RelationGroup::physical);
    }
    return c;
  }

  static RelationCatalog from_json_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read relation catalog: " + path.string());
    nlohmann::json j = nlohmann::json::parse(f);
    RelationCatalog c;
    for (auto it = j.begin(); it != j.end(); ++it) {
      std::string phrase = it.value().at("phrase");
      if (normalize_ws(phrase).empty())
        throw std::runtime_error("empty phrase for relation " + it.key());
      c.add(it.key(), phrase, group_from_name(it.value().at("group")));
    }
    return c;
  }

  void add(const std::string& label, const std::string& phrase, RelationGroup g) {
    entries_[label] = RelationInfo{phrase, g};
  }

  bool contains(const std::string& label) const {
    return open_ || entries_.count(label) > 0;
  }
  std::string phrase(const std::string& label) const {
    auto it = entries_.find(label);
    if (it != entries_.end()) return it->second.phrase;
    if (open_) return label;
    throw std::out_of_range("relation not in catalog: " + label);
  }
  RelationGroup group(const std::string& label) const {
    auto it = entries_.find(label);
    if (it != entries_.end()) return it->second.group;
    if (open_) return RelationGroup::physical;
    throw std::out_of_range("relation not in catalog: " + label);
  }
  bool is_open() const { return open_; }
  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [label, info] : entries_)
      j[label] = {{"phrase", info.phrase}, {"group", group_name(info.group)}};
    return j;
  }
  static RelationCatalog from_json(const nlohmann::json& j) {
    RelationCatalog c;
    for (auto it = j.begin(); it != j.end(); ++it)
      c.add(it.key(), it.value().at("phrase"),
            group_from_name(it.value().at("group")));
    return c;
  }

 private:
  std::map<std::string, RelationInfo> entries_;
  bool open_ = false;
};

// ---- vocabulary ----

class Vocabulary {
 public:
  static constexpr int kBos = 0;   // <s>
  static constexpr int kEos = 1;   // </s>
  static constexpr int kPad = 2;
  static constexpr int kUnk = 3;
  static constexpr int kFsep = 4;
  static constexpr int kEok = 5;

  Vocabulary() {
    for (const char* s : {"<s>", "</s>", "<pad>", "<unk>", "<fsep>", "<eok>"})
      add(s);
  }

  int add(const std::string& tok) {
    auto it = token_to_id_.find(tok);
    if (it != token_to_id_.end()) return it->second;
    int id = static_cast<int>(id_to_token_.size());
    id_to_token_.push_back(tok);
    token_to_id_.emplace(tok, id);
    return id;
  }

  int id(const std::string& tok) const {
    auto it = token_to_id_.find(tok);
    return it == token_to_id_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& tok) const { return token_to_id_.count(tok) > 0; }
  const std::string& token(int id) const {
    if (id < 0 || id >= static_cast<int>(id_to_token_.size()))
      throw std::out_of_range("token id out of range");
    return id_to_token_[id];
  }
  int size() const { return static_cast<int>(id_to_token_.size()); }

  std::vector<int> encode(const std::vector<std::string>& toks) const {
    std::vector<int> out;
    out.reserve(toks.size());
    for (const auto& t : toks) out.push_back(id(t));
    return out;
  }

  nlohmann::ordered_json to_json() const {
    return {{"tokens", id_to_token_}};
  }
  static Vocabulary from_json(const nlohmann::json& j) {
    Vocabulary v;
    v.id_to_token_.clear();
    v.token_to_id_.clear();
    for (const auto& t : j.at("tokens")) v.add(t.get<std::string>());
    return v;
  }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

// ---- ingestion ----

struct IngestCounts {
  size_t kept = 0;
  size_t dropped_invalid_tail = 0;
  size_t dropped_blank = 0;
  size_t dropped_unknown_relation = 0;
  size_t dropped_empty_field = 0;
};

namespace detail {

inline bool contains_blank_marker(const FactTriple& f) {
  return f.head.find("___") != std::string::npos ||
         f.relation.find("___") != std::string::npos ||
         f.tail.find("___") != std::string::npos;
}

// Returns true if the fact passes the ingest filters.
inline bool filter_fact(FactTriple& f, const RelationCatalog& catalog,
                        IngestCounts& counts) {
  f.head = normalize_ws(f.head);
  f.tail = normalize_ws(f.tail);
  if (f.head.empty() || f.tail.empty()) {
    ++counts.dropped_empty_field;
    return false;
  }
  std::string tail_lc = join_tokens(tokenize(f.tail));
  if (tail_lc == "none") {
    ++counts.dropped_invalid_tail;
    return false;
  }
  if (contains_blank_marker(f)) {
    ++counts.dropped_blank;
    return false;
  }
  if (!catalog.contains(f.relation)) {
    ++counts.dropped_unknown_relation;
    return false;
  }
  ++counts.kept;
  return true;
}

inline FactTriple fact_from_json(const nlohmann::json& j, size_t line_no) {
  try {
    return FactTriple{j.at("head").get<std::string>(),
                      j.at("relation").get<std::string>(),
                      j.at("tail").get<std::string>()};
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("line " + std::to_string(line_no) +
                             ": bad fact object: " + e.what());
  }
}

}  // namespace detail

inline KnowledgeSet ingest_kg(const std::filesystem::path& path,
                              const RelationCatalog& catalog,
                              IngestCounts* counts_out = nullptr) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  KnowledgeSet ks;
  IngestCounts counts;
  std::string line;
  size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (normalize_ws(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path.string() + " line " + std::to_string(line_no) +
                               ": malformed JSON: " + e.what());
    }
    FactTriple fact = detail::fact_from_json(j, line_no);
    if (detail::filter_fact(fact, catalog, counts)) ks.facts.push_back(fact);
  }
  if (counts_out) *counts_out = counts;
  return ks;
}

inline std::vector<NarrativeSample> ingest_narratives(
    const std::filesystem::path& path, const RelationCatalog& catalog,
    IngestCounts* counts_out = nullptr) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::vector<NarrativeSample> samples;
  IngestCounts counts;
  std::string line;
  size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (normalize_ws(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path.string() + " line " + std::to_string(line_no) +
                               ": malformed JSON: " + e.what());
    }
    NarrativeSample s;
    try {
      s.context = j.at("context").get<std::string>();
      for (const auto& fj : j.at("facts")) {
        FactTriple fact = detail::fact_from_json(fj, line_no);
        if (detail::filter_fact(fact, catalog, counts))
          s.gold.facts.push_back(fact);
      }
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path.string() + " line " + std::to_string(line_no) +
                               ": missing key: " + e.what());
    }
    if (s.context.empty())
      throw std::runtime_error(path.string() + " line " + std::to_string(line_no) +
                               ": empty context");
    samples.push_back(std::move(s));
  }
  if (counts_out) *counts_out = counts;
  return samples;
}

inline void write_kg_jsonl(const std::filesystem::path& path, const KnowledgeSet& ks) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  for (const auto& fact : ks.facts) {
    nlohmann::ordered_json j{{"head", fact.head},
                             {"relation", fact.relation},
                             {"tail", fact.tail}};
    f << j.dump() << "\n";
  }
}

inline void write_narratives_jsonl(const std::filesystem::path& path,
                                   const std::vector<NarrativeSample>& samples) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  for (const auto& s : samples) {
    nlohmann::ordered_json facts = nlohmann::ordered_json::array();
    for (const auto& fact : s.gold.facts)
      facts.push_back({{"head", fact.head},
                       {"relation", fact.relation},
                       {"tail", fact.tail}});
    nlohmann::ordered_json j{{"context", s.context}, {"facts", facts}};
    f << j.dump() << "\n";
  }
}

// ---- vocabulary construction ----

// Specials first, then relation labels and their surface-phrase tokens
// (always kept), then corpus word tokens with frequency >= min_count sorted
// by frequency then lexicographically.
inline Vocabulary build_vocab(const std::vector<NarrativeSample>& samples,
                              const KnowledgeSet& kg,
                              const RelationCatalog& catalog, int min_count = 1) {
  if (min_count < 1) throw std::invalid_argument("build_vocab: min_count >= 1");
  Vocabulary v;
  for (const auto& label : catalog.labels()) v.add(label);
  for (const auto& label : catalog.labels())
    for (const auto& t : tokenize(catalog.phrase(label))) v.add(t);

  std::map<std::string, int64_t> freq;
  auto count_text = [&freq](const std::string& text) {
    for (const auto& t : tokenize(text)) ++freq[t];
  };
  for (const auto& s : samples) {
    count_text(s.context);
    for (const auto& fact : s.gold.facts) {
      count_text(fact.head);
      count_text(fact.tail);
    }
  }
  for (const auto& fact : kg.facts) {
    count_text(fact.head);
    count_text(fact.tail);
  }
  std::vector<std::pair<std::string, int64_t>> items(freq.begin(), freq.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (const auto& [tok, n] : items)
    if (n >= min_count) v.add(tok);
  return v;
}

// ---- fact verbalization ----

// head + relation surface phrase + tail as word tokens, no special tokens.
inline std::vector<std::string> render_fact(const FactTriple& k,
                                            const RelationCatalog& catalog) {
  std::vector<std::string> toks = tokenize(k.head);
  for (const auto& t : tokenize(catalog.phrase(k.relation))) toks.push_back(t);
  for (const auto& t : tokenize(k.tail)) toks.push_back(t);
  return toks;
}

inline std::string fact_display(const FactTriple& k, const RelationCatalog& catalog) {
  return join_tokens(render_fact(k, catalog));
}

// <s> head-tokens phrase-tokens tail-tokens </s> as vocabulary ids; tokens
// missing from the vocabulary fall back to <unk>.
inline std::vector<int> verbalize_fact(const FactTriple& k,
                                       const RelationCatalog& catalog,
                                       const Vocabulary& vocab) {
  if (!catalog.contains(k.relation))
    throw std::invalid_argument("verbalize_fact: relation not in catalog: " + k.relation);
  std::vector<int> ids{Vocabulary::kBos};
  for (const auto& t : render_fact(k, catalog)) ids.push_back(vocab.id(t));
  ids.push_back(Vocabulary::kEos);
  return ids;
}

inline std::vector<int> verbalize_eok() {
  return {Vocabulary::kBos, Vocabulary::kEok, Vocabulary::kEos};
}

inline std::vector<int> verbalize_entity(const std::string& text,
                                         const Vocabulary& vocab) {
  std::vector<int> ids{Vocabulary::kBos};
  for (const auto& t : tokenize(text)) ids.push_back(vocab.id(t));
  ids.push_back(Vocabulary::kEos);
  return ids;
}

// Space-joined surface form, special tokens stripped.
inline std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::vector<std::string> toks;
  for (int id : ids) {
    if (id == Vocabulary::kBos || id == Vocabulary::kEos || id == Vocabulary::kPad)
      continue;
    toks.push_back(vocab.token(id));
  }
  return join_tokens(toks);
}

// Inverts verbalize_fact: finds the leftmost (longest on ties) catalog phrase
// occurrence with non-empty head and tail around it.
inline std::optional<FactTriple> parse_verbalized(const std::vector<int>& ids,
                                                  const RelationCatalog& catalog,
                                                  const Vocabulary& vocab) {
  std::vector<std::string> toks;
  for (int id : ids) {
    if (id == Vocabulary::kBos) continue;
    if (id == Vocabulary::kEos) break;
    if (id == Vocabulary::kUnk || id == Vocabulary::kPad ||
        id == Vocabulary::kFsep || id == Vocabulary::kEok)
      return std::nullopt;
    toks.push_back(vocab.token(id));
  }
  if (toks.size() < 3) return std::nullopt;

  int best_start = -1;
  size_t best_len = 0;
  std::string best_label;
  for (const auto& label : catalog.labels()) {
    std::vector<std::string> phrase = tokenize(catalog.phrase(label));
    if (phrase.empty() || phrase.size() + 2 > toks.size()) continue;
    for (size_t start = 1; start + phrase.size() < toks.size(); ++start) {
      if (std::equal(phrase.begin(), phrase.end(), toks.begin() + start)) {
        int s = static_cast<int>(start);
        if (best_start == -1 || s < best_start ||
            (s == best_start && phrase.size() > best_len)) {
          best_start = s;
          best_len = phrase.size();
          best_label = label;
        }
        break;
      }
    }
  }
  if (best_start < 0) return std::nullopt;
  std::vector<std::string> head(toks.begin(), toks.begin() + best_start);
  std::vector<std::string> tail(toks.begin() + best_start + best_len, toks.end());
  return FactTriple{join_tokens(head), best_label, join_tokens(tail)};
}

// Context token ids for the encoder: <s> + words + </s>.
inline std::vector<int> context_tokens(const std::string& context,
                                       const Vocabulary& vocab) {
  std::vector<int> ids{Vocabulary::kBos};
  for (const auto& t : tokenize(context)) ids.push_back(vocab.id(t));
  ids.push_back(Vocabulary::kEos);
  return ids;
}

}  // namespace noisefacts
