#pragma once

// Deterministic desk-scale fixtures: a synthetic knowledge graph over a small
// closed word pool, and a narrative corpus whose gold sets are drawn from it.
// Pool words deliberately avoid every relation surface-phrase token so that
// verbalized facts parse back unambiguously.

#include <string>
#include <vector>

#include "noisefacts/corpus.hpp"

namespace toy {

inline const std::vector<std::string>& nouns() {
  static const std::vector<std::string> v{
      "cap",     "box",    "lamp",    "kettle",  "wagon",  "ladder", "mirror",
      "basket",  "drum",   "rope",    "shovel",  "candle", "jacket", "puzzle",
      "marble",  "whistle", "bucket", "ribbon",  "magnet", "pillow", "sponge",
      "trumpet", "saddle", "anchor",  "compass"};
  return v;
}

inline const std::vector<std::string>& places() {
  static const std::vector<std::string> v{"kitchen", "garage",   "attic",
                                          "garden",  "library",  "cellar",
                                          "workshop", "meadow"};
  return v;
}

inline const std::vector<std::string>& materials() {
  static const std::vector<std::string> v{"wood",   "copper", "glass", "cotton",
                                          "rubber", "clay",   "steel", "paper"};
  return v;
}

inline const std::vector<std::string>& props() {
  static const std::vector<std::string> v{"heavy", "bright", "quiet", "smooth",
                                          "sturdy", "tiny",  "round", "soft"};
  return v;
}

inline const std::vector<std::string>& capabilities() {
  static const std::vector<std::string> v{
      "hold water",   "carry tools", "make noise",    "store grain",
      "light rooms",  "move loads",  "measure paths", "warm hands"};
  return v;
}

inline const std::vector<std::string>& uses() {
  static const std::vector<std::string> v{
      "wrap gifts",   "dig holes", "clean floors", "play music",
      "catch fish",   "tie knots", "lift crates",  "keep warmth"};
  return v;
}

inline const std::vector<std::string>& desires() {
  static const std::vector<std::string> v{
      "fresh air",     "clean shelves", "warm corners", "dry weather",
      "gentle care",   "sunny mornings", "quiet rooms", "open space"};
  return v;
}

inline const std::vector<std::string>& dislikes() {
  static const std::vector<std::string> v{
      "muddy floors", "broken parts", "rusty nails", "damp corners",
      "loud storms",  "sharp edges",  "dusty shelves", "cold nights"};
  return v;
}

inline const std::vector<std::string>& outcomes() {
  static const std::vector<std::string> v{
      "happy children", "tidy rooms",  "quick meals", "safe travels",
      "sweet dreams",   "great songs", "fine crafts", "warm evenings"};
  return v;
}

// 8 facts per noun, one per relation, tails rotated through the pools.
inline noisefacts::KnowledgeSet toy_kg(int n_nouns = 25) {
  noisefacts::KnowledgeSet kg;
  for (int i = 0; i < n_nouns; ++i) {
    const std::string& h = nouns()[i % nouns().size()];
    auto pick = [i](const std::vector<std::string>& pool, int off) {
      return pool[(i + off) % pool.size()];
    };
    kg.facts.push_back({h, "ObjectUse", pick(uses(), 0)});
    kg.facts.push_back({h, "AtLocation", pick(places(), 0)});
    kg.facts.push_back({h, "MadeUpOf", pick(materials(), 1)});
    kg.facts.push_back({h, "HasProperty", pick(props(), 2)});
    kg.facts.push_back({h, "CapableOf", pick(capabilities(), 3)});
    kg.facts.push_back({h, "Desires", pick(desires(), 4)});
    kg.facts.push_back({h, "NotDesires", pick(dislikes(), 5)});
    kg.facts.push_back({h, "Causes", pick(outcomes(), 6)});
  }
  return kg;
}

// Narrative contexts over noun pairs with gold facts drawn from toy_kg.
inline std::vector<noisefacts::NarrativeSample> toy_corpus(int n_contexts = 20,
                                                           int n_nouns = 25) {
  noisefacts::KnowledgeSet kg = toy_kg(n_nouns);
  auto fact_of = [&kg](const std::string& head, const std::string& rel) {
    for (const auto& k : kg.facts)
      if (k.head == head && k.relation == rel) return k;
    throw std::logic_error("toy fact missing");
  };
  std::vector<noisefacts::NarrativeSample> out;
  for (int i = 0; i < n_contexts; ++i) {
    const std::string& a = nouns()[(2 * i) % n_nouns];
    const std::string& b = nouns()[(2 * i + 1) % n_nouns];
    const std::string& place = places()[i % places().size()];
    noisefacts::NarrativeSample s;
    s.context = "the " + a + " and the " + b + " sat in the " + place +
                " . everyone liked the " + a + " .";
    s.gold.facts.push_back(fact_of(a, "ObjectUse"));
    s.gold.facts.push_back(fact_of(a, "AtLocation"));
    s.gold.facts.push_back(fact_of(b, "HasProperty"));
    s.gold.facts.push_back(fact_of(b, "CapableOf"));
    if (i % 2 == 1) s.gold.facts.push_back(fact_of(b, "Desires"));
    out.push_back(std::move(s));
  }
  return out;
}

struct ToyData {
  noisefacts::RelationCatalog catalog = noisefacts::RelationCatalog::atomic();
  noisefacts::KnowledgeSet kg;
  std::vector<noisefacts::NarrativeSample> corpus;
  noisefacts::Vocabulary vocab;
};

inline ToyData make_toy_data(int n_nouns = 25, int n_contexts = 20) {
  ToyData d;
  d.kg = toy_kg(n_nouns);
  d.corpus = toy_corpus(n_contexts, n_nouns);
  d.vocab = noisefacts::build_vocab(d.corpus, d.kg, d.catalog, 1);
  return d;
}

}  // namespace toy
