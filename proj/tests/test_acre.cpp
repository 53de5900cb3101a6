#include <doctest.h>

#include "setcomm/acre.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

using namespace setcomm;
using namespace setcomm::acre;

namespace {

MessageSource formula_source() {
  return [](const Concept& c, Rng&) { return formula_message(c); };
}

const AcreModelSet& tiny_models() {
  static const AcreModelSet models = [] {
    const AcreCorpus corpus =
        collect_corpus(formula_source(), enumerate_concepts(), 312 * 6, formula_channel(), 1);
    AcreConfig cfg;
    cfg.dim = 16;
    cfg.heads = 2;
    cfg.ff = 32;
    cfg.layers = 1;
    cfg.epochs = 3;
    cfg.batch = 32;
    cfg.seed = 2;
    return train_acre(corpus, cfg);
  }();
  return models;
}

}  // namespace

TEST_CASE("corpus buckets are even and messages fit the channel") {
  const auto& all = enumerate_concepts();
  Rng noise(0);
  const MessageSource noisy = [&](const Concept& c, Rng& r) {
    Message m = formula_message(c);
    if (r() % 2) m.pop_back();
    return m;
  };
  const AcreCorpus corpus = collect_corpus(noisy, all, 1000, formula_channel(), 4);
  std::size_t lo = 1000, hi = 0;
  for (const auto& c : all) {
    lo = std::min(lo, corpus.bucket(c).size());
    hi = std::max(hi, corpus.bucket(c).size());
    for (const auto& m : corpus.bucket(c)) CHECK(agents::message_fits(m, corpus.channel));
  }
  CHECK(hi - lo <= 1);
  CHECK(corpus.size() == 1000);
  CHECK(corpus.all_messages().size() == 1000);

  const AcreCorpus one = collect_corpus(formula_source(), all, 312, formula_channel(), 4);
  for (const auto& c : all) CHECK(one.bucket(c).size() == 1);
}

TEST_CASE("formula messages spell the concept") {
  CHECK(formula_message(parse_concept("red")) == Message{0});
  const Message m = formula_message(parse_concept("NOT gray AND circle"));
  REQUIRE(m.size() == 4);
  CHECK(m[0] == 11);
  CHECK(m[2] == 12);
  CHECK(formula_message(parse_concept("blue OR triangle"))[1] == 13);
  for (const auto& c : enumerate_concepts()) {
    CHECK(agents::message_fits(formula_message(c), formula_channel()));
    CHECK(formula_message(c).size() == c.formula_tokens().size());
  }
}

TEST_CASE("binary concept split is a stratified partition") {
  const auto& all = enumerate_concepts();
  const ConceptSplit s = split_binary_concepts(all, 3);
  std::set<std::string> seen;
  std::size_t binary = 0;
  for (const auto& c : all) binary += c.is_literal() ? 0 : 1;
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (const auto& c : *part) {
      CHECK_FALSE(c.is_literal());
      CHECK(seen.insert(c.formula()).second);
    }
  CHECK(seen.size() == binary);
  CHECK(std::fabs(double(s.test.size()) / double(binary) - 0.1) < 0.03);
  CHECK(std::fabs(double(s.val.size()) / double(binary) - 0.1) < 0.03);

  std::set<std::pair<ConceptKind, int>> strata;
  for (const auto& c : s.test) strata.insert({c.kind(), int(c.left().negated) + int(c.right().negated)});
  for (auto kind : {ConceptKind::conjunction, ConceptKind::disjunction})
    for (int neg = 0; neg <= 2; ++neg) {
      bool exists = false;
      for (const auto& c : all)
        exists = exists || (c.kind() == kind && int(c.left().negated) + int(c.right().negated) == neg);
      if (exists) CHECK(strata.count({kind, neg}) == 1);
    }
  const ConceptSplit again = split_binary_concepts(all, 3);
  CHECK(again.test == s.test);
}

TEST_CASE("models train bottom-up and record provenance") {
  const auto& m = tiny_models();
  REQUIRE(m.training_order.size() == 14);
  for (int i = 0; i < kNumPrimitives; ++i) CHECK(m.training_order[i] == Primitive::from_index(i).name());
  CHECK(m.training_order[11] == "NOT");
  CHECK(m.training_order[12] == "AND");
  CHECK(m.training_order[13] == "OR");
  CHECK(m.primitives.size() == 11);
  CHECK(m.operators.size() == 3);

  for (const auto& r : m.records) {
    if (r.model != "AND" && r.model != "OR" && r.model != "NOT") continue;
    REQUIRE(r.train_loss.size() == 3);
    CHECK(r.train_loss[2] < r.train_loss[0]);
  }

  Rng rng(5);
  const auto lit = acre_sample_traced(m, parse_concept("red"), rng);
  CHECK(lit.chain == std::vector<std::string>{"LM(red)"});
  const auto comp = acre_sample_traced(m, parse_concept("NOT green AND triangle"), rng);
  CHECK(comp.chain == std::vector<std::string>{"LM(green)", "NOT", "LM(triangle)", "AND"});
  const auto neg = acre_sample_traced(m, parse_concept("NOT circle"), rng);
  CHECK(neg.chain == std::vector<std::string>{"LM(circle)", "NOT"});
  for (const auto& c : enumerate_concepts()) CHECK(m.has(c));
}

TEST_CASE("greedy sampling is deterministic and survives a save/load round trip") {
  const auto& m = tiny_models();
  const SampleOptions greedy{true, true};
  const auto dir = std::filesystem::temp_directory_path() / "setcomm_acre_models";
  std::filesystem::remove_all(dir);
  const_cast<AcreModelSet&>(m).save(dir);
  const AcreModelSet back = AcreModelSet::load(dir);
  CHECK(back.training_order == m.training_order);
  CHECK(back.split.test == m.split.test);
  for (const auto& c : {parse_concept("blue"), parse_concept("NOT red OR square"), parse_concept("green AND circle")}) {
    Rng a(1), b(99), d(7);
    const Message first = acre_sample(m, c, a, greedy);
    CHECK(acre_sample(m, c, b, greedy) == first);
    CHECK(acre_sample(back, c, d, greedy) == first);
    CHECK(agents::message_fits(first, m.channel));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("closest concept picks itself, a unique neighbor, or splits ties evenly") {
  Rng rng(11);
  const auto& all = enumerate_concepts();
  const Concept red = parse_concept("red");
  CHECK(closest_concept(red, all, rng) == red);

  const std::vector<Concept> pool{parse_concept("NOT red"), parse_concept("blue AND circle")};
  for (int i = 0; i < 100; ++i) CHECK(closest_concept(red, pool, rng) == pool[0]);

  const Concept target = parse_concept("red AND circle");
  const std::vector<Concept> tie{parse_concept("blue AND circle"), parse_concept("red AND square")};
  REQUIRE(concept_edit_distance(target, tie[0]) == concept_edit_distance(target, tie[1]));
  int first = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) first += closest_concept(target, tie, rng) == tie[0] ? 1 : 0;
  CHECK(std::fabs(double(first) / n - 0.5) <= 0.02);

  const AcreCorpus corpus = collect_corpus(formula_source(), all, 312, formula_channel(), 1);
  CHECK(closest_baseline(corpus, target, {tie[0]}, rng) == formula_message(tie[0]));
}

TEST_CASE("random baseline draws uniformly from the corpus") {
  Rng rng(12);
  AcreCorpus single;
  single.channel = formula_channel();
  const Concept red = parse_concept("red");
  single.concepts = {red};
  single.buckets[red.formula()] = {Message{3, 4}};
  for (int i = 0; i < 20; ++i) CHECK(random_baseline(single, rng) == Message{3, 4});

  const std::vector<Concept> six(enumerate_concepts().begin(), enumerate_concepts().begin() + 6);
  const AcreCorpus corpus = collect_corpus(formula_source(), six, 6, formula_channel(), 1);
  std::map<Message, int> counts;
  const int n = 60000;
  for (int i = 0; i < n; ++i) ++counts[random_baseline(corpus, rng)];
  CHECK(counts.size() == 6);
  const double p = 1.0 / 6, sd = std::sqrt(p * (1 - p) / n);
  for (const auto& [m, k] : counts) {
    CHECK(std::fabs(double(k) / n - p) < 4 * sd);
    bool inside = false;
    for (const auto& c : six) inside = inside || corpus.bucket(c).front() == m;
    CHECK(inside);
  }
}

TEST_CASE("evaluation rows: the teacher reproduces itself") {
  const auto& m = tiny_models();
  const AcreCorpus corpus = collect_corpus(formula_source(), enumerate_concepts(), 312, formula_channel(), 1);
  AcreEvalOptions opts;
  opts.passes = 1;
  opts.games_per_concept = 1;
  const auto rows = evaluate_acre(m, corpus, nullptr, opts);
  REQUIRE(rows.size() == 8);
  for (const auto& r : rows) {
    if (r.language == "Teacher") {
      CHECK(r.bleu1 == doctest::Approx(100.0));
      CHECK(r.bleu4 == doctest::Approx(100.0));
    }
    CHECK(r.games == (r.split == "test" ? m.split.test.size() : 312 - m.split.test.size()));
  }
  const auto again = evaluate_acre(m, corpus, nullptr, opts);
  CHECK(rows_to_tsv(rows) == rows_to_tsv(again));
}
