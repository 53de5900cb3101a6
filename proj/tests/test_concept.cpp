#include <doctest.h>

#include "setcomm/concept.hpp"
#include "setcomm/edit_distance.hpp"

#include "oracles.hpp"

#include <chrono>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>

using namespace setcomm;
using namespace oracle;

TEST_CASE("enumeration yields 312 concepts and 30 reference concepts quickly") {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& all = enumerate_concepts();
  const auto ref = enumerate_ref_concepts();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(all.size() == 312);
  CHECK(ref.size() == 30);
  CHECK(secs < 1.0);

  for (const auto& c : ref) {
    CHECK(c.kind() == ConceptKind::conjunction);
    CHECK(c.extension().size() == 1);
  }
}

TEST_CASE("enumeration matches a brute-force count of distinct non-trivial extensions") {
  std::vector<Literal> lits;
  for (auto p : Primitive::all()) {
    lits.push_back({p, false});
    lits.push_back({p, true});
  }
  auto mask_of = [](const std::function<bool(const ObjectVector&)>& f) {
    std::bitset<kNumObjects> m;
    for (const auto& z : object_universe()) m.set(z.index(), f(z));
    return m.to_ullong();
  };
  std::set<unsigned long long> masks;
  const unsigned long long full = (1ULL << kNumObjects) - 1;
  auto add = [&](unsigned long long m) {
    if (m != 0 && m != full) masks.insert(m);
  };
  for (const auto& a : lits) {
    add(mask_of([&](const ObjectVector& z) { return a.holds(z); }));
    for (const auto& b : lits) {
      add(mask_of([&](const ObjectVector& z) { return a.holds(z) && b.holds(z); }));
      add(mask_of([&](const ObjectVector& z) { return a.holds(z) || b.holds(z); }));
    }
  }
  CHECK(masks.size() == 312);

  std::set<unsigned long long> seen;
  for (const auto& c : enumerate_concepts()) {
    const auto e = c.extension();
    CHECK(!e.empty());
    CHECK(e.size() < static_cast<std::size_t>(kNumObjects));
    CHECK(seen.insert(e.mask().to_ullong()).second);
    CHECK(masks.count(e.mask().to_ullong()) == 1);
  }
}

TEST_CASE("extension agrees with satisfies") {
  for (const auto& c : enumerate_concepts()) {
    const auto e = c.extension();
    for (const auto& z : object_universe()) CHECK(e.contains(z) == c.satisfies(z));
  }
  CHECK(parse_concept("blue").extension().size() == 5);
  CHECK(parse_concept("circle").extension().size() == 6);
  CHECK(parse_concept("blue OR rectangle").extension().size() == 10);
  CHECK(parse_concept("NOT blue").extension().size() == 25);
}

TEST_CASE("formulas round-trip through the parser") {
  for (const auto& c : enumerate_concepts()) {
    const Concept back = parse_concept(c.formula());
    CHECK(back == c);
    CHECK(back.extension() == c.extension());
  }
  CHECK(parse_concept("circle and blue") == parse_concept("blue AND circle"));
  CHECK(parse_concept("not gray And circle").formula() == parse_concept("circle AND NOT gray").formula());

  std::stringstream ss;
  write_concept_list(ss, enumerate_concepts());
  CHECK(read_concept_list(ss) == enumerate_concepts());
}

TEST_CASE("parse errors name the offending token") {
  auto token_of = [](const char* text) -> std::string {
    try {
      parse_concept(text);
    } catch (const ConceptParseError& e) {
      return e.token();
    }
    return "<no error>";
  };
  CHECK(token_of("purple") == "purple");
  CHECK(token_of("blue XOR red") == "XOR");
  CHECK(token_of("blue OR NOT blue") != "<no error>");
  CHECK(token_of("blue AND NOT blue") != "<no error>");
  CHECK(token_of("blue AND red") != "<no error>");
  CHECK(token_of("") != "<no error>");
  CHECK(token_of("blue AND") != "<no error>");
  CHECK(token_of("NOT NOT blue") != "<no error>");
}

TEST_CASE("levenshtein matches recursion on every binary pair up to length 8") {
  std::vector<std::vector<int>> seqs;
  for (int len = 0; len <= 8; ++len)
    for (unsigned code = 0; code < (1u << len); ++code) seqs.push_back(bits_of(code, len));
  // Exhaustive against the recursion over lengths <= 5; the full length-8
  // square is checked on a fixed random sample.
  std::size_t mismatches = 0;
  for (const auto& a : seqs) {
    if (a.size() > 5) continue;
    for (const auto& b : seqs)
      if (b.size() <= 5 && levenshtein(a, b) != edit_oracle(a, b)) ++mismatches;
  }
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> pick(0, seqs.size() - 1);
  for (int k = 0; k < 20000; ++k) {
    const auto& a = seqs[pick(rng)];
    const auto& b = seqs[pick(rng)];
    if (levenshtein(a, b) != edit_oracle(a, b)) ++mismatches;
  }
  CHECK(mismatches == 0);
}

TEST_CASE("concept edit distance matches recursion on all concept pairs and is a metric") {
  const auto& all = enumerate_concepts();
  std::size_t mismatches = 0;
  for (const auto& a : all)
    for (const auto& b : all)
      if (concept_edit_distance(a, b) != edit_oracle(a.formula_tokens(), b.formula_tokens())) ++mismatches;
  CHECK(mismatches == 0);

  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> pick(0, all.size() - 1);
  for (int k = 0; k < 5000; ++k) {
    const auto& a = all[pick(rng)];
    const auto& b = all[pick(rng)];
    const auto& c = all[pick(rng)];
    const auto ab = concept_edit_distance(a, b);
    CHECK(ab == concept_edit_distance(b, a));
    CHECK((ab == 0) == (a == b));
    CHECK(ab <= concept_edit_distance(a, c) + concept_edit_distance(c, b));
    CHECK(ab <= 5);
  }
  CHECK(concept_edit_distance(parse_concept("blue"), parse_concept("NOT blue")) == 1);
  CHECK(concept_edit_distance(parse_concept("blue AND circle"), parse_concept("blue OR circle")) == 1);
}

TEST_CASE("hausdorff matches the double-loop oracle on all concept pairs") {
  const auto& all = enumerate_concepts();
  std::vector<Extension> ext;
  for (const auto& c : all) ext.push_back(c.extension());
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < ext.size(); ++i)
    for (std::size_t j = i; j < ext.size(); ++j)
      if (hausdorff_distance(ext[i], ext[j]) != hausdorff_oracle(ext[i], ext[j])) ++mismatches;
  CHECK(mismatches == 0);

  CHECK(hausdorff_distance(parse_concept("blue").extension(), parse_concept("blue").extension()) == 0.0);
  CHECK(hausdorff_distance(parse_concept("blue AND circle").extension(),
                           parse_concept("red AND square").extension()) == 4.0);
  const std::vector<FeatureVector> empty;
  const std::vector<FeatureVector> one{ObjectVector::from_index(0).bits()};
  CHECK_THROWS_AS(hausdorff_distance(empty, one), std::invalid_argument);
}

TEST_CASE("object feature vectors are two-hot and invertible") {
  for (const auto& z : object_universe()) {
    const auto b = z.bits();
    CHECK(b.size() == static_cast<std::size_t>(kNumPrimitives));
    int ones = 0;
    for (auto x : b) ones += x;
    CHECK(ones == 2);
    CHECK(ObjectVector::from_bits(b) == z);
    CHECK(ObjectVector::from_index(z.index()) == z);
  }
  FeatureVector bad(kNumPrimitives, 0);
  CHECK_THROWS(ObjectVector::from_bits(bad));
}
