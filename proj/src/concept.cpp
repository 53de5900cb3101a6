#include "setcomm/concept.hpp"

#include "setcomm/edit_distance.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace setcomm {

namespace {

constexpr std::array<std::string_view, kNumColors> kColorNames = {"red",    "blue",  "green",
                                                                  "yellow", "white", "gray"};
constexpr std::array<std::string_view, kNumShapes> kShapeNames = {"triangle", "square", "circle",
                                                                  "ellipse", "rectangle"};

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

std::bitset<kNumObjects> extension_mask(const Concept& c) {
  std::bitset<kNumObjects> mask;
  for (const auto& z : object_universe()) {
    if (c.satisfies(z)) mask.set(static_cast<std::size_t>(z.index()));
  }
  return mask;
}

}  // namespace

std::string_view color_name(Color c) { return kColorNames[static_cast<std::size_t>(c)]; }
std::string_view shape_name(Shape s) { return kShapeNames[static_cast<std::size_t>(s)]; }

Primitive Primitive::from_index(int index) {
  if (index < 0 || index >= kNumPrimitives) throw std::out_of_range("primitive index out of range");
  return Primitive(index);
}

std::optional<Primitive> Primitive::from_name(std::string_view name) {
  const std::string n = lower(name);
  for (int i = 0; i < kNumColors; ++i) {
    if (kColorNames[static_cast<std::size_t>(i)] == n) return Primitive(i);
  }
  for (int i = 0; i < kNumShapes; ++i) {
    if (kShapeNames[static_cast<std::size_t>(i)] == n) return Primitive(kNumColors + i);
  }
  return std::nullopt;
}

std::array<Primitive, kNumPrimitives> Primitive::all() {
  return {Primitive(0), Primitive(1), Primitive(2), Primitive(3), Primitive(4), Primitive(5),
          Primitive(6), Primitive(7), Primitive(8), Primitive(9), Primitive(10)};
}

std::string_view Primitive::name() const {
  return index_ < kNumColors ? kColorNames[static_cast<std::size_t>(index_)]
                             : kShapeNames[static_cast<std::size_t>(index_ - kNumColors)];
}

ObjectVector ObjectVector::from_index(int index) {
  if (index < 0 || index >= kNumObjects) throw std::out_of_range("object index out of range");
  return {static_cast<Color>(index / kNumShapes), static_cast<Shape>(index % kNumShapes)};
}

ObjectVector ObjectVector::from_bits(std::span<const std::uint8_t> bits) {
  if (bits.size() != static_cast<std::size_t>(kNumPrimitives)) {
    throw std::invalid_argument("object vector must have 11 bits");
  }
  int color = -1;
  int shape = -1;
  for (int i = 0; i < kNumPrimitives; ++i) {
    if (!bits[static_cast<std::size_t>(i)]) continue;
    int& slot = i < kNumColors ? color : shape;
    if (slot != -1) throw std::invalid_argument("object vector is not two-hot");
    slot = i < kNumColors ? i : i - kNumColors;
  }
  if (color < 0 || shape < 0) throw std::invalid_argument("object vector is not two-hot");
  return {static_cast<Color>(color), static_cast<Shape>(shape)};
}

FeatureVector ObjectVector::bits() const {
  FeatureVector v(kNumPrimitives, 0);
  v[static_cast<std::size_t>(color)] = 1;
  v[static_cast<std::size_t>(kNumColors + static_cast<int>(shape))] = 1;
  return v;
}

bool ObjectVector::has(Primitive p) const {
  return p.kind() == PrimitiveKind::color ? p.index() == static_cast<int>(color)
                                          : p.index() - kNumColors == static_cast<int>(shape);
}

std::string ObjectVector::name() const {
  return std::string(color_name(color)) + " " + std::string(shape_name(shape));
}

const std::array<ObjectVector, kNumObjects>& object_universe() {
  static const auto universe = [] {
    std::array<ObjectVector, kNumObjects> u{};
    for (int i = 0; i < kNumObjects; ++i) u[static_cast<std::size_t>(i)] = ObjectVector::from_index(i);
    return u;
  }();
  return universe;
}

bool canonical_less(const Literal& a, const Literal& b) {
  if (a.primitive.kind() != b.primitive.kind()) return a.primitive.kind() < b.primitive.kind();
  if (a.primitive.name() != b.primitive.name()) return a.primitive.name() < b.primitive.name();
  return a.negated < b.negated;
}

Concept::Concept(bool conjunctive, Literal a, Literal b)
    : left_(a), right_(b), binary_(true), conjunctive_(conjunctive) {
  if (canonical_less(right_, left_)) std::swap(left_, right_);
}

Concept Concept::conjunction(Literal a, Literal b) { return Concept(true, a, b); }
Concept Concept::disjunction(Literal a, Literal b) { return Concept(false, a, b); }

ConceptKind Concept::kind() const {
  if (binary_) return conjunctive_ ? ConceptKind::conjunction : ConceptKind::disjunction;
  return left_.negated ? ConceptKind::negation : ConceptKind::primitive;
}

std::vector<Concept> Concept::arguments() const {
  switch (kind()) {
    case ConceptKind::primitive:
      return {};
    case ConceptKind::negation:
      return {Concept::primitive(left_.primitive)};
    default:
      return {Concept::literal(left_), Concept::literal(right_)};
  }
}

bool Concept::satisfies(const ObjectVector& z) const {
  if (!binary_) return left_.holds(z);
  return conjunctive_ ? (left_.holds(z) && right_.holds(z)) : (left_.holds(z) || right_.holds(z));
}

Extension Concept::extension() const { return Extension(extension_mask(*this)); }

std::vector<std::string> Concept::formula_tokens() const {
  std::vector<std::string> out;
  auto emit = [&out](const Literal& l) {
    if (l.negated) out.emplace_back("NOT");
    out.emplace_back(l.primitive.name());
  };
  emit(left_);
  if (binary_) {
    out.emplace_back(conjunctive_ ? "AND" : "OR");
    emit(right_);
  }
  return out;
}

std::string Concept::formula() const {
  std::string s;
  for (const auto& t : formula_tokens()) {
    if (!s.empty()) s += ' ';
    s += t;
  }
  return s;
}

std::ostream& operator<<(std::ostream& os, const Concept& c) { return os << c.formula(); }

std::vector<ObjectVector> Extension::members() const {
  std::vector<ObjectVector> out;
  for (int i = 0; i < kNumObjects; ++i) {
    if (mask_.test(static_cast<std::size_t>(i))) out.push_back(ObjectVector::from_index(i));
  }
  return out;
}

std::vector<FeatureVector> Extension::feature_vectors() const {
  std::vector<FeatureVector> out;
  for (const auto& z : members()) out.push_back(z.bits());
  return out;
}

Concept parse_concept(std::string_view text) {
  std::vector<std::string> tokens;
  {
    std::istringstream is{std::string(text)};
    std::string t;
    while (is >> t) tokens.push_back(t);
  }
  if (tokens.empty()) throw ConceptParseError("empty formula", "");

  std::size_t pos = 0;
  auto parse_literal = [&]() -> Literal {
    if (pos >= tokens.size()) {
      throw ConceptParseError("formula ends where an operand was expected", "");
    }
    bool negated = false;
    if (upper(tokens[pos]) == "NOT") {
      negated = true;
      ++pos;
      if (pos >= tokens.size()) throw ConceptParseError("NOT is missing its operand", tokens[pos - 1]);
    }
    const std::string& tok = tokens[pos];
    const std::string up = upper(tok);
    if (up == "NOT" || up == "AND" || up == "OR") {
      throw ConceptParseError("expected a color or shape but found '" + tok + "'", tok);
    }
    auto prim = Primitive::from_name(tok);
    if (!prim) throw ConceptParseError("unknown token '" + tok + "'", tok);
    ++pos;
    return Literal{*prim, negated};
  };

  const Literal first = parse_literal();
  if (pos == tokens.size()) return Concept::literal(first);

  const std::string op_tok = tokens[pos];
  const std::string op = upper(op_tok);
  if (op != "AND" && op != "OR") {
    throw ConceptParseError("expected AND or OR but found '" + op_tok + "'", op_tok);
  }
  ++pos;
  const Literal second = parse_literal();
  if (pos != tokens.size()) {
    throw ConceptParseError("formula is deeper than one connective at '" + tokens[pos] + "'",
                            tokens[pos]);
  }
  Concept c = op == "AND" ? Concept::conjunction(first, second) : Concept::disjunction(first, second);
  const auto mask = extension_mask(c);
  if (mask.none()) throw ConceptParseError("formula is unsatisfiable: " + c.formula(), op_tok);
  if (mask.all()) throw ConceptParseError("formula is a tautology: " + c.formula(), op_tok);
  return c;
}

const std::vector<Concept>& enumerate_concepts() {
  static const std::vector<Concept> concepts = [] {
    std::vector<Literal> literals;
    for (auto p : Primitive::all()) literals.push_back({p, false});
    for (auto p : Primitive::all()) literals.push_back({p, true});

    std::vector<Concept> out;
    std::unordered_set<unsigned long> seen;
    auto offer = [&](const Concept& c) {
      const auto mask = extension_mask(c);
      if (mask.none() || mask.all()) return;
      if (!seen.insert(mask.to_ulong()).second) return;
      out.push_back(c);
    };
    for (const auto& l : literals) offer(Concept::literal(l));
    for (bool conj : {true, false}) {
      for (std::size_t i = 0; i < literals.size(); ++i) {
        for (std::size_t j = i + 1; j < literals.size(); ++j) {
          offer(conj ? Concept::conjunction(literals[i], literals[j])
                     : Concept::disjunction(literals[i], literals[j]));
        }
      }
    }
    return out;
  }();
  return concepts;
}

std::vector<Concept> enumerate_ref_concepts() {
  std::vector<Concept> out;
  for (int c = 0; c < kNumColors; ++c) {
    for (int s = 0; s < kNumShapes; ++s) {
      out.push_back(Concept::conjunction({Primitive::of(static_cast<Color>(c)), false},
                                         {Primitive::of(static_cast<Shape>(s)), false}));
    }
  }
  return out;
}

std::size_t concept_edit_distance(const Concept& a, const Concept& b) {
  return levenshtein(a.formula_tokens(), b.formula_tokens());
}

std::size_t hamming_distance(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw std::invalid_argument("hamming_distance: length mismatch");
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] != 0) != (b[i] != 0) ? 1 : 0;
  return d;
}

namespace {
double directed_hausdorff(std::span<const FeatureVector> from, std::span<const FeatureVector> to) {
  double worst = 0.0;
  for (const auto& x : from) {
    std::size_t best = std::numeric_limits<std::size_t>::max();
    for (const auto& y : to) best = std::min(best, hamming_distance(x, y));
    worst = std::max(worst, static_cast<double>(best));
  }
  return worst;
}
}  // namespace

double hausdorff_distance(std::span<const FeatureVector> a, std::span<const FeatureVector> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("hausdorff_distance: empty set");
  return std::max(directed_hausdorff(a, b), directed_hausdorff(b, a));
}

double hausdorff_distance(const Extension& a, const Extension& b) {
  const auto fa = a.feature_vectors();
  const auto fb = b.feature_vectors();
  return hausdorff_distance(fa, fb);
}

void write_concept_list(std::ostream& os, std::span<const Concept> concepts) {
  for (const auto& c : concepts) os << c.formula() << '\n';
}

std::vector<Concept> read_concept_list(std::istream& is) {
  std::vector<Concept> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_concept(line));
  }
  return out;
}

}  // namespace setcomm
