#pragma once

// Logical concepts over the ShapeWorld object universe: 6 colors x 5 shapes.
// A concept is a literal (possibly negated primitive) or one AND/OR over two
// literals. Concepts are stored in canonical operand order so equal formulas
// compare equal.

#include <array>
#include <bitset>
#include <compare>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace setcomm {

enum class Color : std::uint8_t { red, blue, green, yellow, white, gray };
enum class Shape : std::uint8_t { triangle, square, circle, ellipse, rectangle };

inline constexpr int kNumColors = 6;
inline constexpr int kNumShapes = 5;
inline constexpr int kNumPrimitives = kNumColors + kNumShapes;
inline constexpr int kNumObjects = kNumColors * kNumShapes;

std::string_view color_name(Color c);
std::string_view shape_name(Shape s);

enum class PrimitiveKind : std::uint8_t { color, shape };

// One of the 11 primitive predicates. The index doubles as the bit position in
// an object's two-hot feature vector (colors 0-5, shapes 6-10).
class Primitive {
 public:
  static Primitive of(Color c) { return Primitive(static_cast<int>(c)); }
  static Primitive of(Shape s) { return Primitive(kNumColors + static_cast<int>(s)); }
  static Primitive from_index(int index);
  static std::optional<Primitive> from_name(std::string_view name);
  static std::array<Primitive, kNumPrimitives> all();

  int index() const { return index_; }
  PrimitiveKind kind() const { return index_ < kNumColors ? PrimitiveKind::color : PrimitiveKind::shape; }
  std::string_view name() const;

  friend bool operator==(Primitive, Primitive) = default;

 private:
  explicit Primitive(int index) : index_(index) {}
  int index_;
};

using FeatureVector = std::vector<std::uint8_t>;

// A single object: exactly one color and one shape.
struct ObjectVector {
  Color color;
  Shape shape;

  int index() const { return static_cast<int>(color) * kNumShapes + static_cast<int>(shape); }
  static ObjectVector from_index(int index);
  // Inverse of bits(); throws unless exactly one color and one shape bit are set.
  static ObjectVector from_bits(std::span<const std::uint8_t> bits);
  FeatureVector bits() const;
  bool has(Primitive p) const;
  std::string name() const;

  friend bool operator==(const ObjectVector&, const ObjectVector&) = default;
};

// All 30 objects, ordered by index().
const std::array<ObjectVector, kNumObjects>& object_universe();

struct Literal {
  Primitive primitive;
  bool negated = false;

  bool holds(const ObjectVector& z) const { return z.has(primitive) != negated; }
  friend bool operator==(const Literal&, const Literal&) = default;
};

// Canonical operand order: colors before shapes, then alphabetical by name,
// then plain before negated.
bool canonical_less(const Literal& a, const Literal& b);

enum class ConceptKind : std::uint8_t { primitive, negation, conjunction, disjunction };

class Extension;

class Concept {
 public:
  static Concept primitive(Primitive p) { return Concept(Literal{p, false}); }
  static Concept negation(Primitive p) { return Concept(Literal{p, true}); }
  static Concept literal(Literal l) { return Concept(l); }
  static Concept conjunction(Literal a, Literal b);
  static Concept disjunction(Literal a, Literal b);

  ConceptKind kind() const;
  bool is_literal() const { return !binary_; }
  // Left/right literals; right() is only meaningful for binary concepts.
  const Literal& left() const { return left_; }
  const Literal& right() const { return right_; }
  // Sub-concepts one level down: the primitive under a negation, or the two
  // literal operands of a connective. Empty for a primitive.
  std::vector<Concept> arguments() const;

  bool satisfies(const ObjectVector& z) const;
  Extension extension() const;

  std::vector<std::string> formula_tokens() const;
  std::string formula() const;

  friend bool operator==(const Concept&, const Concept&) = default;

 private:
  explicit Concept(Literal l) : left_(l), right_(l) {}
  Concept(bool conjunctive, Literal a, Literal b);

  Literal left_;
  Literal right_;
  bool binary_ = false;
  bool conjunctive_ = false;
};

std::ostream& operator<<(std::ostream& os, const Concept& c);

// The set of universe objects satisfying a concept.
class Extension {
 public:
  Extension() = default;
  explicit Extension(std::bitset<kNumObjects> mask) : mask_(mask) {}

  const std::bitset<kNumObjects>& mask() const { return mask_; }
  std::size_t size() const { return mask_.count(); }
  bool empty() const { return mask_.none(); }
  bool contains(const ObjectVector& z) const { return mask_.test(static_cast<std::size_t>(z.index())); }
  std::vector<ObjectVector> members() const;
  std::vector<FeatureVector> feature_vectors() const;

  friend bool operator==(const Extension&, const Extension&) = default;

 private:
  std::bitset<kNumObjects> mask_;
};

class ConceptParseError : public std::runtime_error {
 public:
  ConceptParseError(const std::string& message, std::string token)
      : std::runtime_error(message), token_(std::move(token)) {}
  const std::string& token() const { return token_; }

 private:
  std::string token_;
};

// Parses a whitespace-separated infix formula such as "NOT gray AND circle".
// Operators are case-insensitive. Throws ConceptParseError naming the
// offending token, including for tautologies and unsatisfiable formulas.
Concept parse_concept(std::string_view text);

// The 312 satisfiable, non-tautological concepts, deduplicated by extension.
// Literals come first, then conjunctions, then disjunctions; within an
// equivalence class the first formula generated is kept.
const std::vector<Concept>& enumerate_concepts();
// The 30 color AND shape conjunctions used by reference games.
std::vector<Concept> enumerate_ref_concepts();

std::size_t concept_edit_distance(const Concept& a, const Concept& b);

std::size_t hamming_distance(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);
// Hausdorff distance between two non-empty sets of equal-length boolean
// vectors under Hamming distance. Throws std::invalid_argument on empty input.
double hausdorff_distance(std::span<const FeatureVector> a, std::span<const FeatureVector> b);
double hausdorff_distance(const Extension& a, const Extension& b);

// Line-delimited formula lists.
void write_concept_list(std::ostream& os, std::span<const Concept> concepts);
std::vector<Concept> read_concept_list(std::istream& is);

}  // namespace setcomm
