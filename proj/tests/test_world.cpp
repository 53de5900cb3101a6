#include <doctest.h>

#include "setcomm/world.hpp"

#include <algorithm>
#include <functional>
#include <set>
#include <sstream>

using namespace setcomm;
using namespace setcomm::world;

namespace {

int count_if_objects(const std::vector<ObjectVector>& xs, const std::function<bool(const ObjectVector&)>& f) {
  int n = 0;
  for (const auto& z : xs) n += f(z) ? 1 : 0;
  return n;
}

bool on_primitive(const ObjectVector& z, const char* name) { return z.has(*Primitive::from_name(name)); }

}  // namespace

TEST_CASE("rendering is deterministic and keeps the object inside the frame") {
  RenderConfig cfg;
  Rng a(5), b(5);
  const auto z = ObjectVector{Color::red, Shape::triangle};
  CHECK(render_scene(z, cfg, a).pixels == render_scene(z, cfg, b).pixels);

  Rng rng(17);
  int outside = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto obj = ObjectVector::from_index(i % kNumObjects);
    if (!pose_inside_frame(obj.shape, render_scene(obj, cfg, rng).pose, cfg.resolution)) ++outside;
  }
  CHECK(outside == 0);

  // Black background and 4x4 supersampling: coverage of any border pixel is at
  // most half, so it never exceeds half the brightest (fully covered) pixel.
  RenderConfig dark = cfg;
  dark.background_max = 0.0f;
  dark.supersample = 4;
  int border_hits = 0;
  for (int i = 0; i < 600; ++i) {
    const Scene s = render_scene(ObjectVector::from_index(i % kNumObjects), dark, rng);
    const float peak = *std::max_element(s.pixels.begin(), s.pixels.end());
    const int r = s.resolution;
    for (int k = 0; k < r; ++k) {
      for (auto [x, y] : {std::pair{k, 0}, std::pair{k, r - 1}, std::pair{0, k}, std::pair{r - 1, k}}) {
        for (int ch = 0; ch < 3; ++ch)
          if (s.pixels[(static_cast<std::size_t>(y) * r + x) * 3 + ch] > 0.5f * peak + 1e-5f) ++border_hits;
      }
    }
  }
  CHECK(border_hits == 0);
}

TEST_CASE("rendered hue follows the object color") {
  RenderConfig cfg;
  Rng rng(2);
  for (Color c : {Color::red, Color::green, Color::blue}) {
    const Scene s = render_scene({c, Shape::square}, cfg, rng);
    double sum[3] = {0, 0, 0};
    for (std::size_t i = 0; i < s.pixels.size(); i += 3) {
      const float mx = std::max({s.pixels[i], s.pixels[i + 1], s.pixels[i + 2]});
      if (mx <= cfg.background_max + 0.3f) continue;
      for (int ch = 0; ch < 3; ++ch) sum[ch] += s.pixels[i + ch];
    }
    const int want = c == Color::red ? 0 : c == Color::green ? 1 : 2;
    for (int ch = 0; ch < 3; ++ch)
      if (ch != want) CHECK(sum[want] > 2 * sum[ch]);
  }
}

TEST_CASE("quota split gives the remainder left, right, then both") {
  CHECK(split_quota(9) == std::array<int, 3>{3, 3, 3});
  CHECK(split_quota(10) == std::array<int, 3>{4, 3, 3});
  CHECK(split_quota(11) == std::array<int, 3>{4, 4, 3});
  CHECK(split_quota(0) == std::array<int, 3>{0, 0, 0});
}

TEST_CASE("disjunction targets meet the left-only / right-only / both quotas") {
  const Concept c = parse_concept("blue OR rectangle");
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pools = sample_hard_pools(c, 9, 9, rng);
    CHECK_FALSE(pools.used_fallback);
    auto blue = [](const ObjectVector& z) { return on_primitive(z, "blue"); };
    auto rect = [](const ObjectVector& z) { return on_primitive(z, "rectangle"); };
    CHECK(count_if_objects(pools.targets, [&](auto& z) { return blue(z) && !rect(z); }) == 3);
    CHECK(count_if_objects(pools.targets, [&](auto& z) { return !blue(z) && rect(z); }) == 3);
    CHECK(count_if_objects(pools.targets, [&](auto& z) { return blue(z) && rect(z); }) == 3);
    CHECK(count_if_objects(pools.distractors, [&](auto& z) { return c.satisfies(z); }) == 0);
  }
}

TEST_CASE("conjunction distractors meet the fail-side quotas") {
  const Concept c = parse_concept("gray AND NOT circle");
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pools = sample_hard_pools(c, 9, 9, rng);
    CHECK_FALSE(pools.used_fallback);
    auto gray = [](const ObjectVector& z) { return on_primitive(z, "gray"); };
    auto circ = [](const ObjectVector& z) { return on_primitive(z, "circle"); };
    CHECK(count_if_objects(pools.distractors, [&](auto& z) { return gray(z) && circ(z); }) == 3);
    CHECK(count_if_objects(pools.distractors, [&](auto& z) { return !gray(z) && !circ(z); }) == 3);
    CHECK(count_if_objects(pools.distractors, [&](auto& z) { return !gray(z) && circ(z); }) == 3);
    CHECK(count_if_objects(pools.targets, [&](auto& z) { return !c.satisfies(z); }) == 0);
  }
}

TEST_CASE("literal pools are pure and empty sub-regions fall back") {
  Rng rng(3);
  const auto pools = sample_hard_pools(parse_concept("red"), 10, 10, rng);
  CHECK(pools.targets.size() == 10);
  CHECK(pools.distractors.size() == 10);
  for (const auto& z : pools.targets) CHECK(z.color == Color::red);
  for (const auto& z : pools.distractors) CHECK(z.color != Color::red);

  // Left-only region (red AND blue) is empty.
  const Concept c = parse_concept("red OR NOT blue");
  const auto before = hard_sampling_fallbacks();
  const auto fb = sample_hard_pools(c, 9, 9, rng);
  CHECK(fb.used_fallback);
  CHECK(hard_sampling_fallbacks() == before + 1);
  for (const auto& z : fb.targets) CHECK(c.satisfies(z));
  for (const auto& z : fb.distractors) CHECK_FALSE(c.satisfies(z));
}

TEST_CASE("every enumerated concept yields correctly labeled pools") {
  for (const auto& c : enumerate_concepts()) {
    const BaseGame base = make_base_game(c, 99, 40);
    REQUIRE(base.target_pool.size() == 40);
    REQUIRE(base.distractor_pool.size() == 40);
    for (const auto& s : base.target_pool) CHECK(c.satisfies(s.object));
    for (const auto& s : base.distractor_pool) CHECK_FALSE(c.satisfies(s.object));
  }
}

TEST_CASE("augment respects the three game types") {
  RenderConfig render;
  render.resolution = 16;
  const Concept c = parse_concept("blue OR rectangle");
  const BaseGame base = make_base_game(c, 7, 40);
  Rng rng(4);

  const Game ref = augment(base, GameType::ref, 10, 10, render, rng);
  REQUIRE(ref.teacher_inputs.size() == 20);
  for (int i = 1; i < 10; ++i) CHECK(ref.teacher_inputs[i].pixels == ref.teacher_inputs[0].pixels);
  CHECK(ref.student_labels == ref.teacher_labels);

  const Game setref = augment(base, GameType::setref, 10, 10, render, rng);
  for (std::size_t i = 0; i < setref.teacher_inputs.size(); ++i)
    CHECK(setref.teacher_inputs[i].pixels == setref.student_inputs[i].pixels);
  std::set<std::vector<float>> distinct_targets;
  for (int i = 0; i < 10; ++i) distinct_targets.insert(setref.teacher_inputs[i].pixels);
  CHECK(distinct_targets.size() > 1);

  const Game concept_game = augment(base, GameType::concept_game, 10, 10, render, rng);
  bool differs = false;
  for (std::size_t i = 0; i < 10; ++i)
    differs = differs || concept_game.teacher_inputs[i].pixels != concept_game.student_inputs[i].pixels;
  CHECK(differs);

  for (const Game* g : {&ref, &setref, &concept_game}) {
    int pos = 0;
    for (std::size_t i = 0; i < g->teacher_inputs.size(); ++i) {
      CHECK(g->teacher_labels[i] == c.satisfies(g->teacher_inputs[i].object));
      CHECK(g->student_labels[i] == c.satisfies(g->student_inputs[i].object));
      pos += g->teacher_labels[i] ? 1 : 0;
    }
    CHECK(pos == 10);
  }
  CHECK_THROWS_AS(augment(base, GameType::setref, 41, 10, render, rng), std::invalid_argument);
}

TEST_CASE("dataset splits, sizes and manifest round-trip") {
  DatasetConfig cfg;
  cfg.seed = 12;
  cfg.n_base = 600;
  const Dataset ds = build_shapeworld_dataset(cfg);
  CHECK(ds.seen.size() == 250);
  CHECK(ds.unseen.size() == 62);
  CHECK(ds.val.size() == 2000);
  CHECK(ds.test.size() == 2000);
  CHECK(ds.train.size() == 600);
  std::set<std::string> seen;
  for (const auto& c : ds.seen) seen.insert(c.formula());
  for (const auto& c : ds.unseen) CHECK(seen.count(c.formula()) == 0);
  for (const auto& r : ds.train) CHECK(seen.count(r.target_concept.formula()) == 1);
  for (const auto& r : ds.test) CHECK((seen.count(r.target_concept.formula()) == 1) == is_seen(r.split));

  DatasetConfig refcfg = cfg;
  refcfg.reference_concepts = true;
  const Dataset ref = build_shapeworld_dataset(refcfg);
  CHECK(ref.seen.size() + ref.unseen.size() == 30);

  std::stringstream a, b;
  write_manifest(a, ds);
  write_manifest(b, build_shapeworld_dataset(cfg));
  CHECK(a.str() == b.str());

  const Dataset back = read_manifest(a);
  std::stringstream c;
  write_manifest(c, back);
  CHECK(c.str() == b.str());

  DatasetConfig other = cfg;
  other.seed = 13;
  std::stringstream d;
  write_manifest(d, build_shapeworld_dataset(other));
  CHECK(d.str() != b.str());
}

TEST_CASE("materialize is deterministic per record and augment seed") {
  DatasetConfig cfg;
  cfg.seed = 3;
  cfg.n_base = 10;
  cfg.n_val = 4;
  cfg.n_test = 4;
  const Dataset ds = build_shapeworld_dataset(cfg);
  RenderConfig render;
  render.resolution = 16;
  const Game g1 = materialize(ds.train[0], GameType::concept_game, {}, render, 77);
  const Game g2 = materialize(ds.train[0], GameType::concept_game, {}, render, 77);
  const Game g3 = materialize(ds.train[0], GameType::concept_game, {}, render, 78);
  bool same = true, differs = false;
  for (std::size_t i = 0; i < g1.teacher_inputs.size(); ++i) {
    same = same && g1.teacher_inputs[i].pixels == g2.teacher_inputs[i].pixels;
    differs = differs || g1.teacher_inputs[i].pixels != g3.teacher_inputs[i].pixels;
  }
  CHECK(same);
  CHECK(differs);
  CHECK(parse_game_type(game_type_name(GameType::setref)) == GameType::setref);
  CHECK(parse_split(split_name(Split::val_unseen)) == Split::val_unseen);
}
