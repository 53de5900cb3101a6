#include "setcomm/world.hpp"

#include "setcomm/log.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <mutex>
#include <numbers>
#include <set>
#include <stdexcept>

namespace setcomm::world {

namespace {

constexpr float kSquareHalf = 0.8f;  // of the nominal half-size
constexpr float kThinAxis = 0.55f;   // ellipse and rectangle minor/major ratio

struct Rgb {
  float r, g, b;
};

Rgb base_color(Color c) {
  switch (c) {
    case Color::red: return {0.86f, 0.14f, 0.14f};
    case Color::blue: return {0.18f, 0.32f, 0.92f};
    case Color::green: return {0.14f, 0.74f, 0.2f};
    case Color::yellow: return {0.92f, 0.86f, 0.14f};
    case Color::white: return {0.94f, 0.94f, 0.92f};
    case Color::gray: return {0.55f, 0.55f, 0.55f};
  }
  return {0, 0, 0};
}

// Inside test in object-local coordinates, scaled so the nominal half-size is 1.
bool inside_unit_shape(Shape shape, float u, float v) {
  switch (shape) {
    case Shape::circle: return u * u + v * v <= 1.0f;
    case Shape::ellipse: return u * u + (v * v) / (kThinAxis * kThinAxis) <= 1.0f;
    case Shape::square: return std::fabs(u) <= kSquareHalf && std::fabs(v) <= kSquareHalf;
    case Shape::rectangle: return std::fabs(u) <= 1.0f && std::fabs(v) <= kThinAxis;
    case Shape::triangle: {
      // Equilateral, circumradius 1, apex up (v grows downward in image space).
      const float s3 = std::sqrt(3.0f);
      if (v > 0.5f) return false;
      return s3 * u - v <= 1.0f && -s3 * u - v <= 1.0f;
    }
  }
  return false;
}

std::atomic<std::uint64_t> g_fallbacks{0};
std::mutex g_warned_mutex;
std::set<std::string> g_warned;

void warn_fallback(const Concept& c, const char* side) {
  ++g_fallbacks;
  std::lock_guard lock(g_warned_mutex);
  const std::string key = c.formula() + "|" + side;
  if (g_warned.insert(key).second) {
    log_warn("hard sampling: empty sub-region for '" + c.formula() + "' " + side +
             "; sampling uniformly instead");
  }
}

std::vector<ObjectVector> region(const std::function<bool(const ObjectVector&)>& pred) {
  std::vector<ObjectVector> out;
  for (const auto& z : object_universe()) {
    if (pred(z)) out.push_back(z);
  }
  return out;
}

void draw(const std::vector<ObjectVector>& from, int n, Rng& rng, std::vector<ObjectVector>& out) {
  if (n > 0 && from.empty()) throw std::logic_error("cannot sample from an empty region");
  std::uniform_int_distribution<std::size_t> pick(0, from.empty() ? 0 : from.size() - 1);
  for (int i = 0; i < n; ++i) out.push_back(from[pick(rng)]);
}

// Samples n objects split across three regions; falls back to `whole` when any
// region is empty.
bool draw_split(const std::array<std::vector<ObjectVector>, 3>& parts,
                const std::vector<ObjectVector>& whole, int n, Rng& rng,
                std::vector<ObjectVector>& out) {
  const bool ok = std::none_of(parts.begin(), parts.end(), [](const auto& p) { return p.empty(); });
  if (!ok) {
    draw(whole, n, rng, out);
    return false;
  }
  const auto quota = split_quota(n);
  for (std::size_t i = 0; i < 3; ++i) draw(parts[i], quota[i], rng, out);
  return true;
}

std::vector<std::size_t> choose(std::size_t pool, int k, Rng& rng) {
  if (k < 0 || static_cast<std::size_t>(k) > pool) {
    throw std::invalid_argument("augment: pool holds " + std::to_string(pool) + " scenes but " +
                                std::to_string(k) + " were requested");
  }
  std::vector<std::size_t> idx(pool);
  for (std::size_t i = 0; i < pool; ++i) idx[i] = i;
  // Partial Fisher-Yates.
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> d(static_cast<std::size_t>(i), pool - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[d(rng)]);
  }
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

void draw_view(const BaseGame& base, int n_targets, int n_distractors, bool single_target,
               const RenderConfig& render, Rng& rng, std::vector<Scene>& scenes,
               std::vector<bool>& labels) {
  if (single_target) {
    const auto t = choose(base.target_pool.size(), 1, rng);
    const Scene target = base.target_pool[t[0]].render(render);
    for (int i = 0; i < n_targets; ++i) {
      scenes.push_back(target);
      labels.push_back(true);
    }
  } else {
    for (auto i : choose(base.target_pool.size(), n_targets, rng)) {
      scenes.push_back(base.target_pool[i].render(render));
      labels.push_back(true);
    }
  }
  for (auto i : choose(base.distractor_pool.size(), n_distractors, rng)) {
    scenes.push_back(base.distractor_pool[i].render(render));
    labels.push_back(false);
  }
}

}  // namespace

std::string_view game_type_name(GameType t) {
  switch (t) {
    case GameType::ref: return "ref";
    case GameType::setref: return "setref";
    case GameType::concept_game: return "concept";
  }
  return "?";
}

GameType parse_game_type(std::string_view name) {
  if (name == "ref") return GameType::ref;
  if (name == "setref") return GameType::setref;
  if (name == "concept") return GameType::concept_game;
  throw std::invalid_argument("unknown game type '" + std::string(name) + "'");
}

float bounding_radius(Shape shape, float size) {
  const float half = size / 2.0f;
  switch (shape) {
    case Shape::square: return half * kSquareHalf * std::sqrt(2.0f);
    case Shape::rectangle: return half * std::sqrt(1.0f + kThinAxis * kThinAxis);
    default: return half;
  }
}

bool pose_inside_frame(Shape shape, const Pose& pose, int resolution) {
  const float r = bounding_radius(shape, pose.size);
  return pose.center_x - r >= 0.0f && pose.center_y - r >= 0.0f &&
         pose.center_x + r <= static_cast<float>(resolution) &&
         pose.center_y + r <= static_cast<float>(resolution);
}

Scene render_scene(const ObjectVector& z, const RenderConfig& config, Rng& rng) {
  const int res = config.resolution;
  if (res < 8) throw std::invalid_argument("render_scene: resolution too small");
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);

  Scene scene;
  scene.resolution = res;
  scene.object = z;
  Pose& pose = scene.pose;
  const float nominal = 0.56f * static_cast<float>(res);
  pose.size = nominal * (1.0f + config.size_jitter * (2.0f * unit(rng) - 1.0f));
  pose.rotation = z.shape == Shape::circle ? 0.0f : unit(rng) * 2.0f * std::numbers::pi_v<float>;
  const float margin = bounding_radius(z.shape, pose.size) + 0.5f;
  const float span = std::max(0.0f, static_cast<float>(res) - 2.0f * margin);
  pose.center_x = margin + unit(rng) * span;
  pose.center_y = margin + unit(rng) * span;

  Rgb col = base_color(z.color);
  const float jitter = 0.04f;
  col.r = std::clamp(col.r + jitter * (2.0f * unit(rng) - 1.0f), 0.0f, 1.0f);
  col.g = std::clamp(col.g + jitter * (2.0f * unit(rng) - 1.0f), 0.0f, 1.0f);
  col.b = std::clamp(col.b + jitter * (2.0f * unit(rng) - 1.0f), 0.0f, 1.0f);

  scene.pixels.resize(static_cast<std::size_t>(res) * res * 3);
  for (auto& p : scene.pixels) p = unit(rng) * config.background_max;

  const float half = pose.size / 2.0f;
  const float c = std::cos(pose.rotation);
  const float s = std::sin(pose.rotation);
  const int ss = std::max(1, config.supersample);
  const float inv = 1.0f / static_cast<float>(ss * ss);
  for (int y = 0; y < res; ++y) {
    for (int x = 0; x < res; ++x) {
      int hits = 0;
      for (int sy = 0; sy < ss; ++sy) {
        for (int sx = 0; sx < ss; ++sx) {
          const float px = static_cast<float>(x) + (static_cast<float>(sx) + 0.5f) / static_cast<float>(ss);
          const float py = static_cast<float>(y) + (static_cast<float>(sy) + 0.5f) / static_cast<float>(ss);
          const float dx = px - pose.center_x;
          const float dy = py - pose.center_y;
          const float u = (c * dx + s * dy) / half;
          const float v = (-s * dx + c * dy) / half;
          if (inside_unit_shape(z.shape, u, v)) ++hits;
        }
      }
      if (hits == 0) continue;
      const float a = static_cast<float>(hits) * inv;
      float* p = &scene.pixels[(static_cast<std::size_t>(y) * res + x) * 3];
      p[0] = a * col.r + (1.0f - a) * p[0];
      p[1] = a * col.g + (1.0f - a) * p[1];
      p[2] = a * col.b + (1.0f - a) * p[2];
    }
  }
  return scene;
}

Scene SceneSpec::render(const RenderConfig& config) const {
  Rng rng(render_seed);
  return render_scene(object, config, rng);
}

std::array<int, 3> split_quota(int n) {
  const int base = n / 3;
  const int rem = n % 3;
  return {base + (rem > 0 ? 1 : 0), base + (rem > 1 ? 1 : 0), base};
}

HardPools sample_hard_pools(const Concept& c, int n_pos, int n_neg, Rng& rng) {
  if (n_pos < 0 || n_neg < 0) throw std::invalid_argument("sample_hard_pools: negative count");
  const auto positives = region([&](const ObjectVector& z) { return c.satisfies(z); });
  const auto negatives = region([&](const ObjectVector& z) { return !c.satisfies(z); });
  if ((n_pos > 0 && positives.empty()) || (n_neg > 0 && negatives.empty())) {
    throw std::invalid_argument("sample_hard_pools: concept has no members or non-members");
  }

  HardPools pools;
  const Literal l = c.left();
  const Literal r = c.right();
  switch (c.kind()) {
    case ConceptKind::disjunction: {
      const std::array<std::vector<ObjectVector>, 3> parts = {
          region([&](const ObjectVector& z) { return l.holds(z) && !r.holds(z); }),
          region([&](const ObjectVector& z) { return !l.holds(z) && r.holds(z); }),
          region([&](const ObjectVector& z) { return l.holds(z) && r.holds(z); })};
      if (!draw_split(parts, positives, n_pos, rng, pools.targets)) {
        pools.used_fallback = true;
        warn_fallback(c, "targets");
      }
      draw(negatives, n_neg, rng, pools.distractors);
      break;
    }
    case ConceptKind::conjunction: {
      draw(positives, n_pos, rng, pools.targets);
      const std::array<std::vector<ObjectVector>, 3> parts = {
          region([&](const ObjectVector& z) { return !l.holds(z) && r.holds(z); }),
          region([&](const ObjectVector& z) { return l.holds(z) && !r.holds(z); }),
          region([&](const ObjectVector& z) { return !l.holds(z) && !r.holds(z); })};
      if (!draw_split(parts, negatives, n_neg, rng, pools.distractors)) {
        pools.used_fallback = true;
        warn_fallback(c, "distractors");
      }
      break;
    }
    default:
      draw(positives, n_pos, rng, pools.targets);
      draw(negatives, n_neg, rng, pools.distractors);
  }
  std::shuffle(pools.targets.begin(), pools.targets.end(), rng);
  std::shuffle(pools.distractors.begin(), pools.distractors.end(), rng);
  return pools;
}

std::uint64_t hard_sampling_fallbacks() { return g_fallbacks.load(); }

BaseGame make_base_game(const Concept& c, std::uint64_t pool_seed, int pool_size) {
  Rng rng(pool_seed);
  auto pools = sample_hard_pools(c, pool_size, pool_size, rng);
  BaseGame base{c, {}, {}};
  for (const auto& z : pools.targets) base.target_pool.push_back({z, rng()});
  for (const auto& z : pools.distractors) base.distractor_pool.push_back({z, rng()});
  return base;
}

Game augment(const BaseGame& base, GameType type, int n_targets, int n_distractors,
             const RenderConfig& render, Rng& rng) {
  Game g{type, base.target_concept, {}, {}, {}, {}};
  draw_view(base, n_targets, n_distractors, type == GameType::ref, render, rng, g.teacher_inputs,
            g.teacher_labels);
  if (type == GameType::concept_game) {
    draw_view(base, n_targets, n_distractors, false, render, rng, g.student_inputs,
              g.student_labels);
  } else {
    g.student_inputs = g.teacher_inputs;
    g.student_labels = g.teacher_labels;
  }
  return g;
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val_seen: return "val_seen";
    case Split::val_unseen: return "val_unseen";
    case Split::test_seen: return "test_seen";
    case Split::test_unseen: return "test_unseen";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  for (Split s : {Split::train, Split::val_seen, Split::val_unseen, Split::test_seen, Split::test_unseen}) {
    if (split_name(s) == name) return s;
  }
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

bool is_seen(Split s) { return s == Split::train || s == Split::val_seen || s == Split::test_seen; }

Dataset build_shapeworld_dataset(const DatasetConfig& config) {
  if (config.seen_fraction <= 0.0 || config.seen_fraction > 1.0) {
    throw std::invalid_argument("seen_fraction must be in (0, 1]");
  }
  Dataset ds;
  ds.config = config;
  std::vector<Concept> all =
      config.reference_concepts ? enumerate_ref_concepts() : enumerate_concepts();
  Rng split_rng(derive_seed(config.seed, {1}));
  std::shuffle(all.begin(), all.end(), split_rng);
  const auto n_seen = static_cast<std::size_t>(std::lround(config.seen_fraction * static_cast<double>(all.size())));
  ds.seen.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_seen));
  ds.unseen.assign(all.begin() + static_cast<std::ptrdiff_t>(n_seen), all.end());

  for (int i = 0; i < config.n_base; ++i) {
    const auto& c = ds.seen[static_cast<std::size_t>(i) % ds.seen.size()];
    ds.train.push_back({Split::train, c, derive_seed(config.seed, {2, static_cast<std::uint64_t>(i)})});
  }
  auto eval_set = [&](int n, Split seen_split, Split unseen_split, std::uint64_t tag) {
    std::vector<GameRecord> out;
    const int n_unseen = ds.unseen.empty() ? 0 : n / 2;
    const int n_seen_games = n - n_unseen;
    for (int i = 0; i < n_seen_games; ++i) {
      out.push_back({seen_split, ds.seen[static_cast<std::size_t>(i) % ds.seen.size()],
                     derive_seed(config.seed, {tag, 0, static_cast<std::uint64_t>(i)})});
    }
    for (int i = 0; i < n_unseen; ++i) {
      out.push_back({unseen_split, ds.unseen[static_cast<std::size_t>(i) % ds.unseen.size()],
                     derive_seed(config.seed, {tag, 1, static_cast<std::uint64_t>(i)})});
    }
    return out;
  };
  ds.val = eval_set(config.n_val, Split::val_seen, Split::val_unseen, 3);
  ds.test = eval_set(config.n_test, Split::test_seen, Split::test_unseen, 4);
  return ds;
}

void write_manifest(std::ostream& os, const Dataset& ds) {
  nlohmann::json header = {
      {"kind", "shapeworld-manifest"},
      {"seed", ds.config.seed},
      {"reference_concepts", ds.config.reference_concepts},
      {"n_base", ds.config.n_base},
      {"seen_fraction", ds.config.seen_fraction},
      {"n_val", ds.config.n_val},
      {"n_test", ds.config.n_test},
      {"pool_size", ds.config.pool_size},
  };
  std::vector<std::string> seen, unseen;
  for (const auto& c : ds.seen) seen.push_back(c.formula());
  for (const auto& c : ds.unseen) unseen.push_back(c.formula());
  header["seen_concepts"] = seen;
  header["unseen_concepts"] = unseen;
  os << header.dump() << '\n';
  for (const auto* part : {&ds.train, &ds.val, &ds.test}) {
    for (const auto& r : *part) {
      nlohmann::json line = {{"split", split_name(r.split)}, {"concept", r.target_concept.formula()}, {"seed", r.seed}};
      os << line.dump() << '\n';
    }
  }
}

Dataset read_manifest(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("manifest is empty");
  const auto header = nlohmann::json::parse(line);
  if (header.value("kind", "") != "shapeworld-manifest") throw std::runtime_error("not a ShapeWorld manifest");
  Dataset ds;
  ds.config.seed = header.at("seed").get<std::uint64_t>();
  ds.config.reference_concepts = header.at("reference_concepts").get<bool>();
  ds.config.n_base = header.at("n_base").get<int>();
  ds.config.seen_fraction = header.at("seen_fraction").get<double>();
  ds.config.n_val = header.at("n_val").get<int>();
  ds.config.n_test = header.at("n_test").get<int>();
  ds.config.pool_size = header.at("pool_size").get<int>();
  for (const auto& s : header.at("seen_concepts")) ds.seen.push_back(parse_concept(s.get<std::string>()));
  for (const auto& s : header.at("unseen_concepts")) ds.unseen.push_back(parse_concept(s.get<std::string>()));
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    GameRecord r{parse_split(j.at("split").get<std::string>()), parse_concept(j.at("concept").get<std::string>()),
                 j.at("seed").get<std::uint64_t>()};
    switch (r.split) {
      case Split::train: ds.train.push_back(r); break;
      case Split::val_seen:
      case Split::val_unseen: ds.val.push_back(r); break;
      default: ds.test.push_back(r);
    }
  }
  return ds;
}

void save_manifest(const std::filesystem::path& path, const Dataset& dataset) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_manifest(os, dataset);
}

Dataset load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return read_manifest(is);
}

Game materialize(const GameRecord& record, GameType type, const GameShape& shape,
                 const RenderConfig& render, std::uint64_t augment_seed) {
  const BaseGame base = make_base_game(record.target_concept, record.seed, shape.pool_size);
  Rng rng(augment_seed);
  return augment(base, type, shape.n_targets, shape.n_distractors, render, rng);
}

}  // namespace setcomm::world
