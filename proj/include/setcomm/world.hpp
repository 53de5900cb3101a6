#pragma once

// ShapeWorld scenes, hard target/distractor sampling, game assembly and
// reproducible dataset manifests.

#include "setcomm/concept.hpp"
#include "setcomm/random.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace setcomm::world {

enum class GameType { ref, setref, concept_game };

std::string_view game_type_name(GameType t);
GameType parse_game_type(std::string_view name);

struct RenderConfig {
  int resolution = 64;
  float size_jitter = 0.25f;  // relative
  float background_max = 0.2f;
  int supersample = 2;  // per axis
};

struct Pose {
  float center_x = 0;  // pixels
  float center_y = 0;
  float size = 0;      // nominal extent in pixels
  float rotation = 0;  // radians
};

// Radius of the smallest centered disc containing the shape at this size.
float bounding_radius(Shape shape, float size);
bool pose_inside_frame(Shape shape, const Pose& pose, int resolution);

struct Scene {
  int resolution = 0;
  std::vector<float> pixels;  // HWC, values in [0, 1]
  ObjectVector object{};
  Pose pose;
};

Scene render_scene(const ObjectVector& z, const RenderConfig& config, Rng& rng);

// A pool entry that can be re-rendered on demand.
struct SceneSpec {
  ObjectVector object{};
  std::uint64_t render_seed = 0;

  Scene render(const RenderConfig& config) const;
};

struct HardPools {
  std::vector<ObjectVector> targets;
  std::vector<ObjectVector> distractors;
  bool used_fallback = false;
};

// Splits a quota of n into three parts, giving the remainder round-robin to
// the first, second, then third part.
std::array<int, 3> split_quota(int n);

// Disjunction targets are split left-only / right-only / both; conjunction
// distractors are split fail-left-only / fail-right-only / fail-both. Other
// sides and literal concepts are sampled uniformly. When a required region is
// empty the affected side falls back to uniform sampling, with a warning.
HardPools sample_hard_pools(const Concept& c, int n_pos, int n_neg, Rng& rng);

// Number of fallbacks taken by sample_hard_pools in this process.
std::uint64_t hard_sampling_fallbacks();

struct BaseGame {
  Concept target_concept;
  std::vector<SceneSpec> target_pool;
  std::vector<SceneSpec> distractor_pool;
};

BaseGame make_base_game(const Concept& c, std::uint64_t pool_seed, int pool_size = 40);

struct Game {
  GameType game_type = GameType::concept_game;
  Concept target_concept;
  std::vector<Scene> teacher_inputs;
  std::vector<bool> teacher_labels;
  std::vector<Scene> student_inputs;
  std::vector<bool> student_labels;
};

// Draws targets and distractors from the pools without replacement.
// ref: one target repeated n_targets times, shared view. setref: one shared
// draw. concept: independent draws for teacher and student.
Game augment(const BaseGame& base, GameType type, int n_targets, int n_distractors,
             const RenderConfig& render, Rng& rng);

enum class Split { train, val_seen, val_unseen, test_seen, test_unseen };
std::string_view split_name(Split s);
Split parse_split(std::string_view name);
bool is_seen(Split s);

struct GameRecord {
  Split split = Split::train;
  Concept target_concept;
  std::uint64_t seed = 0;
};

struct DatasetConfig {
  std::uint64_t seed = 0;
  // Reference-game datasets use the 30 color AND shape concepts; otherwise
  // all 312 concepts.
  bool reference_concepts = false;
  int n_base = 20000;
  double seen_fraction = 0.8;  // 1.0 trains on every concept
  int n_val = 2000;
  int n_test = 2000;
  int pool_size = 40;
};

struct Dataset {
  DatasetConfig config;
  std::vector<Concept> seen;
  std::vector<Concept> unseen;
  std::vector<GameRecord> train;
  std::vector<GameRecord> val;
  std::vector<GameRecord> test;

  const std::vector<GameRecord>& records(bool validation) const { return validation ? val : test; }
};

Dataset build_shapeworld_dataset(const DatasetConfig& config);

// Line-delimited JSON records {"split", "concept", "seed"}; the first line is a
// header carrying the dataset configuration.
void write_manifest(std::ostream& os, const Dataset& dataset);
Dataset read_manifest(std::istream& is);
void save_manifest(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_manifest(const std::filesystem::path& path);

struct GameShape {
  int n_targets = 10;
  int n_distractors = 10;
  int pool_size = 40;
};

// Deterministic game for a record: the base pools come from the record seed,
// the augmentation draw from `augment_seed`.
Game materialize(const GameRecord& record, GameType type, const GameShape& shape,
                 const RenderConfig& render, std::uint64_t augment_seed);

}  // namespace setcomm::world
