#include <doctest.h>

#include "setcomm/acre.hpp"
#include "setcomm/nn/checkpoint.hpp"
#include "setcomm/training.hpp"

#include <cmath>
#include <filesystem>
#include <random>

using namespace setcomm;
using namespace setcomm::training;

namespace {

agents::AgentConfig small_agent() {
  agents::AgentConfig a;
  a.channel = {14, 5, true};
  a.vision = {16, 2, 8, 3};
  a.embedding_dim = 16;
  a.hidden = 32;
  return a;
}

TrainConfig small_train(world::GameType type, int epochs) {
  TrainConfig c;
  c.lr = 1e-3f;
  c.batch_size = 16;
  c.epochs = epochs;
  c.game_type = type;
  c.render.resolution = 16;
  c.seed = 5;
  c.eval_batch = 32;
  return c;
}

world::Dataset small_dataset(bool ref, int n_base = 160) {
  world::DatasetConfig d;
  d.seed = 21;
  d.reference_concepts = ref;
  d.n_base = n_base;
  d.n_val = 32;
  d.n_test = 32;
  return world::build_shapeworld_dataset(d);
}

}  // namespace

TEST_CASE("bce game loss matches analytic values and a summation oracle") {
  const std::vector<float> half(20, 0.5f);
  std::vector<float> labels(20, 0.0f);
  for (int i = 0; i < 10; ++i) labels[i] = 1.0f;
  CHECK(game_loss_bce(half, labels) == doctest::Approx(20 * std::log(2.0)).epsilon(1e-9));
  CHECK(game_loss_bce(labels, labels) < 1e-5);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(0.01f, 0.99f);
  std::vector<float> p(13), y(13);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = u(rng);
    y[i] = (rng() & 1) ? 1.0f : 0.0f;
  }
  double oracle = 0;
  for (std::size_t i = 0; i < p.size(); ++i) oracle += y[i] > 0.5f ? -std::log(double(p[i])) : -std::log(1.0 - p[i]);
  CHECK(std::fabs(game_loss_bce(p, y) - oracle) < 1e-6);
}

TEST_CASE("xent game loss matches analytic values and a log-sum-exp oracle") {
  const std::vector<float> flat(11, 0.3f);
  CHECK(game_loss_xent(flat, 0) == doctest::Approx(std::log(11.0)).epsilon(1e-9));
  std::vector<float> peaked(11, 0.0f);
  peaked[4] = 60.0f;
  CHECK(game_loss_xent(peaked, 4) < 1e-12);

  std::mt19937_64 rng(8);
  std::normal_distribution<float> n(0.0f, 2.0f);
  std::vector<float> s(11);
  for (auto& x : s) x = n(rng);
  double z = 0;
  for (float x : s) z += std::exp(double(x));
  CHECK(std::fabs(game_loss_xent(s, 7) - (std::log(z) - s[7])) < 1e-6);
  CHECK_THROWS(game_loss_xent(s, 11));
}

TEST_CASE("student accuracy thresholds at one half") {
  const std::vector<float> p{0.9f, 0.4f, 0.5f, 0.1f};
  const std::vector<float> y{1, 1, 1, 0};
  CHECK(student_accuracy(p, y) == doctest::Approx(0.75));
  CHECK(student_accuracy(std::vector<float>(4, 0.7f), std::vector<float>{1, 0, 1, 0}) == doctest::Approx(0.5));
}

TEST_CASE("config validation") {
  TrainConfig c = small_train(world::GameType::setref, 1);
  c.loss = LossVariant::xent;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.game_type = world::GameType::ref;
  c.shape.n_targets = 1;
  CHECK_NOTHROW(c.validate());
  c.mixture = 1.0f;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  const TrainConfig back = train_config_from_json(to_json(small_train(world::GameType::concept_game, 3)));
  CHECK(back.epochs == 3);
  CHECK(back.game_type == world::GameType::concept_game);
}

TEST_CASE("zero epochs leave the pair untouched") {
  const auto ds = small_dataset(false);
  AgentPair pair(small_agent(), 1);
  const auto before = nn::state_dict(pair);
  const TrainLog log = train_pair(pair, ds, small_train(world::GameType::setref, 0));
  CHECK(log.epochs.empty());
  CHECK(log.best_epoch == -1);
  const auto after = nn::state_dict(pair);
  REQUIRE(before.size() == after.size());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i].second == before[i].second);
}

TEST_CASE("seeded runs are reproducible and the best checkpoint reproduces its validation score") {
  const auto ds = small_dataset(false);
  auto cfg = small_train(world::GameType::setref, 2);
  cfg.checkpoint_dir = std::filesystem::temp_directory_path() / "setcomm_train_ckpt";
  std::filesystem::remove_all(cfg.checkpoint_dir);

  AgentPair a(small_agent(), 2), b(small_agent(), 2);
  const TrainLog la = train_pair(a, ds, cfg);
  const TrainLog lb = train_pair(b, ds, cfg);
  REQUIRE(la.epochs.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(la.epochs[i].train_loss == lb.epochs[i].train_loss);
    CHECK(la.epochs[i].val_acc == lb.epochs[i].val_acc);
  }

  EvalOptions eo{cfg.game_type, cfg.shape, cfg.render, cfg.eval_batch};
  const double restored = evaluate_pair(a, ds.val, eo).acc;
  CHECK(std::fabs(restored - la.best_val_acc) < 1e-6);

  auto [reloaded, meta] = AgentPair::load(cfg.checkpoint_dir / "best.ckpt");
  CHECK(std::fabs(evaluate_pair(reloaded, ds.val, eo).acc - la.best_val_acc) < 1e-6);
  CHECK(meta.contains("train"));

  for (const auto& g : evaluate_pair(a, ds.test, eo).games) CHECK((g.accuracy >= 0.0 && g.accuracy <= 1.0));
  std::filesystem::remove_all(cfg.checkpoint_dir);
}

TEST_CASE("reference-game loss falls over the first epochs") {
  const auto ds = small_dataset(true, 320);
  auto cfg = small_train(world::GameType::ref, 5);
  AgentPair pair(small_agent(), 3);
  const TrainLog log = train_pair(pair, ds, cfg);
  REQUIRE(log.epochs.size() == 5);
  CHECK(log.epochs[4].train_loss < log.epochs[0].train_loss);
  CHECK(log.best_val_acc > 0.5);
}

TEST_CASE("evaluation with supplied messages matches teacher evaluation on the same messages") {
  const auto ds = small_dataset(false);
  AgentPair pair(small_agent(), 4);
  const auto cfg = small_train(world::GameType::concept_game, 1);
  EvalOptions eo{cfg.game_type, cfg.shape, cfg.render, 8};
  const Evaluation ev = evaluate_pair(pair, ds.test, eo);
  std::vector<Message> msgs;
  for (const auto& g : ev.games) msgs.push_back(g.message);
  const Evaluation replay = evaluate_student(pair.student, ds.test, msgs, eo);
  REQUIRE(replay.games.size() == ev.games.size());
  for (std::size_t i = 0; i < ev.games.size(); ++i) CHECK(replay.games[i].accuracy == ev.games[i].accuracy);
  CHECK(ev.seen_games + ev.unseen_games == ds.test.size());
}

TEST_CASE("listener training on a fixed code runs and is scored with the same code") {
  const auto ds = small_dataset(false);
  auto agent = small_agent();
  agent.channel = acre::formula_channel();
  nn::Rng rng(3);
  agents::Student student(agent, rng);
  auto cfg = small_train(world::GameType::concept_game, 2);
  const TrainLog log = train_listener(student, ds, cfg, acre::formula_message);
  CHECK(log.epochs.size() == 2);
  const Evaluation ev =
      evaluate_listener(student, ds.test, acre::formula_message, {cfg.game_type, cfg.shape, cfg.render, 16});
  CHECK(ev.games.size() == ds.test.size());
  for (const auto& g : ev.games) CHECK(g.message == acre::formula_message(g.target_concept));
}
