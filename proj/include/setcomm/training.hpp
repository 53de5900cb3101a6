#pragma once

// Joint teacher/student optimization, evaluation on fixed games, and the
// listener-only variant that reads messages from a fixed code.

#include "setcomm/agents.hpp"
#include "setcomm/world.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace setcomm::training {

using agents::AgentPair;
using agents::Message;

enum class LossVariant { bce, xent };

// Sum over inputs of the binary cross-entropy of independent decisions.
double game_loss_bce(std::span<const float> probs, std::span<const float> labels);
// -log softmax(scores)[target_index].
double game_loss_xent(std::span<const float> scores, int target_index);

struct TrainConfig {
  float lr = 1e-4f;
  int batch_size = 128;
  int epochs = 100;
  int games_per_epoch = 0;  // 0: one pass over every training base game
  LossVariant loss = LossVariant::bce;
  float mixture = 0.1f;  // uniform exploration weight in training-mode sampling
  std::uint64_t seed = 0;
  world::GameType game_type = world::GameType::concept_game;
  world::GameShape shape;
  world::RenderConfig render;
  int eval_batch = 64;
  int val_games = 0;   // 0: the full validation set
  int patience = 0;    // epochs without improvement before stopping; 0 = never
  std::filesystem::path checkpoint_dir;  // empty: keep the best state in memory only

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  double val_acc = 0;
  double val_acc_seen = 0;
  double val_acc_unseen = 0;
  double seconds = 0;
  bool best = false;
  nlohmann::json extra = nlohmann::json::object();  // filled by epoch callbacks
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  int best_epoch = -1;
  double best_val_acc = -1;

  nlohmann::json to_json() const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GameOutcome {
  std::size_t index = 0;  // position in the evaluated record list
  world::Split split = world::Split::test_seen;
  Concept target_concept;
  Message message;
  double accuracy = 0;
};

struct Evaluation {
  std::vector<GameOutcome> games;
  double acc = 0;
  double acc_seen = 0;
  double acc_unseen = 0;
  std::size_t seen_games = 0;
  std::size_t unseen_games = 0;
};

struct EvalOptions {
  world::GameType game_type = world::GameType::concept_game;
  world::GameShape shape;
  world::RenderConfig render;
  int batch = 64;
};

// Seed of the fixed evaluation view of a record.
std::uint64_t eval_view_seed(const world::GameRecord& record);

// Mean per-input correctness at threshold 0.5.
double student_accuracy(std::span<const float> probs, std::span<const float> labels);

// Greedy teacher messages scored by the student on fixed games.
Evaluation evaluate_pair(AgentPair& pair, std::span<const world::GameRecord> records,
                         const EvalOptions& options);

// Messages supplied per game (e.g. by a reconstruction model) instead of the
// teacher; `messages[i]` goes with `records[i]`.
Evaluation evaluate_student(agents::Student& student, std::span<const world::GameRecord> records,
                            std::span<const Message> messages, const EvalOptions& options);

using EpochCallback = std::function<void(int epoch, AgentPair& pair, EpochLog& log)>;

// Trains in place and leaves the pair at its best-validation state.
TrainLog train_pair(AgentPair& pair, const world::Dataset& dataset, const TrainConfig& config,
                    const EpochCallback& on_epoch = {});

using MessageFn = std::function<Message(const Concept&)>;

// Student-only training with messages from a fixed concept code. Same data,
// batching and selection protocol as train_pair.
TrainLog train_listener(agents::Student& student, const world::Dataset& dataset,
                        const TrainConfig& config, const MessageFn& code);
Evaluation evaluate_listener(agents::Student& student, std::span<const world::GameRecord> records,
                             const MessageFn& code, const EvalOptions& options);

}  // namespace setcomm::training
