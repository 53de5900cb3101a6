#include "setcomm/training.hpp"

#include "setcomm/log.hpp"
#include "setcomm/nn/checkpoint.hpp"
#include "setcomm/nn/optim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace setcomm::training {

using agents::ChannelBatch;
using agents::SceneBatch;
using nn::Mat;
using nn::Var;

double game_loss_bce(std::span<const float> probs, std::span<const float> labels) {
  if (probs.size() != labels.size()) throw std::invalid_argument("game_loss_bce: length mismatch");
  constexpr double eps = 1e-7;
  double loss = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(static_cast<double>(probs[i]), eps, 1.0 - eps);
    const double y = labels[i];
    loss -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return loss;
}

double game_loss_xent(std::span<const float> scores, int target_index) {
  if (target_index < 0 || static_cast<std::size_t>(target_index) >= scores.size()) {
    throw std::out_of_range("game_loss_xent: target index out of range");
  }
  const double mx = *std::max_element(scores.begin(), scores.end());
  double z = 0;
  for (float s : scores) z += std::exp(static_cast<double>(s) - mx);
  return -(static_cast<double>(scores[static_cast<std::size_t>(target_index)]) - mx - std::log(z));
}

void TrainConfig::validate() const {
  if (!(lr > 0.0f)) throw std::invalid_argument("lr must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (games_per_epoch < 0) throw std::invalid_argument("games_per_epoch must be non-negative");
  if (mixture < 0.0f || mixture >= 1.0f) throw std::invalid_argument("mixture must be in [0, 1)");
  if (shape.n_targets < 1 || shape.n_distractors < 1) throw std::invalid_argument("games need targets and distractors");
  if (loss == LossVariant::xent && (game_type != world::GameType::ref || shape.n_targets != 1)) {
    throw std::invalid_argument("the xent loss needs single-target reference games");
  }
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"games_per_epoch", c.games_per_epoch},
          {"loss", c.loss == LossVariant::bce ? "bce" : "xent"},
          {"mixture", c.mixture},
          {"seed", c.seed},
          {"game_type", std::string(world::game_type_name(c.game_type))},
          {"n_targets", c.shape.n_targets},
          {"n_distractors", c.shape.n_distractors},
          {"pool_size", c.shape.pool_size},
          {"resolution", c.render.resolution},
          {"eval_batch", c.eval_batch},
          {"val_games", c.val_games},
          {"patience", c.patience}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.games_per_epoch = j.value("games_per_epoch", c.games_per_epoch);
  const std::string loss = j.value("loss", std::string("bce"));
  if (loss == "bce") c.loss = LossVariant::bce;
  else if (loss == "xent") c.loss = LossVariant::xent;
  else throw std::invalid_argument("unknown loss '" + loss + "'");
  c.mixture = j.value("mixture", c.mixture);
  c.seed = j.value("seed", c.seed);
  c.game_type = world::parse_game_type(j.value("game_type", std::string("concept")));
  c.shape.n_targets = j.value("n_targets", c.shape.n_targets);
  c.shape.n_distractors = j.value("n_distractors", c.shape.n_distractors);
  c.shape.pool_size = j.value("pool_size", c.shape.pool_size);
  c.render.resolution = j.value("resolution", c.render.resolution);
  c.eval_batch = j.value("eval_batch", c.eval_batch);
  c.val_games = j.value("val_games", c.val_games);
  c.patience = j.value("patience", c.patience);
  return c;
}

nlohmann::json TrainLog::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : epochs) {
    nlohmann::json row = {{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"val_acc", e.val_acc},
                          {"val_acc_seen", e.val_acc_seen},
                          {"val_acc_unseen", e.val_acc_unseen},
                          {"seconds", e.seconds},
                          {"best", e.best}};
    for (const auto& [k, v] : e.extra.items()) row[k] = v;
    arr.push_back(row);
  }
  return {{"epochs", arr}, {"best_epoch", best_epoch}, {"best_val_acc", best_val_acc}};
}

std::uint64_t eval_view_seed(const world::GameRecord& record) { return derive_seed(record.seed, {0xe7a1}); }

double student_accuracy(std::span<const float> probs, std::span<const float> labels) {
  if (probs.size() != labels.size() || probs.empty()) throw std::invalid_argument("student_accuracy: bad sizes");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if ((probs[i] >= 0.5f) == (labels[i] > 0.5f)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(probs.size());
}

namespace {

std::vector<world::Game> materialize_range(std::span<const world::GameRecord> records, std::size_t begin,
                                           std::size_t end, const EvalOptions& o) {
  std::vector<world::Game> games;
  for (std::size_t i = begin; i < end; ++i) {
    games.push_back(world::materialize(records[i], o.game_type, o.shape, o.render, eval_view_seed(records[i])));
  }
  return games;
}

void finish(Evaluation& ev) {
  double s = 0, u = 0, a = 0;
  for (const auto& g : ev.games) {
    a += g.accuracy;
    if (world::is_seen(g.split)) {
      s += g.accuracy;
      ++ev.seen_games;
    } else {
      u += g.accuracy;
      ++ev.unseen_games;
    }
  }
  ev.acc = ev.games.empty() ? 0 : a / static_cast<double>(ev.games.size());
  ev.acc_seen = ev.seen_games ? s / static_cast<double>(ev.seen_games) : 0;
  ev.acc_unseen = ev.unseen_games ? u / static_cast<double>(ev.unseen_games) : 0;
}

// Scores fixed games with messages from `message_source`.
Evaluation evaluate_with(agents::Student& student, std::span<const world::GameRecord> records,
                         const EvalOptions& o,
                         const std::function<ChannelBatch(std::size_t, std::span<const world::Game>)>& message_source) {
  nn::NoGradGuard guard;
  Evaluation ev;
  const auto step = static_cast<std::size_t>(std::max(1, o.batch));
  for (std::size_t begin = 0; begin < records.size(); begin += step) {
    const std::size_t end = std::min(records.size(), begin + step);
    const auto games = materialize_range(records, begin, end, o);
    const ChannelBatch msgs = message_source(begin, games);
    const SceneBatch sb = SceneBatch::student_view(games);
    const Var logits = student.score(msgs, sb, false);
    std::vector<std::vector<float>> probs(games.size()), labels(games.size());
    for (std::size_t r = 0; r < sb.size(); ++r) {
      const auto g = static_cast<std::size_t>(sb.game[r]);
      probs[g].push_back(1.0f / (1.0f + std::exp(-logits.value()(static_cast<Eigen::Index>(r), 0))));
      labels[g].push_back(sb.labels[r]);
    }
    for (std::size_t g = 0; g < games.size(); ++g) {
      const auto& rec = records[begin + g];
      ev.games.push_back(GameOutcome{begin + g, rec.split, rec.target_concept, msgs.messages[g],
                                     student_accuracy(probs[g], labels[g])});
    }
  }
  finish(ev);
  return ev;
}

std::vector<world::GameRecord> validation_subset(const world::Dataset& ds, int limit) {
  if (limit <= 0 || static_cast<std::size_t>(limit) >= ds.val.size()) return ds.val;
  std::vector<world::GameRecord> seen, unseen;
  for (const auto& r : ds.val) (world::is_seen(r.split) ? seen : unseen).push_back(r);
  const std::size_t want_unseen = unseen.empty() ? 0 : static_cast<std::size_t>(limit) / 2;
  const std::size_t want_seen = static_cast<std::size_t>(limit) - want_unseen;
  std::vector<world::GameRecord> out(seen.begin(), seen.begin() + static_cast<std::ptrdiff_t>(std::min(want_seen, seen.size())));
  out.insert(out.end(), unseen.begin(), unseen.begin() + static_cast<std::ptrdiff_t>(std::min(want_unseen, unseen.size())));
  return out;
}

EvalOptions eval_options(const TrainConfig& c) { return {c.game_type, c.shape, c.render, c.eval_batch}; }

Var game_loss(const Var& logits, const SceneBatch& sb, LossVariant loss) {
  if (loss == LossVariant::bce) return nn::bce_with_logits(logits, sb.labels);
  const auto per_game = static_cast<Eigen::Index>(sb.size()) / sb.games;
  std::vector<int> targets(static_cast<std::size_t>(sb.games), -1);
  for (std::size_t r = 0; r < sb.size(); ++r) {
    if (sb.labels[r] > 0.5f) {
      targets[static_cast<std::size_t>(sb.game[r])] = static_cast<int>(static_cast<Eigen::Index>(r) % per_game);
    }
  }
  return nn::cross_entropy(nn::reshape(logits, sb.games, per_game), targets);
}

struct LoopHooks {
  // Runs one optimization step on the batch and returns the loss value.
  std::function<double(std::span<const world::Game>, Rng&)> step;
  std::function<Evaluation()> validate;
  std::function<nn::StateDict()> snapshot;
  std::function<void(const nn::StateDict&)> restore;
  std::function<void(int, EpochLog&)> on_epoch;
};

TrainLog run_loop(const world::Dataset& ds, const TrainConfig& c, const LoopHooks& hooks) {
  c.validate();
  TrainLog log;
  if (c.epochs == 0) return log;
  if (ds.train.empty()) throw std::invalid_argument("train_pair: dataset has no training games");

  const std::size_t per_epoch =
      c.games_per_epoch > 0 ? static_cast<std::size_t>(c.games_per_epoch) : ds.train.size();
  std::vector<std::size_t> order(ds.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  nn::StateDict best;
  int stale = 0;
  if (!c.checkpoint_dir.empty()) std::filesystem::create_directories(c.checkpoint_dir);

  for (int epoch = 1; epoch <= c.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng order_rng(derive_seed(c.seed, {0x0de7, static_cast<std::uint64_t>(epoch)}));
    std::vector<std::size_t> picks;
    while (picks.size() < per_epoch) {
      std::shuffle(order.begin(), order.end(), order_rng);
      const std::size_t take = std::min(order.size(), per_epoch - picks.size());
      picks.insert(picks.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take));
    }

    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < picks.size(); begin += static_cast<std::size_t>(c.batch_size)) {
      const std::size_t end = std::min(picks.size(), begin + static_cast<std::size_t>(c.batch_size));
      std::vector<world::Game> games;
      for (std::size_t k = begin; k < end; ++k) {
        const auto& rec = ds.train[picks[k]];
        const auto aug = derive_seed(c.seed, {0xa06, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(k)});
        games.push_back(world::materialize(rec, c.game_type, c.shape, c.render, aug));
      }
      Rng step_rng(derive_seed(c.seed, {0x57e9, static_cast<std::uint64_t>(epoch), begin}));
      const double loss = hooks.step(games, step_rng);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "training diverged: non-finite loss at epoch " << epoch << ", batch " << batches;
        throw TrainingDiverged(msg.str());
      }
      loss_sum += loss;
      ++batches;
    }

    EpochLog e;
    e.epoch = epoch;
    e.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(1, batches));
    const Evaluation val = hooks.validate();
    e.val_acc = val.acc;
    e.val_acc_seen = val.acc_seen;
    e.val_acc_unseen = val.acc_unseen;
    if (val.acc > log.best_val_acc) {
      log.best_val_acc = val.acc;
      log.best_epoch = epoch;
      e.best = true;
      best = hooks.snapshot();
      stale = 0;
    } else {
      ++stale;
    }
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (hooks.on_epoch) hooks.on_epoch(epoch, e);
    std::ostringstream line;
    line << "epoch " << epoch << " loss " << e.train_loss << " val " << e.val_acc << " (seen "
         << e.val_acc_seen << ", unseen " << e.val_acc_unseen << ") " << e.seconds << "s";
    log_info(line.str());
    log.epochs.push_back(std::move(e));
    if (c.patience > 0 && stale >= c.patience) break;
  }
  if (!best.empty()) hooks.restore(best);
  return log;
}

}  // namespace

Evaluation evaluate_pair(AgentPair& pair, std::span<const world::GameRecord> records, const EvalOptions& o) {
  Rng unused(0);
  return evaluate_with(pair.student, records, o, [&](std::size_t, std::span<const world::Game> games) {
    const SceneBatch tb = SceneBatch::teacher_view(games);
    return pair.teacher.emit(tb, agents::EmitOptions{agents::EmitMode::eval, 0.0f, 1.0f}, unused);
  });
}

Evaluation evaluate_student(agents::Student& student, std::span<const world::GameRecord> records,
                            std::span<const Message> messages, const EvalOptions& o) {
  if (messages.size() != records.size()) throw std::invalid_argument("evaluate_student: one message per record");
  return evaluate_with(student, records, o, [&](std::size_t begin, std::span<const world::Game> games) {
    return agents::one_hot_messages(messages.subspan(begin, games.size()), student.config().channel);
  });
}

TrainLog train_pair(AgentPair& pair, const world::Dataset& ds, const TrainConfig& c, const EpochCallback& on_epoch) {
  nn::Adam opt(pair.parameters(), nn::AdamOptions{c.lr});
  const auto val = validation_subset(ds, c.val_games);
  const agents::EmitOptions emit{agents::EmitMode::train, c.mixture, 1.0f};

  LoopHooks hooks;
  hooks.step = [&](std::span<const world::Game> games, Rng& rng) {
    const SceneBatch tb = SceneBatch::teacher_view(games);
    const SceneBatch sb = SceneBatch::student_view(games);
    const ChannelBatch msgs = pair.teacher.emit(tb, emit, rng);
    const Var logits = pair.student.score(msgs, sb, true);
    const Var loss = game_loss(logits, sb, c.loss);
    opt.zero_grad();
    loss.backward();
    opt.step();
    return static_cast<double>(loss.item());
  };
  hooks.validate = [&] { return evaluate_pair(pair, val, eval_options(c)); };
  hooks.snapshot = [&] {
    auto state = nn::state_dict(pair);
    if (!c.checkpoint_dir.empty()) pair.save(c.checkpoint_dir / "best.ckpt", {{"train", to_json(c)}});
    return state;
  };
  hooks.restore = [&](const nn::StateDict& s) { nn::load_state_dict(pair, s); };
  if (on_epoch) hooks.on_epoch = [&](int epoch, EpochLog& e) { on_epoch(epoch, pair, e); };
  return run_loop(ds, c, hooks);
}

TrainLog train_listener(agents::Student& student, const world::Dataset& ds, const TrainConfig& c,
                        const MessageFn& code) {
  nn::Adam opt(student.parameters(), nn::AdamOptions{c.lr});
  const auto val = validation_subset(ds, c.val_games);

  LoopHooks hooks;
  hooks.step = [&](std::span<const world::Game> games, Rng&) {
    std::vector<Message> messages;
    for (const auto& g : games) messages.push_back(code(g.target_concept));
    const SceneBatch sb = SceneBatch::student_view(games);
    const Var logits = student.score(agents::one_hot_messages(messages, student.config().channel), sb, true);
    const Var loss = game_loss(logits, sb, c.loss);
    opt.zero_grad();
    loss.backward();
    opt.step();
    return static_cast<double>(loss.item());
  };
  hooks.validate = [&] { return evaluate_listener(student, val, code, eval_options(c)); };
  hooks.snapshot = [&] { return nn::state_dict(student); };
  hooks.restore = [&](const nn::StateDict& s) { nn::load_state_dict(student, s); };
  return run_loop(ds, c, hooks);
}

Evaluation evaluate_listener(agents::Student& student, std::span<const world::GameRecord> records,
                             const MessageFn& code, const EvalOptions& o) {
  std::vector<Message> messages;
  for (const auto& r : records) messages.push_back(code(r.target_concept));
  return evaluate_student(student, records, messages, o);
}

}  // namespace setcomm::training
