#include "setcomm/agents.hpp"

#include "setcomm/nn/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace setcomm::agents {

using nn::Mat;
using nn::Var;

ChannelConfig ChannelConfig::preset(std::string_view name) {
  if (name == "S") return {3, 3, true};
  if (name == "M") return {5, 5, true};
  if (name == "L") return {100, 20, true};
  if (name == "XL") return {1000, 20, true};
  if (name == "shapeworld" || name == "default") return {14, 5, true};
  if (name == "birds") return {20, 8, true};
  throw std::invalid_argument("unknown channel preset '" + std::string(name) + "'");
}

void ChannelConfig::validate() const {
  if (vocab_size < 2) throw std::invalid_argument("channel vocab_size must be >= 2");
  if (max_len < 1) throw std::invalid_argument("channel max_len must be >= 1");
}

bool message_fits(const Message& m, const ChannelConfig& channel) {
  if (static_cast<int>(m.size()) > channel.max_len) return false;
  if (!channel.use_eos && static_cast<int>(m.size()) != channel.max_len) return false;
  return std::all_of(m.begin(), m.end(), [&](int t) { return t >= 0 && t < channel.vocab_size; });
}

void AgentConfig::validate() const {
  channel.validate();
  if (embedding_dim < 1 || hidden < 1) throw std::invalid_argument("agent sizes must be positive");
  if (vision.blocks < 1 || (vision.resolution % (1 << vision.blocks)) != 0) {
    throw std::invalid_argument("image resolution must be divisible by 2^blocks");
  }
}

nlohmann::json to_json(const ChannelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"max_len", c.max_len}, {"use_eos", c.use_eos}};
}

ChannelConfig channel_from_json(const nlohmann::json& j) {
  ChannelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_len = j.value("max_len", c.max_len);
  c.use_eos = j.value("use_eos", c.use_eos);
  return c;
}

nlohmann::json to_json(const AgentConfig& c) {
  return {{"channel", to_json(c.channel)},
          {"resolution", c.vision.resolution},
          {"blocks", c.vision.blocks},
          {"filters", c.vision.filters},
          {"embedding_dim", c.embedding_dim},
          {"hidden", c.hidden}};
}

AgentConfig agent_config_from_json(const nlohmann::json& j) {
  AgentConfig c;
  if (j.contains("channel")) c.channel = channel_from_json(j.at("channel"));
  c.vision.resolution = j.value("resolution", c.vision.resolution);
  c.vision.blocks = j.value("blocks", c.vision.blocks);
  c.vision.filters = j.value("filters", c.vision.filters);
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.hidden = j.value("hidden", c.hidden);
  return c;
}

void SceneBatch::append(const std::vector<world::Scene>& scenes, const std::vector<bool>& labs) {
  if (scenes.size() != labs.size()) throw std::invalid_argument("scene/label count mismatch");
  if (scenes.empty()) throw std::invalid_argument("a game needs at least one scene");
  const auto width = static_cast<Eigen::Index>(scenes.front().pixels.size());
  if (pixels.size() == 0) pixels.resize(0, width);
  if (pixels.cols() != width) throw std::invalid_argument("scenes of different resolution in one batch");
  const Eigen::Index start = pixels.rows();
  pixels.conservativeResize(start + static_cast<Eigen::Index>(scenes.size()), width);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (static_cast<Eigen::Index>(scenes[i].pixels.size()) != width) {
      throw std::invalid_argument("scenes of different resolution in one batch");
    }
    pixels.row(start + static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXf>(scenes[i].pixels.data(), width);
    game.push_back(games);
    labels.push_back(labs[i] ? 1.0f : 0.0f);
  }
  ++games;
}

SceneBatch SceneBatch::teacher_view(std::span<const world::Game> gs) {
  SceneBatch b;
  for (const auto& g : gs) b.append(g.teacher_inputs, g.teacher_labels);
  return b;
}

SceneBatch SceneBatch::student_view(std::span<const world::Game> gs) {
  SceneBatch b;
  for (const auto& g : gs) b.append(g.student_inputs, g.student_labels);
  return b;
}

ChannelBatch one_hot_messages(std::span<const Message> messages, const ChannelConfig& channel) {
  const int sym = channel.output_symbols();
  const auto batch = static_cast<Eigen::Index>(messages.size());
  ChannelBatch out;
  out.messages.assign(messages.begin(), messages.end());
  for (int t = 0; t < channel.max_len; ++t) {
    Mat step = Mat::Zero(batch, sym);
    std::vector<float> mask(messages.size(), 0.0f);
    for (std::size_t b = 0; b < messages.size(); ++b) {
      const auto& m = messages[b];
      if (!message_fits(m, channel)) throw std::invalid_argument("message does not fit the channel");
      if (t < static_cast<int>(m.size())) {
        step(static_cast<Eigen::Index>(b), m[static_cast<std::size_t>(t)]) = 1.0f;
        mask[b] = 1.0f;
      } else {
        step(static_cast<Eigen::Index>(b), channel.eos()) = 1.0f;
      }
    }
    out.steps.push_back(nn::constant(std::move(step)));
    out.mask.push_back(std::move(mask));
  }
  return out;
}

namespace {

std::pair<std::vector<std::vector<int>>, std::vector<std::vector<int>>> label_groups(const SceneBatch& s) {
  std::vector<std::vector<int>> pos(static_cast<std::size_t>(s.games)), neg(static_cast<std::size_t>(s.games));
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto& dst = s.labels[i] > 0.5f ? pos : neg;
    dst[static_cast<std::size_t>(s.game[i])].push_back(static_cast<int>(i));
  }
  for (int g = 0; g < s.games; ++g) {
    if (pos[static_cast<std::size_t>(g)].empty() || neg[static_cast<std::size_t>(g)].empty()) {
      throw std::invalid_argument("encode_prototypes: game " + std::to_string(g) +
                                  " needs at least one target and one distractor");
    }
  }
  return {pos, neg};
}

int argmax_row(const Mat& m, Eigen::Index r) {
  Eigen::Index best = 0;
  m.row(r).maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace

Teacher::Teacher(const AgentConfig& config, nn::Rng& rng)
    : config_(config),
      vision_(config.vision, rng),
      proj_(2 * config.vision.embedding_dim(), config.hidden, rng),
      embed_(config.channel.vocab_size + 2, config.embedding_dim, rng),
      gru_(config.embedding_dim, config.hidden, rng),
      out_(config.hidden, config.channel.output_symbols(), rng) {
  config.validate();
}

std::pair<Var, Var> Teacher::encode_prototypes(const SceneBatch& scenes, bool training) {
  const auto [pos, neg] = label_groups(scenes);
  Var emb = vision_(nn::constant(scenes.pixels), training);
  return {nn::group_mean(emb, pos), nn::group_mean(emb, neg)};
}

ChannelBatch Teacher::decode(const Var& proto_pos, const Var& proto_neg, const EmitOptions& options,
                             Rng& rng) {
  const auto& ch = config_.channel;
  const int sym = ch.output_symbols();
  const auto batch = proto_pos.rows();
  const bool train = options.mode == EmitMode::train;

  ChannelBatch out;
  out.messages.assign(static_cast<std::size_t>(batch), Message{});
  std::vector<bool> ended(static_cast<std::size_t>(batch), false);

  Var h = proj_(nn::concat_cols({proto_pos, proto_neg}));
  std::vector<int> sos(static_cast<std::size_t>(batch), ch.sos());
  Var input = embed_(sos);
  const Var symbol_table = nn::slice_rows(embed_.weight(), 0, sym);

  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  for (int t = 0; t < ch.max_len; ++t) {
    h = gru_(input, h);
    Var logit = out_(h);
    Var symbols;
    Mat hard = Mat::Zero(batch, sym);
    if (train) {
      Var logp = nn::log_softmax_rows(logit);
      if (options.mixture > 0.0f) {
        Var p = nn::scale(nn::softmax_rows(logit), 1.0f - options.mixture);
        logp = nn::log(nn::add_scalar(p, options.mixture / static_cast<float>(sym)));
      }
      Mat gumbel(batch, sym);
      for (Eigen::Index i = 0; i < gumbel.size(); ++i) {
        const float u = std::clamp(unit(rng), 1e-10f, 1.0f - 1e-7f);
        gumbel.data()[i] = -std::log(-std::log(u));
      }
      Var y = nn::softmax_rows(nn::scale(nn::add(logp, nn::constant(std::move(gumbel))),
                                         1.0f / options.temperature));
      for (Eigen::Index b = 0; b < batch; ++b) hard(b, argmax_row(y.value(), b)) = 1.0f;
      symbols = nn::straight_through(y, hard);
      out.relaxed.push_back(y);
    } else {
      for (Eigen::Index b = 0; b < batch; ++b) hard(b, argmax_row(logit.value(), b)) = 1.0f;
      symbols = nn::constant(hard);
    }

    std::vector<float> mask(static_cast<std::size_t>(batch), 0.0f);
    for (Eigen::Index b = 0; b < batch; ++b) {
      const auto bi = static_cast<std::size_t>(b);
      const int tok = argmax_row(hard, b);
      if (ch.use_eos && tok == ch.eos()) ended[bi] = true;
      if (!ended[bi]) {
        mask[bi] = 1.0f;
        out.messages[bi].push_back(tok);
      }
    }
    out.steps.push_back(symbols);
    out.mask.push_back(std::move(mask));
    input = nn::matmul(symbols, symbol_table);
  }
  return out;
}

ChannelBatch Teacher::emit(const SceneBatch& scenes, const EmitOptions& options, Rng& rng) {
  auto [pos, neg] = encode_prototypes(scenes, options.mode == EmitMode::train);
  return decode(pos, neg, options, rng);
}

void Teacher::visit(const std::string& prefix, nn::ParamVisitor& v) {
  vision_.visit(prefix + "vision.", v);
  proj_.visit(prefix + "proj.", v);
  embed_.visit(prefix + "embed.", v);
  gru_.visit(prefix + "gru.", v);
  out_.visit(prefix + "out.", v);
}

Student::Student(const AgentConfig& config, nn::Rng& rng)
    : config_(config),
      vision_(config.vision, rng),
      embed_(config.channel.vocab_size + 2, config.embedding_dim, rng),
      gru_(config.embedding_dim, config.hidden, rng),
      proj_(config.hidden, config.vision.embedding_dim(), rng, false) {
  config.validate();
}

Var Student::encode_messages(const ChannelBatch& channel) const {
  const auto& ch = config_.channel;
  const int sym = ch.output_symbols();
  const auto batch = static_cast<std::size_t>(channel.batch());
  const Var symbol_table = nn::slice_rows(embed_.weight(), 0, sym);

  Var h = nn::constant(Mat::Zero(static_cast<Eigen::Index>(batch), config_.hidden));
  h = gru_(embed_(std::vector<int>(batch, ch.sos())), h);
  for (std::size_t t = 0; t < channel.steps.size(); ++t) {
    const auto& mask = channel.mask[t];
    if (std::none_of(mask.begin(), mask.end(), [](float m) { return m > 0.0f; })) continue;
    Var next = gru_(nn::matmul(channel.steps[t], symbol_table), h);
    h = nn::blend_rows(next, h, mask);
  }
  h = gru_(embed_(std::vector<int>(batch, ch.eos())), h);
  return proj_(h);
}

Var Student::embed_scenes(const SceneBatch& scenes, bool training) {
  return vision_(nn::constant(scenes.pixels), training);
}

Var Student::score(const ChannelBatch& channel, const SceneBatch& scenes, bool training) {
  if (channel.batch() != scenes.games) throw std::invalid_argument("message/game count mismatch");
  Var enc = encode_messages(channel);
  Var img = embed_scenes(scenes, training);
  return nn::rowwise_dot(nn::gather_rows(enc, scenes.game), img);
}

void Student::visit(const std::string& prefix, nn::ParamVisitor& v) {
  vision_.visit(prefix + "vision.", v);
  embed_.visit(prefix + "embed.", v);
  gru_.visit(prefix + "gru.", v);
  proj_.visit(prefix + "proj.", v);
}

AgentPair::AgentPair(const AgentConfig& config, std::uint64_t seed) : config_(config) {
  nn::Rng rt(derive_seed(seed, {0x7e}));
  nn::Rng rs(derive_seed(seed, {0x57}));
  teacher = Teacher(config, rt);
  student = Student(config, rs);
}

void AgentPair::visit(const std::string& prefix, nn::ParamVisitor& v) {
  teacher.visit(prefix + "teacher.", v);
  student.visit(prefix + "student.", v);
}

void AgentPair::save(const std::filesystem::path& path, const nlohmann::json& extra) {
  nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
  meta["agent"] = to_json(config_);
  nn::write_checkpoint(path, meta, nn::state_dict(*this));
}

std::pair<AgentPair, nlohmann::json> AgentPair::load(const std::filesystem::path& path) {
  auto [meta, state] = nn::read_checkpoint(path);
  AgentPair pair(agent_config_from_json(meta.at("agent")), 0);
  nn::load_state_dict(pair, state);
  return {std::move(pair), meta};
}

std::pair<Var, Var> encode_prototypes(Teacher& teacher, const SceneBatch& scenes) {
  return teacher.encode_prototypes(scenes, false);
}

ChannelBatch teacher_emit(Teacher& teacher, const SceneBatch& scenes, EmitMode mode, Rng& rng,
                          float mixture) {
  return teacher.emit(scenes, EmitOptions{mode, mixture, 1.0f}, rng);
}

std::vector<float> student_score(Student& student, std::span<const Message> messages,
                                 const SceneBatch& scenes) {
  nn::NoGradGuard guard;
  const auto channel = one_hot_messages(messages, student.config().channel);
  const Var logits = student.score(channel, scenes, false);
  std::vector<float> p(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    p[static_cast<std::size_t>(i)] = 1.0f / (1.0f + std::exp(-logits.value()(i, 0)));
  }
  return p;
}

}  // namespace setcomm::agents
