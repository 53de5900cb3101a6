#pragma once

// Teacher and student networks for the signaling games.
//
// The channel carries up to max_len tokens from a vocabulary of vocab_size
// symbols. With end-of-sequence handling on, the decoder may also emit an EOS
// symbol that lies outside the vocabulary; everything from the first EOS on is
// dropped. The student reads [SOS, m_1..m_k, EOS], so an empty message is
// still encoded.

#include "setcomm/nn/layers.hpp"
#include "setcomm/random.hpp"
#include "setcomm/world.hpp"

#include <json.hpp>

#include <filesystem>
#include <string_view>
#include <utility>
#include <vector>

namespace setcomm::agents {

struct ChannelConfig {
  int vocab_size = 14;
  int max_len = 5;
  bool use_eos = true;

  // "S", "M", "L", "XL", "shapeworld" (also "default"), "birds".
  static ChannelConfig preset(std::string_view name);

  int output_symbols() const { return vocab_size + (use_eos ? 1 : 0); }
  int eos() const { return vocab_size; }
  int sos() const { return vocab_size + 1; }
  void validate() const;

  friend bool operator==(const ChannelConfig&, const ChannelConfig&) = default;
};

using Message = std::vector<int>;

bool message_fits(const Message& m, const ChannelConfig& channel);

struct AgentConfig {
  ChannelConfig channel;
  nn::ConvNetConfig vision;
  int embedding_dim = 500;  // token embeddings
  int hidden = 1024;        // GRU state

  void validate() const;
};

nlohmann::json to_json(const ChannelConfig& c);
ChannelConfig channel_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AgentConfig& c);
AgentConfig agent_config_from_json(const nlohmann::json& j);

// Scenes of several games packed into one matrix, one row per scene.
struct SceneBatch {
  nn::Mat pixels;           // [N, H*W*3]
  std::vector<int> game;    // owning game of each row
  std::vector<float> labels;
  int games = 0;

  std::size_t size() const { return game.size(); }
  void append(const std::vector<world::Scene>& scenes, const std::vector<bool>& labels);

  static SceneBatch teacher_view(std::span<const world::Game> games);
  static SceneBatch student_view(std::span<const world::Game> games);
};

// Per-position channel symbols for a batch of messages. `steps[t]` is
// [B, output_symbols]; `mask[t][b]` is 1 while message b has not ended.
struct ChannelBatch {
  std::vector<nn::Var> steps;
  std::vector<std::vector<float>> mask;
  std::vector<Message> messages;
  // Relaxed distributions before discretization (training-mode emits only).
  std::vector<nn::Var> relaxed;
  int batch() const { return static_cast<int>(messages.size()); }
};

ChannelBatch one_hot_messages(std::span<const Message> messages, const ChannelConfig& channel);

enum class EmitMode { train, eval };

struct EmitOptions {
  EmitMode mode = EmitMode::eval;
  float mixture = 0.1f;      // weight of the uniform component in train mode
  float temperature = 1.0f;  // Gumbel-Softmax temperature
};

class Teacher : public nn::Module {
 public:
  Teacher() = default;
  Teacher(const AgentConfig& config, nn::Rng& rng);

  // Mean target and mean distractor embedding per game, each [games, E].
  std::pair<nn::Var, nn::Var> encode_prototypes(const SceneBatch& scenes, bool training);
  // Decodes from precomputed prototypes; the message path is differentiable
  // in train mode.
  ChannelBatch decode(const nn::Var& proto_pos, const nn::Var& proto_neg,
                      const EmitOptions& options, Rng& rng);
  ChannelBatch emit(const SceneBatch& scenes, const EmitOptions& options, Rng& rng);

  // Token logits of the decoder for a given hidden state, [B, output_symbols].
  nn::Var logits(const nn::Var& h) const { return out_(h); }

  const AgentConfig& config() const { return config_; }
  void visit(const std::string& prefix, nn::ParamVisitor& v) override;

 private:
  AgentConfig config_;
  nn::ConvNet vision_;
  nn::Linear proj_;
  nn::Embedding embed_;
  nn::GRUCell gru_;
  nn::Linear out_;
};

class Student : public nn::Module {
 public:
  Student() = default;
  Student(const AgentConfig& config, nn::Rng& rng);

  // Message encodings projected to the image embedding width, [B, E].
  nn::Var encode_messages(const ChannelBatch& channel) const;
  nn::Var embed_scenes(const SceneBatch& scenes, bool training);
  // Per-scene logits [N, 1]; sigmoid gives p(y_i = 1 | x_i, m).
  nn::Var score(const ChannelBatch& channel, const SceneBatch& scenes, bool training);

  const AgentConfig& config() const { return config_; }
  void visit(const std::string& prefix, nn::ParamVisitor& v) override;

 private:
  AgentConfig config_;
  nn::ConvNet vision_;
  nn::Embedding embed_;
  nn::GRUCell gru_;
  nn::Linear proj_;  // hidden -> image embedding
};

class AgentPair : public nn::Module {
 public:
  AgentPair() = default;
  AgentPair(const AgentConfig& config, std::uint64_t seed);

  Teacher teacher;
  Student student;

  const AgentConfig& config() const { return config_; }
  void visit(const std::string& prefix, nn::ParamVisitor& v) override;

  void save(const std::filesystem::path& path, const nlohmann::json& extra = {});
  static std::pair<AgentPair, nlohmann::json> load(const std::filesystem::path& path);

 private:
  AgentConfig config_;
};

// Convenience wrappers over the classes above.
std::pair<nn::Var, nn::Var> encode_prototypes(Teacher& teacher, const SceneBatch& scenes);
ChannelBatch teacher_emit(Teacher& teacher, const SceneBatch& scenes, EmitMode mode, Rng& rng,
                          float mixture = 0.1f);
// Probabilities in (0, 1), one per scene row.
std::vector<float> student_score(Student& student, std::span<const Message> messages,
                                 const SceneBatch& scenes);

}  // namespace setcomm::agents
