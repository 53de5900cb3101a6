#pragma once

// Approximate compositional reconstruction of a teacher language: one
// unconditional transformer LM per primitive concept and one encoder-decoder
// per logical operator, trained bottom-up on messages sampled from the
// frozen teacher.

#include "setcomm/agents.hpp"
#include "setcomm/concept.hpp"
#include "setcomm/nn/layers.hpp"
#include "setcomm/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace setcomm::acre {

using agents::ChannelConfig;
using agents::Message;

struct AcreCorpus {
  ChannelConfig channel;
  std::vector<Concept> concepts;                   // bucket order
  std::map<std::string, std::vector<Message>> buckets;  // keyed by formula

  const std::vector<Message>& bucket(const Concept& c) const;
  std::size_t size() const;
  std::vector<Message> all_messages() const;
};

using MessageSource = std::function<Message(const Concept&, Rng&)>;

// Spreads n messages over the concepts as evenly as possible (bucket sizes
// differ by at most one), sampling each from `source`.
AcreCorpus collect_corpus(const MessageSource& source, const std::vector<Concept>& concepts, std::size_t n,
                          const ChannelConfig& channel, std::uint64_t seed);

struct TeacherSampling {
  world::GameType game_type = world::GameType::concept_game;
  world::GameShape shape;
  world::RenderConfig render;
  bool stochastic = false;  // train-mode sampling instead of greedy
  float mixture = 0.0f;
  int batch = 64;
};

// One fresh game per message, emitted by the frozen teacher.
AcreCorpus collect_corpus(agents::Teacher& teacher, const std::vector<Concept>& concepts, std::size_t n,
                          const TeacherSampling& sampling, std::uint64_t seed);

// Messages equal to the concept's own formula tokens, over the 14-symbol
// formula vocabulary (11 primitives, NOT, AND, OR).
ChannelConfig formula_channel();
Message formula_message(const Concept& c);

struct AcreConfig {
  int dim = 50;
  int heads = 2;
  int ff = 100;
  int layers = 2;
  int epochs = 20;
  int batch = 32;
  float lr = 1e-3f;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
};

// Token layout shared by all models: channel tokens, then SEP, BOS, EOS.
struct TokenLayout {
  int vocab = 0;
  int sep() const { return vocab; }
  int bos() const { return vocab + 1; }
  int eos() const { return vocab + 2; }
  int inputs() const { return vocab + 3; }
  int outputs() const { return vocab + 1; }  // channel tokens and EOS
};

struct DecodeOptions {
  bool greedy = false;
};

// Decoder shared by both model kinds; the operator model adds an encoder.
class SequenceModel : public nn::Module {
 public:
  SequenceModel() = default;
  SequenceModel(const ChannelConfig& channel, const AcreConfig& config, bool conditional, nn::Rng& rng);

  bool conditional() const { return conditional_; }
  // Mean token negative log-likelihood of `targets` (teacher forcing).
  nn::Var loss(std::span<const Message> targets, std::span<const std::vector<Message>> arguments) const;
  std::vector<Message> sample(std::size_t count, std::span<const std::vector<Message>> arguments,
                              const DecodeOptions& options, Rng& rng) const;
  void visit(const std::string& prefix, nn::ParamVisitor& v) override;

 private:
  struct Encoded {
    nn::Var memory;
    int length = 0;
    std::vector<int> lengths;
  };
  Encoded encode(std::span<const std::vector<Message>> arguments) const;
  nn::Var decoder_logits(const std::vector<std::vector<int>>& inputs, int t, const Encoded* memory) const;

  ChannelConfig channel_;
  AcreConfig config_;
  TokenLayout tokens_;
  bool conditional_ = false;
  int max_input_ = 0;
  nn::Embedding embed_, pos_, enc_pos_;
  std::vector<nn::TransformerLayer> encoder_, decoder_;
  nn::LayerNorm enc_norm_, dec_norm_;
  nn::Linear head_;
};

enum class Operator { NOT, AND, OR };
std::string operator_name(Operator op);

struct ConceptSplit {
  std::vector<Concept> train;
  std::vector<Concept> val;
  std::vector<Concept> test;
};

// Conjunctions and disjunctions split by concept, stratified by connective
// and by how many operands are negated.
ConceptSplit split_binary_concepts(const std::vector<Concept>& concepts, std::uint64_t seed);

struct TrainRecord {
  std::string model;
  int epochs_run = 0;
  int best_epoch = 0;
  double best_val_loss = 0;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
};

class AcreModelSet {
 public:
  ChannelConfig channel;
  AcreConfig config;
  std::map<int, SequenceModel> primitives;  // keyed by primitive index
  std::map<Operator, SequenceModel> operators;
  std::vector<std::string> training_order;
  std::vector<TrainRecord> records;
  ConceptSplit split;

  bool has(const Concept& c) const;
  void save(const std::filesystem::path& dir);
  static AcreModelSet load(const std::filesystem::path& dir);
};

AcreModelSet train_acre(const AcreCorpus& corpus, const AcreConfig& config);

struct SampleTrace {
  Message message;
  std::vector<std::string> chain;  // models invoked, innermost first
};

struct SampleOptions {
  bool greedy_primitives = false;
  bool greedy_operators = true;
};

SampleTrace acre_sample_traced(const AcreModelSet& models, const Concept& c, Rng& rng,
                               const SampleOptions& options = {});
Message acre_sample(const AcreModelSet& models, const Concept& c, Rng& rng, const SampleOptions& options = {});

// A teacher message for the pool concept nearest to c in formula edit
// distance, ties broken uniformly.
Message closest_baseline(const AcreCorpus& corpus, const Concept& c, const std::vector<Concept>& pool, Rng& rng);
Concept closest_concept(const Concept& c, const std::vector<Concept>& pool, Rng& rng);
Message random_baseline(const AcreCorpus& corpus, Rng& rng);

struct LanguageRow {
  std::string language;
  std::string split;  // "train" or "test"
  double bleu1 = 0;
  double bleu4 = 0;
  double student_accuracy = 0;
  std::size_t games = 0;
};

struct AcreEvalOptions {
  training::EvalOptions games;  // view and rendering of the evaluation games
  int games_per_concept = 2;
  int passes = 5;
  std::uint64_t seed = 0;
};

// Rows for Teacher / ACRe / Closest / Random on the train and test concept
// groups. The student is optional; without one accuracies are left at 0.
std::vector<LanguageRow> evaluate_acre(const AcreModelSet& models, const AcreCorpus& corpus,
                                       agents::Student* student, const AcreEvalOptions& options);

std::string rows_to_tsv(const std::vector<LanguageRow>& rows);

}  // namespace setcomm::acre
