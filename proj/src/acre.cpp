#include "setcomm/acre.hpp"

#include "setcomm/log.hpp"
#include "setcomm/metrics.hpp"
#include "setcomm/nn/checkpoint.hpp"
#include "setcomm/nn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace setcomm::acre {

using nn::Mat;
using nn::Var;

const std::vector<Message>& AcreCorpus::bucket(const Concept& c) const {
  const auto it = buckets.find(c.formula());
  if (it == buckets.end()) throw std::out_of_range("no messages for concept '" + c.formula() + "'");
  return it->second;
}

std::size_t AcreCorpus::size() const {
  std::size_t n = 0;
  for (const auto& [k, v] : buckets) n += v.size();
  return n;
}

std::vector<Message> AcreCorpus::all_messages() const {
  std::vector<Message> out;
  for (const auto& c : concepts) {
    const auto& b = bucket(c);
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

namespace {

std::vector<std::size_t> even_counts(std::size_t n, std::size_t k) {
  std::vector<std::size_t> counts(k, n / k);
  for (std::size_t i = 0; i < n % k; ++i) ++counts[i];
  return counts;
}

}  // namespace

AcreCorpus collect_corpus(const MessageSource& source, const std::vector<Concept>& concepts, std::size_t n,
                          const ChannelConfig& channel, std::uint64_t seed) {
  if (concepts.empty()) throw std::invalid_argument("collect_corpus: no concepts");
  AcreCorpus corpus;
  corpus.channel = channel;
  corpus.concepts = concepts;
  const auto counts = even_counts(n, concepts.size());
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    Rng rng(derive_seed(seed, {0xc0, i}));
    auto& b = corpus.buckets[concepts[i].formula()];
    for (std::size_t k = 0; k < counts[i]; ++k) {
      Message m = source(concepts[i], rng);
      if (!agents::message_fits(m, channel)) throw std::invalid_argument("collect_corpus: message outside the channel");
      b.push_back(std::move(m));
    }
  }
  return corpus;
}

AcreCorpus collect_corpus(agents::Teacher& teacher, const std::vector<Concept>& concepts, std::size_t n,
                          const TeacherSampling& s, std::uint64_t seed) {
  if (concepts.empty()) throw std::invalid_argument("collect_corpus: no concepts");
  nn::NoGradGuard guard;
  AcreCorpus corpus;
  corpus.channel = teacher.config().channel;
  corpus.concepts = concepts;
  const auto counts = even_counts(n, concepts.size());
  std::vector<std::pair<std::size_t, std::uint64_t>> jobs;
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    corpus.buckets[concepts[i].formula()];
    for (std::size_t k = 0; k < counts[i]; ++k) jobs.emplace_back(i, derive_seed(seed, {0xc1, i, k}));
  }
  const agents::EmitOptions emit{s.stochastic ? agents::EmitMode::train : agents::EmitMode::eval, s.mixture, 1.0f};
  Rng rng(derive_seed(seed, {0xc2}));
  const auto step = static_cast<std::size_t>(std::max(1, s.batch));
  for (std::size_t begin = 0; begin < jobs.size(); begin += step) {
    const std::size_t end = std::min(jobs.size(), begin + step);
    std::vector<world::Game> games;
    for (std::size_t j = begin; j < end; ++j) {
      const world::GameRecord rec{world::Split::train, concepts[jobs[j].first], jobs[j].second};
      games.push_back(world::materialize(rec, s.game_type, s.shape, s.render, derive_seed(jobs[j].second, {1})));
    }
    // Batch statistics are frozen: the teacher always runs its eval-mode encoder here.
    auto [pos, neg] = teacher.encode_prototypes(agents::SceneBatch::teacher_view(games), false);
    const auto out = teacher.decode(pos, neg, emit, rng);
    for (std::size_t j = begin; j < end; ++j) {
      corpus.buckets[concepts[jobs[j].first].formula()].push_back(out.messages[j - begin]);
    }
  }
  return corpus;
}

ChannelConfig formula_channel() { return {kNumPrimitives + 3, 5, true}; }

Message formula_message(const Concept& c) {
  Message m;
  for (const auto& tok : c.formula_tokens()) {
    if (tok == "NOT") m.push_back(kNumPrimitives);
    else if (tok == "AND") m.push_back(kNumPrimitives + 1);
    else if (tok == "OR") m.push_back(kNumPrimitives + 2);
    else m.push_back(Primitive::from_name(tok)->index());
  }
  return m;
}

nlohmann::json AcreConfig::to_json() const {
  return {{"dim", dim}, {"heads", heads}, {"ff", ff}, {"layers", layers}, {"epochs", epochs},
          {"batch", batch}, {"lr", lr}, {"seed", seed}};
}

SequenceModel::SequenceModel(const ChannelConfig& channel, const AcreConfig& config, bool conditional, nn::Rng& rng)
    : channel_(channel), config_(config), tokens_{channel.vocab_size}, conditional_(conditional) {
  max_input_ = 2 * channel.max_len + 2;
  embed_ = nn::Embedding(tokens_.inputs(), config.dim, rng, 0.1f);
  pos_ = nn::Embedding(channel.max_len + 1, config.dim, rng, 0.1f);
  for (int l = 0; l < config.layers; ++l) decoder_.emplace_back(config.dim, config.heads, config.ff, conditional, rng);
  dec_norm_ = nn::LayerNorm(config.dim);
  if (conditional) {
    enc_pos_ = nn::Embedding(max_input_, config.dim, rng, 0.1f);
    for (int l = 0; l < config.layers; ++l) encoder_.emplace_back(config.dim, config.heads, config.ff, false, rng);
    enc_norm_ = nn::LayerNorm(config.dim);
  }
  head_ = nn::Linear(config.dim, tokens_.outputs(), rng);
}

void SequenceModel::visit(const std::string& prefix, nn::ParamVisitor& v) {
  embed_.visit(prefix + "embed.", v);
  pos_.visit(prefix + "pos.", v);
  for (std::size_t l = 0; l < decoder_.size(); ++l) decoder_[l].visit(prefix + "dec" + std::to_string(l) + ".", v);
  dec_norm_.visit(prefix + "dec_norm.", v);
  if (conditional_) {
    enc_pos_.visit(prefix + "enc_pos.", v);
    for (std::size_t l = 0; l < encoder_.size(); ++l) encoder_[l].visit(prefix + "enc" + std::to_string(l) + ".", v);
    enc_norm_.visit(prefix + "enc_norm.", v);
  }
  head_.visit(prefix + "head.", v);
}

SequenceModel::Encoded SequenceModel::encode(std::span<const std::vector<Message>> arguments) const {
  Encoded e;
  std::vector<std::vector<int>> ids;
  for (const auto& args : arguments) {
    std::vector<int> seq{tokens_.bos()};
    for (std::size_t a = 0; a < args.size(); ++a) {
      if (a > 0) seq.push_back(tokens_.sep());
      seq.insert(seq.end(), args[a].begin(), args[a].end());
    }
    if (static_cast<int>(seq.size()) > max_input_) throw std::invalid_argument("operator input too long");
    e.length = std::max(e.length, static_cast<int>(seq.size()));
    e.lengths.push_back(static_cast<int>(seq.size()));
    ids.push_back(std::move(seq));
  }
  const int batch = static_cast<int>(ids.size());
  std::vector<int> flat, positions;
  for (const auto& seq : ids) {
    for (int t = 0; t < e.length; ++t) {
      flat.push_back(t < static_cast<int>(seq.size()) ? seq[static_cast<std::size_t>(t)] : tokens_.sep());
      positions.push_back(t);
    }
  }
  Var x = nn::add(embed_(flat), enc_pos_(positions));
  for (const auto& layer : encoder_) x = layer(x, batch, e.length, false, e.lengths);
  e.memory = enc_norm_(x);
  return e;
}

Var SequenceModel::decoder_logits(const std::vector<std::vector<int>>& inputs, int t, const Encoded* memory) const {
  const int batch = static_cast<int>(inputs.size());
  std::vector<int> flat, positions, lengths;
  for (const auto& seq : inputs) {
    lengths.push_back(std::max(1, std::min(t, static_cast<int>(seq.size()))));
    for (int i = 0; i < t; ++i) {
      flat.push_back(i < static_cast<int>(seq.size()) ? seq[static_cast<std::size_t>(i)] : tokens_.eos());
      positions.push_back(i);
    }
  }
  Var x = nn::add(embed_(flat), pos_(positions));
  for (const auto& layer : decoder_) {
    if (conditional_) {
      x = layer(x, batch, t, true, lengths, &memory->memory, memory->length, memory->lengths);
    } else {
      x = layer(x, batch, t, true, lengths);
    }
  }
  return head_(dec_norm_(x));
}

Var SequenceModel::loss(std::span<const Message> targets, std::span<const std::vector<Message>> arguments) const {
  if (conditional_ && arguments.size() != targets.size()) throw std::invalid_argument("one argument list per target");
  const int t = channel_.max_len + 1;
  std::vector<std::vector<int>> inputs;
  std::vector<int> labels;
  for (const auto& m : targets) {
    std::vector<int> in{tokens_.bos()};
    in.insert(in.end(), m.begin(), m.end());
    for (int i = 0; i < t; ++i) {
      if (i < static_cast<int>(m.size())) labels.push_back(m[static_cast<std::size_t>(i)]);
      else if (i == static_cast<int>(m.size())) labels.push_back(channel_.vocab_size);  // EOS output
      else labels.push_back(-1);
    }
    inputs.push_back(std::move(in));
  }
  Encoded mem;
  if (conditional_) mem = encode(arguments);
  return nn::cross_entropy(decoder_logits(inputs, t, conditional_ ? &mem : nullptr), labels);
}

std::vector<Message> SequenceModel::sample(std::size_t count, std::span<const std::vector<Message>> arguments,
                                           const DecodeOptions& options, Rng& rng) const {
  nn::NoGradGuard guard;
  if (conditional_ && arguments.size() != count) throw std::invalid_argument("one argument list per sample");
  if (count == 0) return {};
  Encoded mem;
  if (conditional_) mem = encode(arguments);
  std::vector<std::vector<int>> seqs(count, std::vector<int>{tokens_.bos()});
  std::vector<bool> done(count, false);
  std::vector<Message> out(count);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int eos_out = channel_.vocab_size;
  for (int step = 0; step < channel_.max_len; ++step) {
    const int t = step + 1;
    const Var logits = decoder_logits(seqs, t, conditional_ ? &mem : nullptr);
    for (std::size_t b = 0; b < count; ++b) {
      if (done[b]) continue;
      Eigen::RowVectorXf row = logits.value().row(static_cast<Eigen::Index>(b) * t + step);
      if (!channel_.use_eos) row(eos_out) = -std::numeric_limits<float>::infinity();
      int tok = 0;
      if (options.greedy) {
        Eigen::Index best = 0;
        row.maxCoeff(&best);
        tok = static_cast<int>(best);
      } else {
        const float mx = row.maxCoeff();
        Eigen::RowVectorXd p = (row.array() - mx).exp().cast<double>();
        double u = unit(rng) * p.sum();
        tok = static_cast<int>(p.size()) - 1;
        for (Eigen::Index k = 0; k < p.size(); ++k) {
          u -= p(k);
          if (u <= 0) {
            tok = static_cast<int>(k);
            break;
          }
        }
      }
      if (tok == eos_out) {
        done[b] = true;
      } else {
        out[b].push_back(tok);
        seqs[b].push_back(tok);
      }
    }
    if (std::all_of(done.begin(), done.end(), [](bool d) { return d; })) break;
  }
  return out;
}

std::string operator_name(Operator op) {
  switch (op) {
    case Operator::NOT: return "NOT";
    case Operator::AND: return "AND";
    case Operator::OR: return "OR";
  }
  return "?";
}

ConceptSplit split_binary_concepts(const std::vector<Concept>& concepts, std::uint64_t seed) {
  std::map<std::pair<int, int>, std::vector<Concept>> strata;
  for (const auto& c : concepts) {
    if (c.is_literal()) continue;
    const int negs = (c.left().negated ? 1 : 0) + (c.right().negated ? 1 : 0);
    strata[{c.kind() == ConceptKind::conjunction ? 0 : 1, negs}].push_back(c);
  }
  ConceptSplit split;
  Rng rng(derive_seed(seed, {0x5b17}));
  for (auto& [key, members] : strata) {
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t n = members.size();
    std::size_t n_test = static_cast<std::size_t>(std::lround(0.1 * static_cast<double>(n)));
    std::size_t n_val = n_test;
    if (n >= 3) {
      n_test = std::max<std::size_t>(1, n_test);
      n_val = std::max<std::size_t>(1, n_val);
    }
    for (std::size_t i = 0; i < n; ++i) {
      auto& dst = i < n_test ? split.test : (i < n_test + n_val ? split.val : split.train);
      dst.push_back(members[i]);
    }
  }
  return split;
}

bool AcreModelSet::has(const Concept& c) const {
  auto has_literal = [&](const Literal& l) {
    return primitives.count(l.primitive.index()) && (!l.negated || operators.count(Operator::NOT));
  };
  switch (c.kind()) {
    case ConceptKind::primitive:
    case ConceptKind::negation: return has_literal(c.left());
    case ConceptKind::conjunction:
      return operators.count(Operator::AND) && has_literal(c.left()) && has_literal(c.right());
    case ConceptKind::disjunction:
      return operators.count(Operator::OR) && has_literal(c.left()) && has_literal(c.right());
  }
  return false;
}

namespace {

// Batched recursive sampler for many concepts at once.
std::vector<SampleTrace> sample_many(const AcreModelSet& models, const std::vector<Concept>& concepts, Rng& rng,
                                     const SampleOptions& options) {
  for (const auto& c : concepts) {
    if (!models.has(c)) throw std::invalid_argument("ACRe has no trained model for '" + c.formula() + "'");
  }
  struct Slot {
    std::size_t concept_index;
    int which;  // 0 left, 1 right
    Literal literal;
  };
  std::vector<Slot> slots;
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    slots.push_back({i, 0, concepts[i].left()});
    if (!concepts[i].is_literal()) slots.push_back({i, 1, concepts[i].right()});
  }
  std::vector<Message> lit_msg(slots.size());
  std::vector<std::vector<std::string>> lit_chain(slots.size());

  const DecodeOptions prim_opts{options.greedy_primitives};
  const DecodeOptions op_opts{options.greedy_operators};
  for (const auto& [index, model] : models.primitives) {
    std::vector<std::size_t> want;
    for (std::size_t s = 0; s < slots.size(); ++s) {
      if (slots[s].literal.primitive.index() == index) want.push_back(s);
    }
    if (want.empty()) continue;
    const auto msgs = model.sample(want.size(), {}, prim_opts, rng);
    const std::string name = "LM(" + std::string(Primitive::from_index(index).name()) + ")";
    for (std::size_t k = 0; k < want.size(); ++k) {
      lit_msg[want[k]] = msgs[k];
      lit_chain[want[k]].push_back(name);
    }
  }
  std::vector<std::size_t> negated;
  for (std::size_t s = 0; s < slots.size(); ++s) {
    if (slots[s].literal.negated) negated.push_back(s);
  }
  if (!negated.empty()) {
    std::vector<std::vector<Message>> args;
    for (auto s : negated) args.push_back({lit_msg[s]});
    const auto msgs = models.operators.at(Operator::NOT).sample(negated.size(), args, op_opts, rng);
    for (std::size_t k = 0; k < negated.size(); ++k) {
      lit_msg[negated[k]] = msgs[k];
      lit_chain[negated[k]].push_back("NOT");
    }
  }

  std::vector<SampleTrace> out(concepts.size());
  std::vector<std::vector<Message>> args(concepts.size());
  for (std::size_t s = 0; s < slots.size(); ++s) {
    auto& trace = out[slots[s].concept_index];
    trace.chain.insert(trace.chain.end(), lit_chain[s].begin(), lit_chain[s].end());
    args[slots[s].concept_index].push_back(lit_msg[s]);
  }
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    if (concepts[i].is_literal()) out[i].message = args[i][0];
  }
  for (Operator op : {Operator::AND, Operator::OR}) {
    const ConceptKind kind = op == Operator::AND ? ConceptKind::conjunction : ConceptKind::disjunction;
    std::vector<std::size_t> want;
    for (std::size_t i = 0; i < concepts.size(); ++i) {
      if (concepts[i].kind() == kind) want.push_back(i);
    }
    if (want.empty()) continue;
    std::vector<std::vector<Message>> op_args;
    for (auto i : want) op_args.push_back(args[i]);
    const auto msgs = models.operators.at(op).sample(want.size(), op_args, op_opts, rng);
    for (std::size_t k = 0; k < want.size(); ++k) {
      out[want[k]].message = msgs[k];
      out[want[k]].chain.push_back(operator_name(op));
    }
  }
  return out;
}

double eval_loss(const SequenceModel& model, std::span<const Message> targets,
                 std::span<const std::vector<Message>> args, int batch) {
  nn::NoGradGuard guard;
  double total = 0;
  std::size_t tokens = 0;
  for (std::size_t b = 0; b < targets.size(); b += static_cast<std::size_t>(batch)) {
    const std::size_t e = std::min(targets.size(), b + static_cast<std::size_t>(batch));
    std::size_t n = 0;
    for (std::size_t i = b; i < e; ++i) n += targets[i].size() + 1;
    const Var l = model.loss(targets.subspan(b, e - b), args.empty() ? args : args.subspan(b, e - b));
    total += static_cast<double>(l.item()) * static_cast<double>(n);
    tokens += n;
  }
  return tokens ? total / static_cast<double>(tokens) : 0.0;
}

// Teacher-forced training with per-epoch argument resampling and early
// stopping on the validation loss.
TrainRecord fit(SequenceModel& model, const std::string& name, const std::vector<Message>& train_targets,
                const std::vector<Message>& val_targets,
                const std::function<std::vector<std::vector<Message>>(bool validation, int epoch)>& arguments,
                const AcreConfig& config, std::uint64_t seed) {
  TrainRecord rec;
  rec.model = name;
  if (train_targets.empty()) throw std::invalid_argument("ACRe: no training messages for " + name);
  nn::Adam opt(model.parameters(), nn::AdamOptions{config.lr});
  const auto val_args = model.conditional() ? arguments(true, 0) : std::vector<std::vector<Message>>{};
  nn::StateDict best;
  rec.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train_targets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(epoch)}));
    const auto train_args = model.conditional() ? arguments(false, epoch) : std::vector<std::vector<Message>>{};
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    int steps = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config.batch)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(config.batch));
      std::vector<Message> targets;
      std::vector<std::vector<Message>> args;
      for (std::size_t i = b; i < e; ++i) {
        targets.push_back(train_targets[order[i]]);
        if (model.conditional()) args.push_back(train_args[order[i]]);
      }
      const Var l = model.loss(targets, args);
      opt.zero_grad();
      l.backward();
      opt.step();
      loss_sum += l.item();
      ++steps;
    }
    rec.train_loss.push_back(loss_sum / std::max(1, steps));
    const double vl = eval_loss(model, val_targets, val_args, 256);
    rec.val_loss.push_back(vl);
    rec.epochs_run = epoch;
    if (vl < rec.best_val_loss) {
      rec.best_val_loss = vl;
      rec.best_epoch = epoch;
      best = nn::state_dict(model);
    }
  }
  if (!best.empty()) nn::load_state_dict(model, best);
  std::ostringstream line;
  line << "acre " << name << ": best epoch " << rec.best_epoch << " val nll " << rec.best_val_loss;
  log_info(line.str());
  return rec;
}

// 90/10 split by message; a single message serves as both.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> message_split(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  if (n < 2) return {idx, idx};
  const std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.1 * static_cast<double>(n))));
  return {std::vector<std::size_t>(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end()),
          std::vector<std::size_t>(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val))};
}

}  // namespace

AcreModelSet train_acre(const AcreCorpus& corpus, const AcreConfig& config) {
  AcreModelSet models;
  models.channel = corpus.channel;
  models.config = config;
  nn::Rng init(derive_seed(config.seed, {0x1417}));

  for (const auto& p : Primitive::all()) {
    const Concept c = Concept::primitive(p);
    if (!corpus.buckets.count(c.formula()) || corpus.bucket(c).empty()) {
      throw std::invalid_argument("train_acre: no messages for primitive '" + c.formula() + "'");
    }
  }

  // Primitive LMs.
  for (const auto& p : Primitive::all()) {
    const auto& msgs = corpus.bucket(Concept::primitive(p));
    Rng rng(derive_seed(config.seed, {0x9a, static_cast<std::uint64_t>(p.index())}));
    const auto [tr, va] = message_split(msgs.size(), rng);
    std::vector<Message> train, val;
    for (auto i : tr) train.push_back(msgs[i]);
    for (auto i : va) val.push_back(msgs[i]);
    SequenceModel model(corpus.channel, config, false, init);
    models.records.push_back(fit(model, std::string(p.name()), train, val, {}, config,
                                 derive_seed(config.seed, {0x9b, static_cast<std::uint64_t>(p.index())})));
    models.primitives.emplace(p.index(), std::move(model));
    models.training_order.push_back(std::string(p.name()));
  }

  // NOT over primitive arguments.
  {
    std::vector<Message> all_targets;
    std::vector<int> all_prims;
    for (const auto& c : corpus.concepts) {
      if (c.kind() != ConceptKind::negation) continue;
      for (const auto& m : corpus.bucket(c)) {
        all_targets.push_back(m);
        all_prims.push_back(c.left().primitive.index());
      }
    }
    if (!all_targets.empty()) {
      Rng rng(derive_seed(config.seed, {0x40}));
      const auto [tr, va] = message_split(all_targets.size(), rng);
      std::vector<Message> train, val;
      std::vector<int> train_p, val_p;
      for (auto i : tr) {
        train.push_back(all_targets[i]);
        train_p.push_back(all_prims[i]);
      }
      for (auto i : va) {
        val.push_back(all_targets[i]);
        val_p.push_back(all_prims[i]);
      }
      auto args_for = [&](const std::vector<int>& prims, Rng& r) {
        std::vector<Concept> cs;
        for (int p : prims) cs.push_back(Concept::primitive(Primitive::from_index(p)));
        const auto traces = sample_many(models, cs, r, SampleOptions{false, false});
        std::vector<std::vector<Message>> out;
        for (const auto& t : traces) out.push_back({t.message});
        return out;
      };
      SequenceModel model(corpus.channel, config, true, init);
      const auto argfn = [&](bool validation, int epoch) {
        Rng r(derive_seed(config.seed, {0x41, validation ? 0u : 1u, static_cast<std::uint64_t>(epoch)}));
        return args_for(validation ? val_p : train_p, r);
      };
      models.records.push_back(fit(model, "NOT", train, val, argfn, config, derive_seed(config.seed, {0x42})));
      models.operators.emplace(Operator::NOT, std::move(model));
      models.training_order.push_back("NOT");
    }
  }

  // AND / OR, split by concept.
  models.split = split_binary_concepts(corpus.concepts, config.seed);
  for (Operator op : {Operator::AND, Operator::OR}) {
    const ConceptKind kind = op == Operator::AND ? ConceptKind::conjunction : ConceptKind::disjunction;
    auto gather = [&](const std::vector<Concept>& group, std::vector<Message>& targets, std::vector<Concept>& owners) {
      for (const auto& c : group) {
        if (c.kind() != kind) continue;
        for (const auto& m : corpus.bucket(c)) {
          targets.push_back(m);
          owners.push_back(c);
        }
      }
    };
    std::vector<Message> train, val;
    std::vector<Concept> train_c, val_c;
    gather(models.split.train, train, train_c);
    gather(models.split.val, val, val_c);
    if (train.empty()) continue;
    if (val.empty()) {
      val = train;
      val_c = train_c;
    }
    auto literal_args = [&](const std::vector<Concept>& owners, Rng& r) {
      std::vector<Concept> lits;
      for (const auto& c : owners) {
        lits.push_back(Concept::literal(c.left()));
        lits.push_back(Concept::literal(c.right()));
      }
      const auto traces = sample_many(models, lits, r, SampleOptions{false, false});
      std::vector<std::vector<Message>> out;
      for (std::size_t i = 0; i < owners.size(); ++i) out.push_back({traces[2 * i].message, traces[2 * i + 1].message});
      return out;
    };
    SequenceModel model(corpus.channel, config, true, init);
    const auto tag = static_cast<std::uint64_t>(op);
    const auto argfn = [&](bool validation, int epoch) {
      Rng r(derive_seed(config.seed, {0x43, tag, validation ? 0u : 1u, static_cast<std::uint64_t>(epoch)}));
      return literal_args(validation ? val_c : train_c, r);
    };
    models.records.push_back(fit(model, operator_name(op), train, val, argfn, config, derive_seed(config.seed, {0x44, tag})));
    models.operators.emplace(op, std::move(model));
    models.training_order.push_back(operator_name(op));
  }
  return models;
}

SampleTrace acre_sample_traced(const AcreModelSet& models, const Concept& c, Rng& rng, const SampleOptions& options) {
  return sample_many(models, {c}, rng, options).front();
}

Message acre_sample(const AcreModelSet& models, const Concept& c, Rng& rng, const SampleOptions& options) {
  return acre_sample_traced(models, c, rng, options).message;
}

Concept closest_concept(const Concept& c, const std::vector<Concept>& pool, Rng& rng) {
  if (pool.empty()) throw std::invalid_argument("closest_concept: empty pool");
  std::size_t best = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> ties;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const std::size_t d = concept_edit_distance(c, pool[i]);
    if (d < best) {
      best = d;
      ties.clear();
    }
    if (d == best) ties.push_back(i);
  }
  std::uniform_int_distribution<std::size_t> pick(0, ties.size() - 1);
  return pool[ties[pick(rng)]];
}

Message closest_baseline(const AcreCorpus& corpus, const Concept& c, const std::vector<Concept>& pool, Rng& rng) {
  const auto& b = corpus.bucket(closest_concept(c, pool, rng));
  if (b.empty()) throw std::invalid_argument("closest_baseline: empty bucket");
  std::uniform_int_distribution<std::size_t> pick(0, b.size() - 1);
  return b[pick(rng)];
}

Message random_baseline(const AcreCorpus& corpus, Rng& rng) {
  const std::size_t n = corpus.size();
  if (n == 0) throw std::invalid_argument("random_baseline: empty corpus");
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t k = pick(rng);
  for (const auto& c : corpus.concepts) {
    const auto& b = corpus.bucket(c);
    if (k < b.size()) return b[k];
    k -= b.size();
  }
  throw std::logic_error("random_baseline: index past the corpus");
}

std::vector<LanguageRow> evaluate_acre(const AcreModelSet& models, const AcreCorpus& corpus, agents::Student* student,
                                       const AcreEvalOptions& options) {
  std::vector<Concept> test = models.split.test;
  std::vector<Concept> train;
  for (const auto& c : corpus.concepts) {
    if (std::find(test.begin(), test.end(), c) == test.end()) train.push_back(c);
  }
  const std::vector<Concept>& pool = train;
  std::vector<LanguageRow> rows;
  const char* languages[] = {"Teacher", "ACRe", "Closest", "Random"};
  for (const auto* group : {&train, &test}) {
    const std::string split = group == &train ? "train" : "test";
    std::vector<world::GameRecord> records;
    for (int pass = 0; pass < options.passes; ++pass) {
      for (std::size_t i = 0; i < group->size(); ++i) {
        for (int g = 0; g < options.games_per_concept; ++g) {
          records.push_back({world::Split::test_seen, (*group)[i],
                             derive_seed(options.seed, {split == "train" ? 1u : 2u, static_cast<std::uint64_t>(pass), i,
                                                        static_cast<std::uint64_t>(g)})});
        }
      }
    }
    if (records.empty()) continue;
    std::vector<Concept> concepts;
    std::vector<std::vector<Message>> refs;
    for (const auto& r : records) {
      concepts.push_back(r.target_concept);
      refs.push_back(corpus.bucket(r.target_concept));
    }
    for (int lang = 0; lang < 4; ++lang) {
      Rng rng(derive_seed(options.seed, {0xe0, split == "train" ? 1u : 2u, static_cast<std::uint64_t>(lang)}));
      std::vector<Message> msgs;
      if (lang == 1) {
        for (const auto& t : sample_many(models, concepts, rng, SampleOptions{})) msgs.push_back(t.message);
      } else {
        for (const auto& c : concepts) {
          if (lang == 0) {
            const auto& b = corpus.bucket(c);
            std::uniform_int_distribution<std::size_t> pick(0, b.size() - 1);
            msgs.push_back(b[pick(rng)]);
          } else if (lang == 2) {
            msgs.push_back(closest_baseline(corpus, c, pool, rng));
          } else {
            msgs.push_back(random_baseline(corpus, rng));
          }
        }
      }
      LanguageRow row;
      row.language = languages[lang];
      row.split = split;
      row.games = records.size();
      row.bleu1 = metrics::corpus_bleu(msgs, refs, 1);
      row.bleu4 = metrics::corpus_bleu(msgs, refs, 4);
      if (student) row.student_accuracy = training::evaluate_student(*student, records, msgs, options.games).acc;
      rows.push_back(row);
    }
  }
  return rows;
}

std::string rows_to_tsv(const std::vector<LanguageRow>& rows) {
  std::ostringstream os;
  os << "language\tsplit\tbleu1\tbleu4\tstudent_accuracy\tgames\n";
  for (const auto& r : rows) {
    os << r.language << '\t' << r.split << '\t' << r.bleu1 << '\t' << r.bleu4 << '\t' << 100.0 * r.student_accuracy
       << '\t' << r.games << '\n';
  }
  return os.str();
}

void AcreModelSet::save(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["channel"] = agents::to_json(channel);
  manifest["config"] = config.to_json();
  manifest["training_order"] = training_order;
  auto formulas = [](const std::vector<Concept>& cs) {
    std::vector<std::string> out;
    for (const auto& c : cs) out.push_back(c.formula());
    return out;
  };
  manifest["split"] = {{"train", formulas(split.train)}, {"val", formulas(split.val)}, {"test", formulas(split.test)}};
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : records) {
    recs.push_back({{"model", r.model}, {"epochs_run", r.epochs_run}, {"best_epoch", r.best_epoch},
                    {"best_val_loss", r.best_val_loss}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}});
  }
  manifest["records"] = recs;
  for (auto& [index, model] : primitives) {
    const std::string name(Primitive::from_index(index).name());
    nn::write_checkpoint(dir / ("primitive_" + name + ".ckpt"), {{"primitive", name}}, nn::state_dict(model));
  }
  for (auto& [op, model] : operators) {
    nn::write_checkpoint(dir / ("operator_" + operator_name(op) + ".ckpt"), {{"operator", operator_name(op)}},
                         nn::state_dict(model));
  }
  std::ofstream os(dir / "curriculum.json");
  os << manifest.dump(2) << '\n';
}

AcreModelSet AcreModelSet::load(const std::filesystem::path& dir) {
  std::ifstream is(dir / "curriculum.json");
  if (!is) throw std::runtime_error("no curriculum.json in " + dir.string());
  const auto manifest = nlohmann::json::parse(is);
  AcreModelSet m;
  m.channel = agents::channel_from_json(manifest.at("channel"));
  const auto& cj = manifest.at("config");
  m.config.dim = cj.at("dim");
  m.config.heads = cj.at("heads");
  m.config.ff = cj.at("ff");
  m.config.layers = cj.at("layers");
  m.config.epochs = cj.at("epochs");
  m.config.batch = cj.at("batch");
  m.config.lr = cj.at("lr");
  m.config.seed = cj.at("seed");
  m.training_order = manifest.at("training_order").get<std::vector<std::string>>();
  auto parse_all = [](const nlohmann::json& arr) {
    std::vector<Concept> out;
    for (const auto& s : arr) out.push_back(parse_concept(s.get<std::string>()));
    return out;
  };
  m.split.train = parse_all(manifest.at("split").at("train"));
  m.split.val = parse_all(manifest.at("split").at("val"));
  m.split.test = parse_all(manifest.at("split").at("test"));
  nn::Rng rng(0);
  for (const auto& name : m.training_order) {
    if (auto p = Primitive::from_name(name)) {
      SequenceModel model(m.channel, m.config, false, rng);
      nn::load_state_dict(model, nn::read_checkpoint(dir / ("primitive_" + name + ".ckpt")).second);
      m.primitives.emplace(p->index(), std::move(model));
    } else {
      const Operator op = name == "NOT" ? Operator::NOT : (name == "AND" ? Operator::AND : Operator::OR);
      SequenceModel model(m.channel, m.config, true, rng);
      nn::load_state_dict(model, nn::read_checkpoint(dir / ("operator_" + name + ".ckpt")).second);
      m.operators.emplace(op, std::move(model));
    }
  }
  return m;
}

}  // namespace setcomm::acre
