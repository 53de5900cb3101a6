#include "setcomm/metrics.hpp"

#include "setcomm/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

namespace setcomm::metrics {

MessageCorpus corpus_from_evaluation(const training::Evaluation& ev) {
  MessageCorpus out;
  out.reserve(ev.games.size());
  for (const auto& g : ev.games) {
    out.push_back(CorpusRecord{g.target_concept, g.message, world::is_seen(g.split), g.index, g.accuracy});
  }
  return out;
}

void write_corpus(std::ostream& os, const MessageCorpus& corpus) {
  for (const auto& r : corpus) {
    nlohmann::json j = {{"game", r.game_id},
                        {"concept", r.target_concept.formula()},
                        {"split", r.seen ? "seen" : "unseen"},
                        {"tokens", r.tokens},
                        {"accuracy", r.accuracy}};
    os << j.dump() << '\n';
  }
}

MessageCorpus read_corpus(std::istream& is) {
  MessageCorpus out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const std::string split = j.at("split").get<std::string>();
    if (split != "seen" && split != "unseen") throw std::runtime_error("corpus: bad split '" + split + "'");
    out.push_back(CorpusRecord{parse_concept(j.at("concept").get<std::string>()),
                               j.at("tokens").get<Message>(), split == "seen",
                               j.at("game").get<std::size_t>(), j.value("accuracy", 0.0)});
  }
  return out;
}

void save_corpus(const std::filesystem::path& path, const MessageCorpus& corpus) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_corpus(os, corpus);
}

MessageCorpus load_corpus(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return read_corpus(is);
}

namespace {

template <typename Key, typename Fn>
std::vector<int> dense_labels(std::span<const CorpusRecord> corpus, Fn key) {
  std::map<Key, int> ids;
  std::vector<int> out;
  out.reserve(corpus.size());
  for (const auto& r : corpus) {
    auto [it, inserted] = ids.emplace(key(r), static_cast<int>(ids.size()));
    out.push_back(it->second);
  }
  return out;
}

std::vector<double> counts(std::span<const int> labels) {
  const int k = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<double> c(static_cast<std::size_t>(k), 0.0);
  for (int l : labels) {
    if (l < 0) throw std::invalid_argument("labels must be non-negative");
    c[static_cast<std::size_t>(l)] += 1.0;
  }
  return c;
}

double entropy_from_counts(const std::vector<double>& c, double n) {
  double h = 0;
  for (double v : c) {
    if (v > 0) h -= (v / n) * std::log(v / n);
  }
  return h;
}

std::vector<int> pair_labels(std::span<const int> a, std::span<const int> b) {
  std::map<std::pair<int, int>, int> ids;
  std::vector<int> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto [it, inserted] = ids.emplace(std::make_pair(a[i], b[i]), static_cast<int>(ids.size()));
    out.push_back(it->second);
  }
  return out;
}

void require_same_length(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw std::invalid_argument("label vectors differ in length");
}

std::vector<CorpusRecord> subset(std::span<const CorpusRecord> corpus, bool seen) {
  std::vector<CorpusRecord> out;
  for (const auto& r : corpus) {
    if (r.seen == seen) out.push_back(r);
  }
  return out;
}

}  // namespace

std::vector<int> messages_as_labels(std::span<const CorpusRecord> corpus) {
  return dense_labels<Message>(corpus, [](const CorpusRecord& r) { return r.tokens; });
}

std::vector<int> concepts_as_labels(std::span<const CorpusRecord> corpus) {
  return dense_labels<std::string>(corpus, [](const CorpusRecord& r) { return r.target_concept.formula(); });
}

double entropy_bits(std::span<const int> labels) {
  if (labels.empty()) return 0;
  return entropy_from_counts(counts(labels), static_cast<double>(labels.size())) / std::log(2.0);
}

double conditional_entropy_bits(std::span<const int> y, std::span<const int> given) {
  require_same_length(y, given);
  if (y.empty()) return 0;
  const auto joint = pair_labels(y, given);
  return std::max(0.0, entropy_bits(joint) - entropy_bits(given));
}

double conditional_entropy_pooled(std::span<const CorpusRecord> corpus) {
  if (corpus.empty()) throw std::invalid_argument("conditional_entropy: empty corpus");
  const auto m = messages_as_labels(corpus);
  const auto c = concepts_as_labels(corpus);
  return conditional_entropy_bits(m, c);
}

double conditional_entropy(std::span<const CorpusRecord> corpus) {
  if (corpus.empty()) throw std::invalid_argument("conditional_entropy: empty corpus");
  double total = 0;
  int parts = 0;
  for (bool seen : {true, false}) {
    const auto part = subset(corpus, seen);
    if (part.empty()) continue;
    total += conditional_entropy_pooled(part);
    ++parts;
  }
  return total / parts;
}

double mutual_information(std::span<const int> a, std::span<const int> b) {
  require_same_length(a, b);
  if (a.empty()) return 0;
  const double n = static_cast<double>(a.size());
  const auto ca = counts(a);
  const auto cb = counts(b);
  std::map<std::pair<int, int>, double> joint;
  for (std::size_t i = 0; i < a.size(); ++i) joint[{a[i], b[i]}] += 1.0;
  double mi = 0;
  for (const auto& [key, nij] : joint) {
    const double ai = ca[static_cast<std::size_t>(key.first)];
    const double bj = cb[static_cast<std::size_t>(key.second)];
    mi += (nij / n) * std::log(n * nij / (ai * bj));
  }
  return std::max(0.0, mi);
}

double expected_mutual_information(std::span<const int> a, std::span<const int> b) {
  require_same_length(a, b);
  const auto n_int = static_cast<long>(a.size());
  if (n_int == 0) return 0;
  const double n = static_cast<double>(n_int);
  std::vector<long> ca, cb;
  for (double v : counts(a)) if (v > 0) ca.push_back(static_cast<long>(v));
  for (double v : counts(b)) if (v > 0) cb.push_back(static_cast<long>(v));
  const auto lf = [](long k) { return std::lgamma(static_cast<double>(k) + 1.0); };
  const double lf_n = lf(n_int);
  double emi = 0;
  for (long ai : ca) {
    for (long bj : cb) {
      const long lo = std::max(1L, ai + bj - n_int);
      const long hi = std::min(ai, bj);
      const double fixed = lf(ai) + lf(bj) + lf(n_int - ai) + lf(n_int - bj) - lf_n;
      for (long k = lo; k <= hi; ++k) {
        const double kk = static_cast<double>(k);
        const double log_p = fixed - lf(k) - lf(ai - k) - lf(bj - k) - lf(n_int - ai - bj + k);
        emi += (kk / n) * std::log(n * kk / (static_cast<double>(ai) * static_cast<double>(bj))) * std::exp(log_p);
      }
    }
  }
  return emi;
}

double adjusted_mutual_info(std::span<const int> a, std::span<const int> b) {
  require_same_length(a, b);
  if (a.size() < 2) throw std::invalid_argument("adjusted_mutual_info: needs at least two records");
  const double n = static_cast<double>(a.size());
  const double ha = entropy_from_counts(counts(a), n);
  const double hb = entropy_from_counts(counts(b), n);
  const double mi = mutual_information(a, b);
  const double emi = expected_mutual_information(a, b);
  const double denom = std::max(ha, hb) - emi;
  if (std::fabs(denom) < 1e-12) return 0.0;
  return (mi - emi) / denom;
}

double adjusted_mutual_info(std::span<const CorpusRecord> corpus) {
  return adjusted_mutual_info(messages_as_labels(corpus), concepts_as_labels(corpus));
}

std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return xs[i] < xs[j]; });
  std::vector<double> ranks(xs.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("spearman: length mismatch");
  if (xs.size() < 2) throw std::invalid_argument("spearman: needs at least two points");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mx;
    const double dy = ry[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0 || syy <= 0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

ConceptDistanceFn concept_distance(ConceptDistance kind) {
  if (kind == ConceptDistance::edit) {
    return [](const Concept& a, const Concept& b) { return static_cast<double>(concept_edit_distance(a, b)); };
  }
  return [](const Concept& a, const Concept& b) { return hausdorff_distance(a.extension(), b.extension()); };
}

std::optional<double> topographic_rho(std::span<const CorpusRecord> corpus, const ConceptDistanceFn& distance,
                                      const RhoOptions& options) {
  const std::size_t n = corpus.size();
  if (n < 2) throw std::invalid_argument("topographic_rho: needs at least two records");
  const auto concept_ids = concepts_as_labels(corpus);
  const int k = *std::max_element(concept_ids.begin(), concept_ids.end()) + 1;
  std::vector<const Concept*> representative(static_cast<std::size_t>(k), nullptr);
  for (std::size_t i = 0; i < n; ++i) {
    auto& slot = representative[static_cast<std::size_t>(concept_ids[i])];
    if (!slot) slot = &corpus[i].target_concept;
  }
  std::vector<double> cache(static_cast<std::size_t>(k) * static_cast<std::size_t>(k),
                            std::numeric_limits<double>::quiet_NaN());
  auto cdist = [&](int a, int b) {
    double& v = cache[static_cast<std::size_t>(a) * static_cast<std::size_t>(k) + static_cast<std::size_t>(b)];
    if (std::isnan(v)) {
      v = distance(*representative[static_cast<std::size_t>(a)], *representative[static_cast<std::size_t>(b)]);
    }
    return v;
  };

  std::vector<double> md, cd;
  auto add_pair = [&](std::size_t i, std::size_t j) {
    md.push_back(static_cast<double>(levenshtein(corpus[i].tokens, corpus[j].tokens)));
    cd.push_back(cdist(concept_ids[i], concept_ids[j]));
  };
  const double total = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  if (total <= static_cast<double>(options.max_pairs)) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) add_pair(i, j);
    }
  } else {
    Rng rng(options.seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    while (md.size() < options.max_pairs) {
      const std::size_t i = pick(rng);
      const std::size_t j = pick(rng);
      if (i != j) add_pair(std::min(i, j), std::max(i, j));
    }
  }
  return spearman(md, cd);
}

std::optional<double> topographic_rho(std::span<const CorpusRecord> corpus, ConceptDistance kind,
                                      const RhoOptions& options) {
  return topographic_rho(corpus, concept_distance(kind), options);
}

namespace {

using NgramCounts = std::map<std::vector<int>, int>;

NgramCounts ngrams(const Message& m, int order) {
  NgramCounts out;
  if (static_cast<int>(m.size()) < order) return out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(order) <= m.size(); ++i) {
    ++out[std::vector<int>(m.begin() + static_cast<std::ptrdiff_t>(i),
                           m.begin() + static_cast<std::ptrdiff_t>(i) + order)];
  }
  return out;
}

struct BleuStats {
  std::vector<double> matches;
  std::vector<double> totals;
  double cand_len = 0;
  double ref_len = 0;
};

void accumulate_bleu(const Message& cand, std::span<const Message> refs, int max_n, BleuStats& s) {
  if (refs.empty()) throw std::invalid_argument("bleu: no references");
  for (int order = 1; order <= max_n; ++order) {
    const auto cn = ngrams(cand, order);
    NgramCounts max_ref;
    for (const auto& r : refs) {
      for (const auto& [g, c] : ngrams(r, order)) max_ref[g] = std::max(max_ref[g], c);
    }
    for (const auto& [g, c] : cn) {
      const auto it = max_ref.find(g);
      s.matches[static_cast<std::size_t>(order - 1)] += std::min(c, it == max_ref.end() ? 0 : it->second);
      s.totals[static_cast<std::size_t>(order - 1)] += c;
    }
  }
  const double c = static_cast<double>(cand.size());
  double best = -1;
  for (const auto& r : refs) {
    const double rl = static_cast<double>(r.size());
    if (best < 0 || std::fabs(rl - c) < std::fabs(best - c) || (std::fabs(rl - c) == std::fabs(best - c) && rl < best)) {
      best = rl;
    }
  }
  s.cand_len += c;
  s.ref_len += best;
}

double finish_bleu(const BleuStats& s) {
  if (s.cand_len <= 0) return 0;
  double log_sum = 0;
  int used = 0;
  for (std::size_t i = 0; i < s.totals.size(); ++i) {
    if (s.totals[i] <= 0) continue;
    if (s.matches[i] <= 0) return 0;
    log_sum += std::log(s.matches[i] / s.totals[i]);
    ++used;
  }
  if (used == 0) return 0;
  const double bp = s.cand_len > s.ref_len ? 1.0 : std::exp(1.0 - s.ref_len / s.cand_len);
  return 100.0 * bp * std::exp(log_sum / used);
}

void check_order(int max_n) {
  if (max_n < 1) throw std::invalid_argument("bleu: max_n must be positive");
}

}  // namespace

double bleu(const Message& candidate, std::span<const Message> references, int max_n) {
  check_order(max_n);
  if (candidate.empty()) return 0;
  BleuStats s{std::vector<double>(static_cast<std::size_t>(max_n), 0.0),
              std::vector<double>(static_cast<std::size_t>(max_n), 0.0), 0, 0};
  accumulate_bleu(candidate, references, max_n, s);
  return finish_bleu(s);
}

double corpus_bleu(std::span<const Message> candidates, std::span<const std::vector<Message>> references, int max_n) {
  check_order(max_n);
  if (candidates.size() != references.size()) throw std::invalid_argument("corpus_bleu: one reference set per candidate");
  BleuStats s{std::vector<double>(static_cast<std::size_t>(max_n), 0.0),
              std::vector<double>(static_cast<std::size_t>(max_n), 0.0), 0, 0};
  for (std::size_t i = 0; i < candidates.size(); ++i) accumulate_bleu(candidates[i], references[i], max_n, s);
  return finish_bleu(s);
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

SplitStats split_stats(std::span<const CorpusRecord> part, const RhoOptions& options) {
  SplitStats s;
  s.games = part.size();
  if (part.empty()) return s;
  double acc = 0;
  for (const auto& r : part) acc += r.accuracy;
  s.accuracy = acc / static_cast<double>(part.size());
  s.entropy = conditional_entropy_pooled(part);
  const auto m = messages_as_labels(part);
  s.distinct_messages = m.empty() ? 0 : static_cast<std::size_t>(*std::max_element(m.begin(), m.end()) + 1);
  if (part.size() >= 2) {
    s.ami = adjusted_mutual_info(part);
    s.rho_edit = topographic_rho(part, ConceptDistance::edit, options);
    s.rho_hausdorff = topographic_rho(part, ConceptDistance::hausdorff, options);
  }
  return s;
}

nlohmann::json split_json(const SplitStats& s) {
  return {{"games", s.games},
          {"accuracy", s.accuracy},
          {"entropy_bits", s.entropy},
          {"ami", s.ami},
          {"rho_edit", optional_json(s.rho_edit)},
          {"rho_hausdorff", optional_json(s.rho_hausdorff)},
          {"distinct_messages", s.distinct_messages}};
}

}  // namespace

nlohmann::json SystematicityReport::to_json() const {
  return {{"accuracy", accuracy},
          {"accuracy_seen", accuracy_seen},
          {"accuracy_unseen", accuracy_unseen},
          {"entropy_bits", entropy},
          {"entropy_base", 2},
          {"ami", ami},
          {"rho_edit", optional_json(rho_edit)},
          {"rho_hausdorff", optional_json(rho_hausdorff)},
          {"rho_max_pairs", rho_options.max_pairs},
          {"rho_seed", rho_options.seed},
          {"seen", split_json(seen)},
          {"unseen", split_json(unseen)}};
}

SystematicityReport make_report(std::span<const CorpusRecord> corpus, const RhoOptions& options) {
  if (corpus.empty()) throw std::invalid_argument("make_report: empty corpus");
  SystematicityReport r;
  r.rho_options = options;
  const auto seen = subset(corpus, true);
  const auto unseen = subset(corpus, false);
  r.seen = split_stats(seen, options);
  r.unseen = split_stats(unseen, options);
  double acc = 0;
  for (const auto& c : corpus) acc += c.accuracy;
  r.accuracy = acc / static_cast<double>(corpus.size());
  r.accuracy_seen = r.seen.accuracy;
  r.accuracy_unseen = r.unseen.accuracy;
  r.entropy = conditional_entropy(corpus);
  if (corpus.size() >= 2) {
    r.ami = adjusted_mutual_info(corpus);
    r.rho_edit = topographic_rho(corpus, ConceptDistance::edit, options);
    r.rho_hausdorff = topographic_rho(corpus, ConceptDistance::hausdorff, options);
  }
  return r;
}

CrossEvalResult cross_evaluate(training::AgentPair& pair, world::GameType eval_type,
                               std::span<const world::GameRecord> records, const training::EvalOptions& options,
                               bool reference_concepts_only, const RhoOptions& rho) {
  if (pair.config().vision.resolution != options.render.resolution) {
    throw std::invalid_argument("cross_evaluate: agent image resolution does not match the evaluation games");
  }
  std::vector<world::GameRecord> chosen;
  const auto refs = enumerate_ref_concepts();
  for (const auto& r : records) {
    if (reference_concepts_only && std::find(refs.begin(), refs.end(), r.target_concept) == refs.end()) continue;
    chosen.push_back(r);
  }
  if (chosen.empty()) throw std::invalid_argument("cross_evaluate: no games to evaluate");
  training::EvalOptions o = options;
  o.game_type = eval_type;
  const auto ev = training::evaluate_pair(pair, chosen, o);
  const auto corpus = corpus_from_evaluation(ev);
  CrossEvalResult out;
  out.accuracy = ev.acc;
  out.games = chosen.size();
  if (corpus.size() >= 2) {
    out.ami = adjusted_mutual_info(corpus);
    out.rho_edit = topographic_rho(corpus, ConceptDistance::edit, rho);
  }
  return out;
}

}  // namespace setcomm::metrics
