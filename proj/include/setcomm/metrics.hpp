#pragma once

// Systematicity measures over message corpora.

#include "setcomm/agents.hpp"
#include "setcomm/concept.hpp"
#include "setcomm/edit_distance.hpp"
#include "setcomm/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace setcomm::metrics {

using agents::Message;

struct CorpusRecord {
  Concept target_concept;
  Message tokens;
  bool seen = true;
  std::size_t game_id = 0;
  double accuracy = 0;  // student accuracy on the game, when known
};

using MessageCorpus = std::vector<CorpusRecord>;

MessageCorpus corpus_from_evaluation(const training::Evaluation& ev);

// Line-delimited JSON dump: {"game", "concept", "split", "tokens", "accuracy"}.
void write_corpus(std::ostream& os, const MessageCorpus& corpus);
MessageCorpus read_corpus(std::istream& is);
void save_corpus(const std::filesystem::path& path, const MessageCorpus& corpus);
MessageCorpus load_corpus(const std::filesystem::path& path);

// Dense integer labels for arbitrary keys, in order of first appearance.
std::vector<int> messages_as_labels(std::span<const CorpusRecord> corpus);
std::vector<int> concepts_as_labels(std::span<const CorpusRecord> corpus);

// Shannon entropy of a label vector, bits.
double entropy_bits(std::span<const int> labels);
// H(Y|X) in bits, Y given X, over paired label vectors.
double conditional_entropy_bits(std::span<const int> y, std::span<const int> given);

// H(M|C) in bits, computed within seen and unseen games separately and then
// averaged over the splits present.
double conditional_entropy(std::span<const CorpusRecord> corpus);
// H(M|C) over the corpus as one pool.
double conditional_entropy_pooled(std::span<const CorpusRecord> corpus);

double mutual_information(std::span<const int> a, std::span<const int> b);  // nats
// E[I] under the hypergeometric permutation model, nats.
double expected_mutual_information(std::span<const int> a, std::span<const int> b);
// (I - E[I]) / (max(H(a), H(b)) - E[I]); 0 when the denominator vanishes.
double adjusted_mutual_info(std::span<const int> a, std::span<const int> b);
// AMI between the message and concept partitions of the pooled corpus.
double adjusted_mutual_info(std::span<const CorpusRecord> corpus);

using setcomm::levenshtein;

// Pearson correlation of average ranks. Empty when either rank vector has
// zero variance. Throws on length mismatch or fewer than two points.
std::optional<double> spearman(std::span<const double> xs, std::span<const double> ys);
std::vector<double> average_ranks(std::span<const double> xs);

enum class ConceptDistance { edit, hausdorff };
using ConceptDistanceFn = std::function<double(const Concept&, const Concept&)>;
ConceptDistanceFn concept_distance(ConceptDistance kind);

struct RhoOptions {
  std::size_t max_pairs = 50000;
  std::uint64_t seed = 0;
};

// Spearman correlation between pairwise message edit distances and pairwise
// concept distances over unordered record pairs, uniformly subsampled (with
// the recorded seed) when there are more than max_pairs.
std::optional<double> topographic_rho(std::span<const CorpusRecord> corpus, const ConceptDistanceFn& distance,
                                      const RhoOptions& options = {});
std::optional<double> topographic_rho(std::span<const CorpusRecord> corpus, ConceptDistance kind,
                                      const RhoOptions& options = {});

// BLEU in [0, 100] with clipped n-gram precision against every reference and
// the closest-length brevity penalty. Orders above the candidate length are
// left out of the geometric mean; an empty candidate scores 0.
double bleu(const Message& candidate, std::span<const Message> references, int max_n);
// Corpus-level BLEU: clipped counts and lengths summed over all candidates.
double corpus_bleu(std::span<const Message> candidates, std::span<const std::vector<Message>> references,
                   int max_n);

struct SplitStats {
  double accuracy = 0;
  double entropy = 0;  // H(M|C), bits
  double ami = 0;
  std::optional<double> rho_edit;
  std::optional<double> rho_hausdorff;
  std::size_t games = 0;
  std::size_t distinct_messages = 0;
};

struct SystematicityReport {
  double accuracy = 0;
  double accuracy_seen = 0;
  double accuracy_unseen = 0;
  double entropy = 0;  // averaged across splits
  double ami = 0;      // pooled
  std::optional<double> rho_edit;       // pooled
  std::optional<double> rho_hausdorff;  // pooled
  SplitStats seen;
  SplitStats unseen;
  RhoOptions rho_options;

  nlohmann::json to_json() const;
};

SystematicityReport make_report(std::span<const CorpusRecord> corpus, const RhoOptions& options = {});

struct CrossEvalResult {
  double accuracy = 0;
  double ami = 0;
  std::optional<double> rho_edit;
  std::size_t games = 0;
};

// Zero-shot evaluation of a trained pair on another game type. When
// `reference_concepts_only` is set, only games over color AND shape concepts
// are scored.
CrossEvalResult cross_evaluate(training::AgentPair& pair, world::GameType eval_type,
                               std::span<const world::GameRecord> records, const training::EvalOptions& options,
                               bool reference_concepts_only, const RhoOptions& rho = {});

}  // namespace setcomm::metrics
