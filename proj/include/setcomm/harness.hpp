#pragma once

// Experiment orchestration: configs, run directories, sweeps, the
// ground-truth-language listener and plot files.

#include "setcomm/agents.hpp"
#include "setcomm/metrics.hpp"
#include "setcomm/training.hpp"
#include "setcomm/world.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace setcomm::harness {

enum class DatasetKind { shapeworld, birds };
std::string_view dataset_name(DatasetKind d);
DatasetKind parse_dataset(std::string_view name);

struct ExperimentConfig {
  std::string name = "run";
  DatasetKind dataset = DatasetKind::shapeworld;
  std::string channel = "default";  // ChannelConfig preset
  int n_targets = 10;               // distractors match
  world::DatasetConfig data;
  agents::AgentConfig agent;  // channel and resolution are overwritten by normalize()
  training::TrainConfig train;
  metrics::RhoOptions rho;
  int rho_every = 5;   // epochs between topographic-rho probes; 0 disables
  int rho_games = 0;   // validation games per probe; 0 = train.val_games
  int max_sunbursts = 8;
  int repetitions = 5;
  std::filesystem::path output_dir = "runs";

  world::GameType game_type() const { return train.game_type; }
  // Propagates channel preset, set size and render resolution into the
  // nested configs.
  void normalize();
  void validate() const;
};

// "paper": published sizes. "desk": the reduced CPU configuration used by
// the acceptance suite. "smoke": 200 base games, 2 epochs.
ExperimentConfig experiment_preset(std::string_view name);

nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

class UnsupportedFeature : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what);
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct RunArtifact {
  std::filesystem::path dir;
  ExperimentConfig config;
  training::TrainLog log;
  metrics::MessageCorpus corpus;  // test-set messages
  metrics::SystematicityReport report;
  std::vector<std::filesystem::path> plots;
  bool reused = false;
};

struct RunOptions {
  // Reuse a finished run directory whose stored config equals this one.
  bool reuse_completed = false;
};

// <output_dir>/<name>/{config.json, dataset.jsonl, checkpoints/, logs/,
// messages/test.jsonl, report.json, plots/}
RunArtifact run_experiment(const ExperimentConfig& config, const RunOptions& options = {});
std::filesystem::path run_dir(const ExperimentConfig& config);
bool run_completed(const std::filesystem::path& dir);

agents::AgentPair load_pair(const std::filesystem::path& dir);
ExperimentConfig load_config(const std::filesystem::path& dir);
world::Dataset load_dataset(const std::filesystem::path& dir);
metrics::MessageCorpus load_messages(const std::filesystem::path& dir);
// Report recomputed from messages/test.jsonl with the stored rho options.
metrics::SystematicityReport reanalyze(const std::filesystem::path& dir);

struct SweepRow {
  std::string cell;  // set size or channel preset
  double x = 0;      // numeric cell value
  int repetition = 0;
  std::uint64_t seed = 0;
  double accuracy = 0;
  double entropy = 0;
  double ami = 0;
  std::optional<double> rho_edit;
  std::filesystem::path dir;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::optional<double> spearman;  // x against rho_edit over rows with a defined rho

  std::string to_tsv() const;
  nlohmann::json to_json() const;
};

// Seeds for repetition r of a sweep: data and training seeds derived from
// the base config, shared across the cells of the same repetition.
ExperimentConfig repetition_config(const ExperimentConfig& base, int repetition);

SweepResult sweep_set_size(const ExperimentConfig& base, const std::vector<int>& sizes, int repetitions,
                           const RunOptions& options = {});
SweepResult sweep_channel(const ExperimentConfig& base, const std::vector<std::string>& presets, int repetitions,
                          const RunOptions& options = {});

struct IdealListenerResult {
  double accuracy = 0;
  double accuracy_seen = 0;
  double accuracy_unseen = 0;
  training::TrainLog log;
};

// Student trained alone on ground-truth formula tokens, with the same data,
// batching and selection protocol as train_pair.
IdealListenerResult ideal_language_listener(const ExperimentConfig& config);

// Prefix-tree table, per-concept entropy table, sunbursts and the rho curve
// for a finished run directory.
std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& dir, int max_sunbursts = 8);
std::vector<std::filesystem::path> emit_sweep_plot(const SweepResult& sweep, const std::filesystem::path& dir);

}  // namespace setcomm::harness
