// Command-line front end: generate, train, evaluate, cross-eval, acre, sweep, plot.

#include "setcomm/acre.hpp"
#include "setcomm/cub.hpp"
#include "setcomm/harness.hpp"
#include "setcomm/log.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace setcomm;
using nlohmann::json;

namespace {

// Only CUB ingestion reads this.
fs::path data_root() {
  const char* v = std::getenv("SETCOMM_DATA_ROOT");
  return v ? fs::path(v) : fs::path("data");
}

struct ConfigFlags {
  std::string preset = "desk";
  std::string config_file;
  std::optional<std::string> name, dataset, game_type, channel, loss, output_dir;
  std::optional<int> n_targets, epochs, batch_size, games_per_epoch, n_base, n_val, n_test, resolution, blocks,
      filters, hidden, embedding, val_games, patience, rho_every, rho_games;
  std::optional<float> lr, mixture;
  std::optional<double> seen_fraction;
  std::optional<std::uint64_t> seed, data_seed, train_seed;
  std::optional<std::size_t> rho_max_pairs;

  void add(CLI::App* app) {
    app->add_option("--preset", preset, "base config: desk, paper or smoke")->capture_default_str();
    app->add_option("--config", config_file, "JSON config (as written to config.json); overrides --preset");
    app->add_option("--name", name, "run name (directory under --output-dir)");
    app->add_option("--dataset", dataset, "shapeworld or birds");
    app->add_option("--game-type", game_type, "ref, setref or concept");
    app->add_option("--channel", channel, "channel preset: S, M, L, XL, default");
    app->add_option("--n-targets", n_targets, "targets (and distractors) per game");
    app->add_option("--epochs", epochs);
    app->add_option("--lr", lr);
    app->add_option("--batch-size", batch_size);
    app->add_option("--games-per-epoch", games_per_epoch, "0 = one pass over the base games");
    app->add_option("--loss", loss, "bce or xent");
    app->add_option("--mixture", mixture, "uniform exploration weight");
    app->add_option("--patience", patience);
    app->add_option("--val-games", val_games);
    app->add_option("--n-base", n_base);
    app->add_option("--n-val", n_val);
    app->add_option("--n-test", n_test);
    app->add_option("--seen-fraction", seen_fraction);
    app->add_option("--resolution", resolution);
    app->add_option("--blocks", blocks);
    app->add_option("--filters", filters);
    app->add_option("--hidden", hidden);
    app->add_option("--embedding", embedding);
    app->add_option("--seed", seed, "sets both data and training seeds");
    app->add_option("--data-seed", data_seed);
    app->add_option("--train-seed", train_seed);
    app->add_option("--rho-every", rho_every);
    app->add_option("--rho-games", rho_games);
    app->add_option("--rho-max-pairs", rho_max_pairs);
    app->add_option("--output-dir", output_dir);
  }

  harness::ExperimentConfig build() const {
    harness::ExperimentConfig c;
    if (!config_file.empty()) {
      std::ifstream is(config_file);
      if (!is) throw std::runtime_error("cannot read " + config_file);
      c = harness::experiment_config_from_json(json::parse(is));
    } else {
      c = harness::experiment_preset(preset);
    }
    if (name) c.name = *name;
    if (dataset) c.dataset = harness::parse_dataset(*dataset);
    if (game_type) c.train.game_type = world::parse_game_type(*game_type);
    if (channel) c.channel = *channel;
    if (n_targets) c.n_targets = *n_targets;
    if (epochs) c.train.epochs = *epochs;
    if (lr) c.train.lr = *lr;
    if (batch_size) c.train.batch_size = *batch_size;
    if (games_per_epoch) c.train.games_per_epoch = *games_per_epoch;
    if (loss) c.train.loss = *loss == "xent" ? training::LossVariant::xent : training::LossVariant::bce;
    if (mixture) c.train.mixture = *mixture;
    if (patience) c.train.patience = *patience;
    if (val_games) c.train.val_games = *val_games;
    if (n_base) c.data.n_base = *n_base;
    if (n_val) c.data.n_val = *n_val;
    if (n_test) c.data.n_test = *n_test;
    if (seen_fraction) c.data.seen_fraction = *seen_fraction;
    if (resolution) c.train.render.resolution = *resolution;
    if (blocks) c.agent.vision.blocks = *blocks;
    if (filters) c.agent.vision.filters = *filters;
    if (hidden) c.agent.hidden = *hidden;
    if (embedding) c.agent.embedding_dim = *embedding;
    if (seed) c.data.seed = c.train.seed = *seed;
    if (data_seed) c.data.seed = *data_seed;
    if (train_seed) c.train.seed = *train_seed;
    if (rho_every) c.rho_every = *rho_every;
    if (rho_games) c.rho_games = *rho_games;
    if (rho_max_pairs) c.rho.max_pairs = *rho_max_pairs;
    if (output_dir) c.output_dir = *output_dir;
    c.normalize();
    return c;
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

json cross_json(const metrics::CrossEvalResult& r) {
  return {{"accuracy", r.accuracy}, {"ami", r.ami}, {"rho_edit", r.rho_edit ? json(*r.rho_edit) : json(nullptr)},
          {"games", r.games}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Set-based signaling games: data, training, analysis"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "warnings only");

  // generate
  ConfigFlags gen_flags;
  std::string gen_out;
  auto* gen = app.add_subcommand("generate", "build a dataset manifest (or summarize CUB for --dataset birds)");
  gen_flags.add(gen);
  gen->add_option("--out", gen_out, "manifest path");

  // train
  ConfigFlags train_flags;
  bool reuse = false;
  auto* train = app.add_subcommand("train", "train a teacher/student pair and write a run directory");
  train_flags.add(train);
  train->add_flag("--reuse", reuse, "keep a finished run with an identical config");

  // evaluate
  std::string eval_run;
  bool eval_fresh = false;
  auto* evaluate = app.add_subcommand("evaluate", "recompute the report of a run from its message dump");
  evaluate->add_option("--run", eval_run, "run directory")->required();
  evaluate->add_flag("--fresh", eval_fresh, "re-run the stored agents on the test games first");

  // cross-eval
  std::string cross_run, cross_type;
  bool cross_refs = false;
  auto* cross = app.add_subcommand("cross-eval", "zero-shot evaluation on another game type");
  cross->add_option("--run", cross_run, "run directory")->required();
  cross->add_option("--eval-type", cross_type, "ref, setref or concept")->required();
  cross->add_flag("--reference-only", cross_refs, "score only color AND shape concepts");

  // acre
  std::string acre_run, acre_out;
  bool acre_oracle = false;
  std::size_t acre_corpus = 0;
  acre::AcreConfig acre_cfg;
  int acre_passes = 5, acre_gpc = 2;
  auto* acre_cmd = app.add_subcommand("acre", "fit compositional reconstruction models to a teacher language");
  acre_cmd->add_option("--run", acre_run, "run directory whose teacher and student are used");
  acre_cmd->add_flag("--oracle", acre_oracle, "use the formula-token language instead of a trained teacher");
  acre_cmd->add_option("--corpus-size", acre_corpus, "teacher messages (default 100 per concept)");
  acre_cmd->add_option("--epochs", acre_cfg.epochs)->capture_default_str();
  acre_cmd->add_option("--lr", acre_cfg.lr)->capture_default_str();
  acre_cmd->add_option("--dim", acre_cfg.dim)->capture_default_str();
  acre_cmd->add_option("--seed", acre_cfg.seed)->capture_default_str();
  acre_cmd->add_option("--passes", acre_passes)->capture_default_str();
  acre_cmd->add_option("--games-per-concept", acre_gpc)->capture_default_str();
  acre_cmd->add_option("--out", acre_out, "directory for models and rows (default <run>/acre)");

  // sweep
  ConfigFlags sweep_flags;
  std::string sweep_kind = "set-size", sweep_sizes = "1,3,5,10", sweep_presets = "S,M,default,L,XL";
  int sweep_reps = 0;
  bool sweep_reuse = false;
  auto* sweep = app.add_subcommand("sweep", "set-size or channel-size sweep of independent runs");
  sweep_flags.add(sweep);
  sweep->add_option("--kind", sweep_kind, "set-size or channel")->capture_default_str();
  sweep->add_option("--sizes", sweep_sizes)->capture_default_str();
  sweep->add_option("--presets", sweep_presets)->capture_default_str();
  sweep->add_option("--repetitions", sweep_reps, "default: the config's repetitions");
  sweep->add_flag("--reuse", sweep_reuse);

  // plot
  std::string plot_run;
  int plot_max = -1;
  auto* plot_cmd = app.add_subcommand("plot", "write plot files for a run directory");
  plot_cmd->add_option("--run", plot_run, "run directory")->required();
  plot_cmd->add_option("--max-sunbursts", plot_max);

  CLI11_PARSE(app, argc, argv);
  if (quiet) set_log_level(LogLevel::warn);

  try {
    if (*gen) {
      const auto c = gen_flags.build();
      if (c.dataset == harness::DatasetKind::birds) {
        const auto data = cub::load_cub(data_root(), c.data.seed);
        std::cout << json{{"attributes", data.n_attributes}, {"train_classes", data.train.size()},
                          {"test_classes", data.test.size()}}
                         .dump(2)
                  << '\n';
        return 0;
      }
      const auto ds = world::build_shapeworld_dataset(c.data);
      const fs::path out = gen_out.empty() ? fs::path(c.name + ".jsonl") : fs::path(gen_out);
      world::save_manifest(out, ds);
      std::cout << json{{"manifest", out.string()}, {"seen", ds.seen.size()}, {"unseen", ds.unseen.size()},
                        {"train", ds.train.size()}, {"val", ds.val.size()}, {"test", ds.test.size()}}
                       .dump(2)
                << '\n';
    } else if (*train) {
      const auto art = harness::run_experiment(train_flags.build(), harness::RunOptions{reuse});
      std::cout << art.report.to_json().dump(2) << '\n';
    } else if (*evaluate) {
      const fs::path dir = eval_run;
      if (eval_fresh) {
        const auto c = harness::load_config(dir);
        auto pair = harness::load_pair(dir);
        const auto ds = harness::load_dataset(dir);
        const training::EvalOptions o{c.train.game_type, c.train.shape, c.train.render, c.train.eval_batch};
        metrics::save_corpus(dir / "messages" / "test.jsonl",
                             metrics::corpus_from_evaluation(training::evaluate_pair(pair, ds.test, o)));
      }
      const auto report = harness::reanalyze(dir);
      std::ifstream stored(dir / "report.json");
      const bool matches = stored && json::parse(stored) == report.to_json();
      std::cout << json{{"report", report.to_json()}, {"matches_stored", matches}}.dump(2) << '\n';
    } else if (*cross) {
      const fs::path dir = cross_run;
      const auto c = harness::load_config(dir);
      auto pair = harness::load_pair(dir);
      const auto ds = harness::load_dataset(dir);
      const training::EvalOptions o{c.train.game_type, c.train.shape, c.train.render, c.train.eval_batch};
      const auto r = metrics::cross_evaluate(pair, world::parse_game_type(cross_type), ds.test, o, cross_refs, c.rho);
      std::cout << cross_json(r).dump(2) << '\n';
    } else if (*acre_cmd) {
      if (acre_run.empty() && !acre_oracle) throw std::invalid_argument("acre needs --run or --oracle");
      const auto& concepts = enumerate_concepts();
      const std::size_t n = acre_corpus ? acre_corpus : concepts.size() * 100;
      acre::AcreCorpus corpus;
      std::optional<agents::AgentPair> pair;
      training::EvalOptions games;
      if (acre_oracle) {
        const auto src = [](const Concept& c, Rng&) { return acre::formula_message(c); };
        corpus = acre::collect_corpus(src, concepts, n, acre::formula_channel(), acre_cfg.seed);
      } else {
        const auto c = harness::load_config(acre_run);
        pair = harness::load_pair(acre_run);
        games = {c.train.game_type, c.train.shape, c.train.render, c.train.eval_batch};
        acre::TeacherSampling s;
        s.game_type = c.train.game_type;
        s.shape = c.train.shape;
        s.render = c.train.render;
        corpus = acre::collect_corpus(pair->teacher, concepts, n, s, acre_cfg.seed);
      }
      auto models = acre::train_acre(corpus, acre_cfg);
      acre::AcreEvalOptions eo;
      eo.games = games;
      eo.passes = acre_passes;
      eo.games_per_concept = acre_gpc;
      eo.seed = acre_cfg.seed;
      const auto rows = acre::evaluate_acre(models, corpus, pair ? &pair->student : nullptr, eo);
      const fs::path out = !acre_out.empty() ? fs::path(acre_out) : (acre_run.empty() ? fs::path("acre") : fs::path(acre_run) / "acre");
      models.save(out);
      std::ofstream(out / "rows.tsv") << acre::rows_to_tsv(rows);
      std::cout << acre::rows_to_tsv(rows);
    } else if (*sweep) {
      const auto c = sweep_flags.build();
      const int reps = sweep_reps > 0 ? sweep_reps : c.repetitions;
      harness::SweepResult result;
      if (sweep_kind == "set-size") {
        std::vector<int> sizes;
        for (const auto& s : split_list(sweep_sizes)) sizes.push_back(std::stoi(s));
        result = harness::sweep_set_size(c, sizes, reps, harness::RunOptions{sweep_reuse});
      } else if (sweep_kind == "channel") {
        result = harness::sweep_channel(c, split_list(sweep_presets), reps, harness::RunOptions{sweep_reuse});
      } else {
        throw std::invalid_argument("unknown sweep kind '" + sweep_kind + "'");
      }
      harness::emit_sweep_plot(result, c.output_dir / c.name);
      std::cout << result.to_tsv();
      if (result.spearman) std::cout << "spearman(x, rho_edit) = " << *result.spearman << '\n';
    } else if (*plot_cmd) {
      const auto c = harness::load_config(plot_run);
      for (const auto& p : harness::emit_plots(plot_run, plot_max >= 0 ? plot_max : c.max_sunbursts)) {
        std::cout << p.string() << '\n';
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
