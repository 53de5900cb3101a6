#include <doctest.h>

#include "setcomm/harness.hpp"
#include "setcomm/plot.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

using namespace setcomm;
using namespace setcomm::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "setcomm_harness_tests" / name;
  fs::remove_all(p);
  return p;
}

ExperimentConfig smoke(const fs::path& out, world::GameType type = world::GameType::setref) {
  ExperimentConfig c = experiment_preset("smoke");
  c.name = "smoke";
  c.output_dir = out;
  c.train.game_type = type;
  c.normalize();
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

const RunArtifact& smoke_run() {
  static const RunArtifact art = run_experiment(smoke(scratch("a")));
  return art;
}

}  // namespace

TEST_CASE("presets and config serialization") {
  for (const char* name : {"paper", "desk", "smoke"}) {
    const ExperimentConfig c = experiment_preset(name);
    CHECK_NOTHROW(c.validate());
    CHECK(c.agent.vision.resolution == c.train.render.resolution);
    const ExperimentConfig back = experiment_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
  }
  CHECK(experiment_preset("paper").train.epochs == 100);
  CHECK_THROWS_AS(experiment_preset("huge"), std::invalid_argument);
  CHECK(parse_dataset(dataset_name(DatasetKind::birds)) == DatasetKind::birds);

  ExperimentConfig c = experiment_preset("smoke");
  c.n_targets = 3;
  c.normalize();
  CHECK(c.train.shape.n_targets == 3);
  CHECK(c.train.shape.n_distractors == 3);
}

TEST_CASE("a smoke run writes a complete run directory") {
  const RunArtifact& art = smoke_run();
  CHECK_FALSE(art.reused);
  CHECK(run_completed(art.dir));
  for (const char* f : {"config.json", "dataset.jsonl", "report.json", "messages/test.jsonl", "logs/train_log.json",
                        "checkpoints/best.ckpt", "checkpoints/final.ckpt", "plots/prefix_tree.tsv",
                        "plots/concept_entropy.tsv", "plots/rho_curve.tsv"})
    CHECK_MESSAGE(fs::exists(art.dir / f), f);
  CHECK(art.log.epochs.size() == 2);
  for (const auto& e : art.log.epochs) CHECK(e.extra.contains("rho_edit"));

  const auto& r = art.report;
  CHECK((r.accuracy >= 0.0 && r.accuracy <= 1.0));
  CHECK(r.entropy >= 0.0);
  CHECK((r.ami >= -1.0 && r.ami <= 1.0));
  CHECK(art.corpus.size() == art.config.data.n_test);
  const auto j = r.to_json();
  for (const char* key : {"accuracy", "accuracy_seen", "accuracy_unseen", "entropy_bits", "ami", "rho_edit"})
    CHECK_MESSAGE(j.contains(key), key);
  for (const auto& p : art.plots) CHECK(fs::exists(p));
}

TEST_CASE("the same seed reproduces the report and messages exactly") {
  const RunArtifact& a = smoke_run();
  const RunArtifact b = run_experiment(smoke(scratch("b")));
  CHECK(slurp(a.dir / "report.json") == slurp(b.dir / "report.json"));
  CHECK(slurp(a.dir / "messages/test.jsonl") == slurp(b.dir / "messages/test.jsonl"));
  CHECK(slurp(a.dir / "dataset.jsonl") == slurp(b.dir / "dataset.jsonl"));
}

TEST_CASE("reanalysis from stored messages equals the stored report") {
  const RunArtifact& a = smoke_run();
  CHECK(reanalyze(a.dir).to_json() == a.report.to_json());
  std::ifstream in(a.dir / "report.json");
  CHECK(nlohmann::json::parse(in) == a.report.to_json());
  CHECK(load_dataset(a.dir).test.size() == a.config.data.n_test);
  CHECK(to_json(load_config(a.dir)) == to_json(a.config));
}

TEST_CASE("completed runs are reused only for an identical config") {
  const RunArtifact& a = smoke_run();
  ExperimentConfig c = a.config;
  const RunArtifact again = run_experiment(c, {true});
  CHECK(again.reused);
  CHECK(again.report.to_json() == a.report.to_json());
  CHECK(again.log.best_val_acc == a.log.best_val_acc);

  c.output_dir = a.dir.parent_path().parent_path() / "c";
  fs::remove_all(c.output_dir);
  fs::create_directories(c.output_dir);
  fs::copy(a.dir, c.output_dir / c.name, fs::copy_options::recursive);
  c.train.epochs = 1;
  const RunArtifact fresh = run_experiment(c, {true});
  CHECK_FALSE(fresh.reused);
  CHECK(fresh.log.epochs.size() == 1);
}

TEST_CASE("a one-cell sweep has one row and no correlation") {
  ExperimentConfig base = smoke(scratch("sweep"));
  base.name = "sizes";
  base.train.epochs = 1;
  const SweepResult s = sweep_set_size(base, {3}, 1);
  REQUIRE(s.rows.size() == 1);
  CHECK(s.rows[0].cell == "3");
  CHECK(s.rows[0].x == 3.0);
  CHECK(s.rows[0].dir == base.output_dir / "sizes" / "n3_rep0");
  CHECK_FALSE(s.spearman.has_value());
  CHECK(load_config(s.rows[0].dir).train.shape.n_targets == 3);
  CHECK(s.to_json()["rows"].size() == 1);
  const auto files = emit_sweep_plot(s, base.output_dir / "plot");
  for (const auto& f : files) CHECK(fs::exists(f));
  CHECK_THROWS_AS(sweep_set_size(base, {0}, 1), std::invalid_argument);

  // Repetition seeds are shared across cells and differ across repetitions.
  CHECK(repetition_config(base, 1).train.seed == repetition_config(base, 1).train.seed);
  CHECK(repetition_config(base, 0).train.seed != repetition_config(base, 1).train.seed);
  CHECK(repetition_config(base, 0).data.seed != repetition_config(base, 1).data.seed);
}

TEST_CASE("plot tables agree with the stored messages and re-emit identically") {
  const RunArtifact& a = smoke_run();
  const auto corpus = load_messages(a.dir);
  std::map<std::string, metrics::MessageCorpus> by;
  for (const auto& r : corpus) by[r.target_concept.formula()].push_back(r);

  std::ifstream ent(a.dir / "plots/concept_entropy.tsv");
  std::string line;
  std::getline(ent, line);
  std::size_t rows = 0;
  while (std::getline(ent, line)) {
    std::istringstream ls(line);
    std::string formula, games, h;
    std::getline(ls, formula, '\t');
    std::getline(ls, games, '\t');
    std::getline(ls, h, '\t');
    REQUIRE(by.count(formula) == 1);
    CHECK(std::stoul(games) == by[formula].size());
    CHECK(std::stod(h) == doctest::Approx(metrics::conditional_entropy(by[formula])).epsilon(1e-5));
    ++rows;
  }
  CHECK(rows == by.size());

  std::map<fs::path, std::string> before;
  for (const auto& p : a.plots) before[p] = slurp(p);
  const auto again = emit_plots(a.dir, a.config.max_sunbursts);
  CHECK(again.size() == a.plots.size());
  for (const auto& p : again) CHECK(slurp(p) == before[p]);
}

TEST_CASE("prefix tree counts and single-message sunburst rings") {
  const std::vector<agents::Message> msgs{{1, 2}, {1, 3}, {1, 2}, {4}};
  const auto rows = plot::prefix_tree(msgs);
  std::map<std::pair<std::vector<int>, int>, std::size_t> got;
  for (const auto& r : rows) got[{r.prefix, r.token}] = r.count;
  CHECK(got.size() == 4);
  CHECK(got[{{}, 1}] == 3);
  CHECK(got[{{}, 4}] == 1);
  CHECK(got[{{1}, 2}] == 2);
  CHECK(got[{{1}, 3}] == 1);

  const std::vector<agents::Message> one{{5, 0, 7}};
  const int size = 256;
  const plot::Canvas c = plot::sunburst(one, size);
  const double inner = size * 0.08, ring = (size / 2.0 - inner - 2) / 3.0;
  for (int d = 0; d < 3; ++d) {
    const double r = inner + (d + 0.5) * ring;
    for (int k = 0; k < 16; ++k) {
      const double a = 2 * std::numbers::pi * k / 16;
      const int x = static_cast<int>(size / 2.0 + r * std::sin(a));
      const int y = static_cast<int>(size / 2.0 - r * std::cos(a));
      CHECK(c.get(x, y) == plot::token_color(one[0][static_cast<std::size_t>(d)]));
    }
  }
  CHECK(c.get(size / 2, size / 2) == plot::Color{255, 255, 255});
  CHECK(c.get(0, 0) == plot::Color{255, 255, 255});

  // Two equal messages split the first ring in half.
  const std::vector<agents::Message> two{{1}, {2}};
  const plot::Canvas h = plot::sunburst(two, size);
  const int mid = static_cast<int>(size / 2.0 + inner + 0.5 * (size / 2.0 - inner - 2));
  CHECK(h.get(mid, size / 2) == plot::token_color(1));
  CHECK(h.get(size - 1 - mid, size / 2) == plot::token_color(2));
}

TEST_CASE("birds runs report the missing encoder") {
  ExperimentConfig c = smoke(scratch("birds"));
  c.dataset = DatasetKind::birds;
  c.normalize();
  try {
    run_experiment(c);
    FAIL("expected an error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "config");
    CHECK(std::string(e.what()).find("encoder") != std::string::npos);
  }
  CHECK_THROWS_AS(ideal_language_listener(c), UnsupportedFeature);
}

TEST_CASE("invalid configs fail in the config stage") {
  ExperimentConfig c = smoke(scratch("bad"));
  c.n_targets = 0;
  try {
    run_experiment(c);
    FAIL("expected an error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "config");
  }
}
