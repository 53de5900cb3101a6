#include "setcomm/harness.hpp"

#include "setcomm/acre.hpp"
#include "setcomm/log.hpp"
#include "setcomm/plot.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace setcomm::harness {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view dataset_name(DatasetKind d) { return d == DatasetKind::birds ? "birds" : "shapeworld"; }

DatasetKind parse_dataset(std::string_view name) {
  if (name == "shapeworld") return DatasetKind::shapeworld;
  if (name == "birds") return DatasetKind::birds;
  throw std::invalid_argument("unknown dataset '" + std::string(name) + "'");
}

void ExperimentConfig::normalize() {
  std::string preset = channel;
  if (preset == "default") preset = dataset == DatasetKind::birds ? "birds" : "shapeworld";
  agent.channel = agents::ChannelConfig::preset(preset);
  train.shape.n_targets = n_targets;
  train.shape.n_distractors = n_targets;
  train.shape.pool_size = data.pool_size;
  agent.vision.resolution = train.render.resolution;
  data.reference_concepts = train.game_type == world::GameType::ref;
}

void ExperimentConfig::validate() const {
  agent.validate();
  train.validate();
  if (n_targets < 1) throw std::invalid_argument("n_targets must be at least 1");
  if (n_targets > data.pool_size) throw std::invalid_argument("n_targets exceeds the pool size");
  if (agent.vision.resolution != train.render.resolution) throw std::invalid_argument("vision/render resolution mismatch");
  if (rho_every < 0 || rho_games < 0) throw std::invalid_argument("negative rho cadence");
}

ExperimentConfig experiment_preset(std::string_view name) {
  ExperimentConfig c;
  c.name = std::string(name);
  if (name == "paper") {
    c.train.lr = 1e-4f;
    c.train.batch_size = 128;
    c.train.epochs = 100;
    c.train.render.resolution = 64;
    c.agent.vision = {64, 4, 64, 3};
    c.agent.embedding_dim = 500;
    c.agent.hidden = 1024;
  } else if (name == "desk") {
    c.data.n_base = 5000;
    c.data.n_val = 400;
    c.data.n_test = 1000;
    c.train.lr = 1e-3f;
    c.train.batch_size = 32;
    c.train.epochs = 20;
    c.train.games_per_epoch = 1500;
    c.train.val_games = 200;
    c.train.render.resolution = 16;
    c.agent.vision = {16, 3, 16, 3};
    c.agent.embedding_dim = 64;
    c.agent.hidden = 128;
    c.repetitions = 3;
  } else if (name == "smoke") {
    c.data.n_base = 200;
    c.data.n_val = 40;
    c.data.n_test = 40;
    c.train.lr = 1e-3f;
    c.train.batch_size = 16;
    c.train.epochs = 2;
    c.train.render.resolution = 16;
    c.agent.vision = {16, 2, 8, 3};
    c.agent.embedding_dim = 16;
    c.agent.hidden = 32;
    c.rho_every = 1;
    c.repetitions = 1;
  } else {
    throw std::invalid_argument("unknown experiment preset '" + std::string(name) + "'");
  }
  c.normalize();
  return c;
}

namespace {

json data_to_json(const world::DatasetConfig& d) {
  return {{"seed", d.seed}, {"reference_concepts", d.reference_concepts}, {"n_base", d.n_base},
          {"seen_fraction", d.seen_fraction}, {"n_val", d.n_val}, {"n_test", d.n_test}, {"pool_size", d.pool_size}};
}

world::DatasetConfig data_from_json(const json& j) {
  world::DatasetConfig d;
  d.seed = j.at("seed");
  d.reference_concepts = j.at("reference_concepts");
  d.n_base = j.at("n_base");
  d.seen_fraction = j.at("seen_fraction");
  d.n_val = j.at("n_val");
  d.n_test = j.at("n_test");
  d.pool_size = j.at("pool_size");
  return d;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return json::parse(is);
}

template <typename F>
auto stage(const std::string& name, const fs::path& dir, F&& body) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    if (!dir.empty()) {
      fs::create_directories(dir / "logs");
      write_json(dir / "logs" / "error.json", {{"stage", name}, {"error", e.what()}});
    }
    throw StageError(name, e.what());
  }
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
  return s;
}

std::string slug(const std::string& s) {
  std::string out;
  for (char ch : s) out += std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_';
  return out;
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  return {{"name", c.name},
          {"dataset", dataset_name(c.dataset)},
          {"channel", c.channel},
          {"n_targets", c.n_targets},
          {"data", data_to_json(c.data)},
          {"agent", agents::to_json(c.agent)},
          {"train", training::to_json(c.train)},
          {"rho", {{"max_pairs", c.rho.max_pairs}, {"seed", c.rho.seed}}},
          {"rho_every", c.rho_every},
          {"rho_games", c.rho_games},
          {"max_sunbursts", c.max_sunbursts},
          {"repetitions", c.repetitions},
          {"output_dir", c.output_dir.string()}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig c;
  c.name = j.at("name");
  c.dataset = parse_dataset(j.at("dataset").get<std::string>());
  c.channel = j.at("channel");
  c.n_targets = j.at("n_targets");
  c.data = data_from_json(j.at("data"));
  c.agent = agents::agent_config_from_json(j.at("agent"));
  c.train = training::train_config_from_json(j.at("train"));
  c.rho.max_pairs = j.at("rho").at("max_pairs");
  c.rho.seed = j.at("rho").at("seed");
  c.rho_every = j.at("rho_every");
  c.rho_games = j.at("rho_games");
  c.max_sunbursts = j.at("max_sunbursts");
  c.repetitions = j.at("repetitions");
  c.output_dir = j.at("output_dir").get<std::string>();
  return c;
}

StageError::StageError(std::string stage, const std::string& what)
    : std::runtime_error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}

fs::path run_dir(const ExperimentConfig& config) { return config.output_dir / config.name; }

bool run_completed(const fs::path& dir) {
  return fs::exists(dir / "report.json") && fs::exists(dir / "config.json") &&
         fs::exists(dir / "checkpoints" / "final.ckpt") && fs::exists(dir / "messages" / "test.jsonl");
}

ExperimentConfig load_config(const fs::path& dir) { return experiment_config_from_json(read_json(dir / "config.json")); }

agents::AgentPair load_pair(const fs::path& dir) { return agents::AgentPair::load(dir / "checkpoints" / "final.ckpt").first; }

world::Dataset load_dataset(const fs::path& dir) { return world::load_manifest(dir / "dataset.jsonl"); }

metrics::MessageCorpus load_messages(const fs::path& dir) { return metrics::load_corpus(dir / "messages" / "test.jsonl"); }

metrics::SystematicityReport reanalyze(const fs::path& dir) {
  const auto config = load_config(dir);
  return metrics::make_report(load_messages(dir), config.rho);
}

namespace {

training::TrainLog log_from_json(const json& j) {
  training::TrainLog log;
  log.best_epoch = j.at("best_epoch");
  log.best_val_acc = j.at("best_val_acc");
  for (const auto& e : j.at("epochs")) {
    training::EpochLog el;
    el.epoch = e.at("epoch");
    el.train_loss = e.at("train_loss");
    el.val_acc = e.at("val_acc");
    el.val_acc_seen = e.at("val_acc_seen");
    el.val_acc_unseen = e.at("val_acc_unseen");
    el.seconds = e.at("seconds");
    el.best = e.at("best");
    if (e.contains("extra")) el.extra = e.at("extra");
    log.epochs.push_back(std::move(el));
  }
  return log;
}

RunArtifact load_artifact(const fs::path& dir) {
  RunArtifact a;
  a.dir = dir;
  a.config = load_config(dir);
  a.log = log_from_json(read_json(dir / "logs" / "train_log.json"));
  a.corpus = load_messages(dir);
  a.report = metrics::make_report(a.corpus, a.config.rho);
  for (const auto& entry : fs::directory_iterator(dir / "plots")) a.plots.push_back(entry.path());
  std::sort(a.plots.begin(), a.plots.end());
  a.reused = true;
  return a;
}

std::vector<world::GameRecord> probe_records(const world::Dataset& ds, int limit) {
  if (limit <= 0 || static_cast<std::size_t>(limit) >= ds.val.size()) return ds.val;
  // Same seen/unseen balance as the validation subset.
  std::vector<world::GameRecord> seen, unseen, out;
  for (const auto& r : ds.val) (world::is_seen(r.split) ? seen : unseen).push_back(r);
  const std::size_t want_unseen = unseen.empty() ? 0 : static_cast<std::size_t>(limit) / 2;
  const std::size_t want_seen = static_cast<std::size_t>(limit) - want_unseen;
  out.assign(seen.begin(), seen.begin() + static_cast<std::ptrdiff_t>(std::min(want_seen, seen.size())));
  out.insert(out.end(), unseen.begin(), unseen.begin() + static_cast<std::ptrdiff_t>(std::min(want_unseen, unseen.size())));
  return out;
}

}  // namespace

RunArtifact run_experiment(const ExperimentConfig& config_in, const RunOptions& options) {
  ExperimentConfig config = config_in;
  config.normalize();
  const fs::path dir = run_dir(config);
  if (options.reuse_completed && run_completed(dir)) {
    try {
      if (read_json(dir / "config.json") == to_json(config)) {
        log_info("reusing " + dir.string());
        return load_artifact(dir);
      }
    } catch (const std::exception&) {
      // fall through to a fresh run
    }
  }
  stage("config", dir, [&] {
    config.validate();
    if (config.dataset == DatasetKind::birds) {
      throw UnsupportedFeature("Birds runs need the pretrained image encoder, which this build does not ship");
    }
    return 0;
  });

  RunArtifact art;
  art.dir = dir;
  art.config = config;
  fs::create_directories(dir);
  for (const char* sub : {"checkpoints", "logs", "messages", "plots"}) fs::create_directories(dir / sub);
  write_json(dir / "config.json", to_json(config));
  fs::remove(dir / "report.json");
  fs::remove(dir / "logs" / "error.json");

  const world::Dataset ds = stage("dataset", dir, [&] {
    auto d = world::build_shapeworld_dataset(config.data);
    world::save_manifest(dir / "dataset.jsonl", d);
    return d;
  });

  agents::AgentPair pair(config.agent, config.train.seed);
  const training::EvalOptions eval{config.train.game_type, config.train.shape, config.train.render,
                                   config.train.eval_batch};
  art.log = stage("train", dir, [&] {
    training::TrainConfig tc = config.train;
    tc.checkpoint_dir = dir / "checkpoints";
    const auto probe = probe_records(ds, config.rho_games > 0 ? config.rho_games : config.train.val_games);
    training::EpochCallback cb;
    if (config.rho_every > 0) {
      cb = [&](int epoch, agents::AgentPair& p, training::EpochLog& e) {
        if (epoch % config.rho_every != 0 && epoch != 1) return;
        const auto ev = training::evaluate_pair(p, probe, eval);
        const auto corpus = metrics::corpus_from_evaluation(ev);
        const auto rho = metrics::topographic_rho(corpus, metrics::ConceptDistance::edit, config.rho);
        e.extra["rho_edit"] = rho ? json(*rho) : json(nullptr);
        e.extra["rho_games"] = probe.size();
      };
    }
    auto log = training::train_pair(pair, ds, tc, cb);
    write_json(dir / "logs" / "train_log.json", log.to_json());
    pair.save(dir / "checkpoints" / "final.ckpt", {{"run", config.name}});
    return log;
  });

  art.corpus = stage("evaluate", dir, [&] {
    const auto ev = training::evaluate_pair(pair, ds.test, eval);
    auto corpus = metrics::corpus_from_evaluation(ev);
    metrics::save_corpus(dir / "messages" / "test.jsonl", corpus);
    return corpus;
  });

  art.report = stage("report", dir, [&] {
    auto r = metrics::make_report(art.corpus, config.rho);
    write_json(dir / "report.json", r.to_json());
    return r;
  });

  art.plots = stage("plots", dir, [&] { return emit_plots(dir, config.max_sunbursts); });
  return art;
}

ExperimentConfig repetition_config(const ExperimentConfig& base, int repetition) {
  ExperimentConfig c = base;
  const auto r = static_cast<std::uint64_t>(repetition);
  c.data.seed = derive_seed(base.data.seed, {0xda7a, r});
  c.train.seed = derive_seed(base.train.seed, {0x7a1, r});
  return c;
}

namespace {

SweepRow row_from(const RunArtifact& a, const std::string& cell, double x, int rep) {
  SweepRow row;
  row.cell = cell;
  row.x = x;
  row.repetition = rep;
  row.seed = a.config.train.seed;
  row.accuracy = a.report.accuracy;
  row.entropy = a.report.entropy;
  row.ami = a.report.ami;
  row.rho_edit = a.report.rho_edit;
  row.dir = a.dir;
  return row;
}

void finish(SweepResult& s) {
  std::vector<double> xs, ys;
  for (const auto& r : s.rows) {
    if (!r.rho_edit) continue;
    xs.push_back(r.x);
    ys.push_back(*r.rho_edit);
  }
  if (xs.size() >= 2) s.spearman = metrics::spearman(xs, ys);
}

}  // namespace

SweepResult sweep_set_size(const ExperimentConfig& base, const std::vector<int>& sizes, int repetitions,
                           const RunOptions& options) {
  SweepResult s;
  for (int n : sizes) {
    if (n < 1) throw std::invalid_argument("set sizes must be at least 1");
  }
  for (int rep = 0; rep < repetitions; ++rep) {
    for (int n : sizes) {
      ExperimentConfig c = repetition_config(base, rep);
      c.n_targets = n;
      c.output_dir = base.output_dir / base.name;
      c.name = "n" + std::to_string(n) + "_rep" + std::to_string(rep);
      s.rows.push_back(row_from(run_experiment(c, options), std::to_string(n), n, rep));
    }
  }
  finish(s);
  return s;
}

SweepResult sweep_channel(const ExperimentConfig& base, const std::vector<std::string>& presets, int repetitions,
                          const RunOptions& options) {
  SweepResult s;
  for (int rep = 0; rep < repetitions; ++rep) {
    for (std::size_t i = 0; i < presets.size(); ++i) {
      ExperimentConfig c = repetition_config(base, rep);
      c.channel = presets[i];
      c.output_dir = base.output_dir / base.name;
      c.name = "channel_" + presets[i] + "_rep" + std::to_string(rep);
      c.normalize();
      // x is log2 of the number of distinct messages the channel can carry
      const double x = c.agent.channel.max_len * std::log2(static_cast<double>(c.agent.channel.vocab_size));
      s.rows.push_back(row_from(run_experiment(c, options), presets[i], x, rep));
    }
  }
  finish(s);
  return s;
}

std::string SweepResult::to_tsv() const {
  std::ostringstream os;
  os << "cell\tx\trepetition\tseed\taccuracy\tentropy_bits\tami\trho_edit\tdir\n";
  for (const auto& r : rows) {
    os << r.cell << '\t' << r.x << '\t' << r.repetition << '\t' << r.seed << '\t' << r.accuracy << '\t' << r.entropy
       << '\t' << r.ami << '\t' << (r.rho_edit ? std::to_string(*r.rho_edit) : "nan") << '\t' << r.dir.string() << '\n';
  }
  return os.str();
}

json SweepResult::to_json() const {
  json rs = json::array();
  for (const auto& r : rows) {
    rs.push_back({{"cell", r.cell}, {"x", r.x}, {"repetition", r.repetition}, {"seed", r.seed},
                  {"accuracy", r.accuracy}, {"entropy_bits", r.entropy}, {"ami", r.ami},
                  {"rho_edit", r.rho_edit ? json(*r.rho_edit) : json(nullptr)}, {"dir", r.dir.string()}});
  }
  return {{"rows", rs}, {"spearman_x_rho", spearman ? json(*spearman) : json(nullptr)}};
}

IdealListenerResult ideal_language_listener(const ExperimentConfig& config_in) {
  ExperimentConfig config = config_in;
  if (config.dataset == DatasetKind::birds) {
    throw UnsupportedFeature("ideal-language listener is defined for ShapeWorld only");
  }
  config.normalize();
  config.validate();
  agents::AgentConfig ac = config.agent;
  ac.channel = acre::formula_channel();
  nn::Rng rng(derive_seed(config.train.seed, {0x57}));
  agents::Student student(ac, rng);
  const auto ds = world::build_shapeworld_dataset(config.data);
  const training::MessageFn code = [](const Concept& c) { return acre::formula_message(c); };
  IdealListenerResult out;
  out.log = training::train_listener(student, ds, config.train, code);
  const training::EvalOptions eval{config.train.game_type, config.train.shape, config.train.render,
                                   config.train.eval_batch};
  const auto ev = training::evaluate_listener(student, ds.test, code, eval);
  out.accuracy = ev.acc;
  out.accuracy_seen = ev.acc_seen;
  out.accuracy_unseen = ev.acc_unseen;
  return out;
}

std::vector<fs::path> emit_plots(const fs::path& dir, int max_sunbursts) {
  const auto corpus = load_messages(dir);
  const fs::path out = dir / "plots";
  fs::create_directories(out);
  std::vector<fs::path> files;

  std::map<std::string, std::vector<metrics::CorpusRecord>> by_concept;
  for (const auto& r : corpus) by_concept[r.target_concept.formula()].push_back(r);

  {
    std::ofstream tree(out / "prefix_tree.tsv");
    tree << "concept\tprefix\ttoken\tcount\n";
    std::ofstream ent(out / "concept_entropy.tsv");
    ent << "concept\tgames\tentropy_bits\n";
    for (const auto& [formula, recs] : by_concept) {
      std::vector<agents::Message> msgs;
      for (const auto& r : recs) msgs.push_back(r.tokens);
      for (const auto& row : plot::prefix_tree(msgs)) {
        tree << formula << '\t' << join(row.prefix) << '\t' << row.token << '\t' << row.count << '\n';
      }
      ent << formula << '\t' << recs.size() << '\t' << metrics::conditional_entropy(recs) << '\n';
    }
    files.push_back(out / "prefix_tree.tsv");
    files.push_back(out / "concept_entropy.tsv");
  }

  std::vector<std::pair<std::size_t, std::string>> ranked;
  for (const auto& [formula, recs] : by_concept) ranked.emplace_back(recs.size(), formula);
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int k = 0; k < max_sunbursts && k < static_cast<int>(ranked.size()); ++k) {
    std::vector<agents::Message> msgs;
    for (const auto& r : by_concept[ranked[static_cast<std::size_t>(k)].second]) msgs.push_back(r.tokens);
    const fs::path p = out / ("sunburst_" + std::to_string(k) + "_" + slug(ranked[static_cast<std::size_t>(k)].second) + ".ppm");
    plot::sunburst(msgs).save_ppm(p);
    files.push_back(p);
  }

  if (fs::exists(dir / "logs" / "train_log.json")) {
    const auto log = read_json(dir / "logs" / "train_log.json");
    plot::Series s;
    s.color = {200, 30, 30};
    std::ofstream tsv(out / "rho_curve.tsv");
    tsv << "epoch\trho_edit\n";
    for (const auto& e : log.at("epochs")) {
      if (!e.contains("extra") || !e["extra"].contains("rho_edit") || e["extra"]["rho_edit"].is_null()) continue;
      s.x.push_back(e.at("epoch").get<double>());
      s.y.push_back(e["extra"]["rho_edit"].get<double>());
      tsv << e.at("epoch").get<int>() << '\t' << s.y.back() << '\n';
    }
    files.push_back(out / "rho_curve.tsv");
    if (!s.x.empty()) {
      plot::line_plot(std::span<const plot::Series>(&s, 1)).save_ppm(out / "rho_curve.ppm");
      files.push_back(out / "rho_curve.ppm");
    }
  }
  return files;
}

std::vector<fs::path> emit_sweep_plot(const SweepResult& sweep, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream(dir / "sweep.tsv") << sweep.to_tsv();
  write_json(dir / "sweep.json", sweep.to_json());
  std::vector<double> xs, ys;
  for (const auto& r : sweep.rows) {
    if (!r.rho_edit) continue;
    xs.push_back(r.x);
    ys.push_back(*r.rho_edit);
  }
  plot::scatter_plot(xs, ys).save_ppm(dir / "sweep.ppm");
  return {dir / "sweep.tsv", dir / "sweep.json", dir / "sweep.ppm"};
}

}  // namespace setcomm::harness
