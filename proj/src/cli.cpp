#include "polyvae/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "polyvae/checkpoint.hpp"
#include "polyvae/composer.hpp"
#include "polyvae/corpus.hpp"
#include "polyvae/errors.hpp"
#include "polyvae/eval.hpp"
#include "polyvae/midi.hpp"
#include "polyvae/service.hpp"
#include "polyvae/synthetic.hpp"
#include "polyvae/trainer.hpp"

namespace polyvae {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunConfig {
  std::string config;
  std::string corpus;
  std::string out;
  std::string checkpoint;
  std::string seed_midi;
  std::string static_dir;
  std::string host = "127.0.0.1";
  std::uint64_t seed = 0;
  std::vector<int> window_sec;
  std::vector<std::size_t> hidden;
  std::vector<std::size_t> latent;
  double beta = 0.5;
  std::optional<double> threshold;
  std::vector<double> threshold_grid;
  std::size_t steps = 2000;
  std::size_t batch = 64;
  std::size_t jobs = 1;
  int seconds = 10;
  int port = 8080;
  bool deterministic = true;
  int pitch_lo = 21;
  int pitch_hi = 108;
  double learning_rate = 1e-3;
  double test_fraction = 0.2;
  std::size_t early_stop = 0;
  int songs = 2;
  int period = 8;
  int voices = 3;
  bool dry_run = false;

  PitchBand band() const { return {pitch_lo, pitch_hi}; }
  std::vector<double> grid() const { return threshold_grid.empty() ? default_threshold_grid() : threshold_grid; }
};

struct GridCell {
  int window_sec;
  std::size_t hidden;
  std::size_t latent;
};

class Log {
 public:
  explicit Log(std::ostream& err) : err_(err) {}
  void info(const std::string& msg) { line("info: " + msg); }
  void warn(const std::string& msg) { line("warning: " + msg); }

 private:
  void line(const std::string& msg) {
    std::lock_guard lock(mutex_);
    err_ << msg << '\n' << std::flush;
  }
  std::ostream& err_;
  std::mutex mutex_;
};

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

void write_snapshot(const fs::path& path, const CLI::App& sub) {
  auto f = open_out(path);
  f << "# polyvae " << sub.get_name() << '\n';
  // config_to_str skips nothing, so drop the --config entry itself.
  std::istringstream lines(sub.config_to_str(true, false));
  for (std::string line; std::getline(lines, line);) {
    // Unset optional values would not parse back.
    if (line.size() >= 3 && line.compare(line.size() - 3, 3, "=\"\"") == 0) continue;
    if (line.rfind("config=", 0) == 0) continue;
    f << line << '\n';
  }
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

fs::path require_path(const std::string& value, const char* flag) {
  if (value.empty()) throw CLI::RequiredError(flag);
  return value;
}

TrainingConfig training_config(const RunConfig& rc, const GridCell& cell) {
  TrainingConfig c;
  c.window = WindowSpec::for_seconds(cell.window_sec);
  c.dims = dims_for(rc.band(), c.window, cell.hidden, cell.latent);
  c.beta = rc.beta;
  c.learning_rate = rc.learning_rate;
  c.batch_size = rc.batch;
  c.max_steps = rc.steps;
  c.seed = rc.seed;
  c.test_fraction = rc.test_fraction;
  c.early_stop_patience = rc.early_stop;
  c.deterministic = rc.deterministic;
  c.threads = rc.jobs;
  return c;
}

GridCell single_cell(const RunConfig& rc) {
  return {rc.window_sec.empty() ? 9 : rc.window_sec.front(), rc.hidden.empty() ? 750 : rc.hidden.front(),
          rc.latent.empty() ? 200 : rc.latent.front()};
}

std::vector<GridCell> grid_cells(const RunConfig& rc) {
  std::vector<int> ts = rc.window_sec;
  if (ts.empty()) {
    for (int t = 1; t <= 10; ++t) ts.push_back(t);
  }
  const std::vector<std::size_t> hs = rc.hidden.empty() ? std::vector<std::size_t>{500, 750} : rc.hidden;
  const std::vector<std::size_t> zs = rc.latent.empty() ? std::vector<std::size_t>{100, 200} : rc.latent;
  std::vector<GridCell> cells;
  for (int t : ts)
    for (auto h : hs)
      for (auto z : zs) cells.push_back({t, h, z});
  return cells;
}

struct Trained {
  Model model;
  SplitDataset split;
  TrainingHistory history;
  SweepResult sweep;
  double threshold = 0.5;
};

Trained train_cell(const RunConfig& rc, const std::vector<Song>& songs, const GridCell& cell, Log* log) {
  const auto config = training_config(rc, cell);
  Trained t;
  t.split = split_by_song(songs, config.window, config.test_fraction, config.seed);
  if (log) {
    for (const auto& id : t.split.skipped_songs) log->warn("song " + id + " is too short for a " +
                                                           std::to_string(cell.window_sec) + " s window; skipped");
    log->info("training on " + std::to_string(t.split.train_pairs.size()) + " pairs from " +
              std::to_string(t.split.train_songs.size()) + " songs; " + std::to_string(t.split.test_pairs.size()) +
              " test pairs from " + std::to_string(t.split.test_songs.size()) + " songs");
  }
  const std::size_t every = std::max<std::size_t>(1, config.max_steps / 10);
  ProgressFn progress;
  if (log) {
    progress = [&](const StepRecord& r) {
      if (r.step % every == 0 || r.step + 1 == config.max_steps) {
        log->info("step " + std::to_string(r.step) + " total " + fmt(r.total) + " recon " + fmt(r.recon_bce) +
                  " kl " + fmt(r.kl));
      }
    };
  }
  auto result = train(config, t.split, progress);
  t.model = {rc.band(), config.window, std::move(result.params)};
  t.history = std::move(result.history);
  t.sweep = sweep(t.model, t.split.train_pairs, t.split.test_pairs, rc.grid());
  t.threshold = rc.threshold.value_or(t.sweep.best_threshold);
  return t;
}

void add_model_options(CLI::App* sub, RunConfig& rc) {
  sub->add_option("--window-sec", rc.window_sec, "window length T in seconds")->delimiter(',');
  sub->add_option("--hidden", rc.hidden, "hidden units")->delimiter(',');
  sub->add_option("--latent", rc.latent, "latent size")->delimiter(',');
  sub->add_option("--beta", rc.beta, "KL weight")->capture_default_str();
  sub->add_option("--steps", rc.steps, "Adam steps")->capture_default_str();
  sub->add_option("--batch", rc.batch, "minibatch size")->capture_default_str();
  sub->add_option("--learning-rate", rc.learning_rate, "Adam learning rate")->capture_default_str();
  sub->add_option("--test-fraction", rc.test_fraction, "share of columns held out by song")->capture_default_str();
  sub->add_option("--early-stop", rc.early_stop, "stop after N test evaluations without improvement (0 = off)")
      ->capture_default_str();
  sub->add_option("--threshold-grid", rc.threshold_grid, "thresholds to sweep")->delimiter(',');
  sub->add_option("--threshold", rc.threshold, "fixed decision threshold");
}

// Reads `key = value` lines. '#' starts a comment; quotes and list brackets
// around values are dropped.
std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  auto trim = [](std::string v) {
    const auto a = v.find_first_not_of(" \t\r");
    const auto b = v.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : v.substr(a, b - a + 1);
  };
  std::vector<std::pair<std::string, std::string>> out;
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty() || line.front() == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && ((value.front() == '"' && value.back() == '"') || (value.front() == '[' && value.back() == ']'))) {
      value = value.substr(1, value.size() - 2);
    }
    value.erase(std::remove(value.begin(), value.end(), ' '), value.end());
    std::replace(key.begin(), key.end(), '_', '-');
    out.emplace_back(key, value);
  }
  return out;
}

// Rewrites argv so that config file entries come first, as if typed on the
// command line, skipping keys the user passed explicitly.
std::vector<std::string> expand_config(const CLI::App& app, int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  if (args.size() < 2) return args;
  const CLI::App* sub = nullptr;
  try {
    sub = app.get_subcommand(args[1]);
  } catch (const CLI::OptionNotFound&) {
    return args;
  }
  std::optional<std::string> config;
  std::vector<std::string> rest;
  for (std::size_t i = 2; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (!config) return args;
  auto given = [&](const std::string& flag) {
    return std::any_of(rest.begin(), rest.end(),
                       [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
  };
  std::vector<std::string> out = {args[0], args[1]};
  for (const auto& [key, value] : read_config_file(*config)) {
    const std::string flag = "--" + key;
    if (value.empty() || sub->get_option_no_throw(flag) == nullptr || given(flag)) continue;
    out.push_back(flag + "=" + value);
  }
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

void add_common(CLI::App* sub, RunConfig& rc) {
  sub->add_option("--config", rc.config, "key = value file; flags given on the command line win");
  sub->add_option("--seed", rc.seed, "random seed")->capture_default_str();
  sub->add_option("--pitch-lo", rc.pitch_lo, "lowest modelled MIDI pitch")->capture_default_str();
  sub->add_option("--pitch-hi", rc.pitch_hi, "highest modelled MIDI pitch")->capture_default_str();
  sub->add_option("--jobs", rc.jobs, "worker threads")->capture_default_str();
  sub->add_option("--deterministic", rc.deterministic, "bit-reproducible training")->capture_default_str();
}

// ---- commands ----

int cmd_ingest(const RunConfig& rc, const CLI::App& sub, std::ostream& out, Log& log) {
  const auto corpus = require_path(rc.corpus, "--corpus");
  const auto dest = require_path(rc.out, "--out");
  const auto result = ingest_directory(corpus, rc.band());
  for (const auto& f : result.failures) log.warn("skipped " + f.source.string() + ": " + f.reason);
  if (result.songs.empty()) {
    throw DataError("no MIDI file in " + corpus.string() + " could be ingested");
  }
  write_ingested(dest, result);
  write_snapshot(dest / "ingest.cfg", sub);
  out << "ingested " << result.songs.size() << " songs into " << dest.string() << '\n';
  return 0;
}

int cmd_synth(const RunConfig& rc, const CLI::App& sub, std::ostream& out, Log&) {
  const auto dest = require_path(rc.out, "--out");
  fs::create_directories(dest);
  SyntheticSpec spec;
  spec.band = rc.band();
  spec.seconds = rc.seconds;
  spec.period_cols = rc.period;
  spec.voices = rc.voices;
  spec.seed = rc.seed;
  for (int i = 0; i < rc.songs; ++i) {
    write_file_bytes(dest / (synthetic_song_id(i) + ".mid"), write_midi(synthetic_notes(spec, i)));
  }
  write_snapshot(dest / "synth.cfg", sub);
  out << "wrote " << rc.songs << " synthetic songs to " << dest.string() << '\n';
  return 0;
}

int cmd_train(const RunConfig& rc, const CLI::App& sub, std::ostream& out, Log& log) {
  const auto corpus = require_path(rc.corpus, "--corpus");
  const auto dest = require_path(rc.out, "--out");
  const auto songs = load_corpus(corpus, rc.band());
  const auto cell = single_cell(rc);
  const auto t = train_cell(rc, songs, cell, &log);

  json meta = {{"train_songs", t.split.train_songs},
               {"test_songs", t.split.test_songs},
               {"seed", rc.seed},
               {"steps", t.history.steps.size()},
               {"learning_rate", rc.learning_rate},
               {"batch", rc.batch},
               {"test_fraction", rc.test_fraction}};
  fs::create_directories(dest);
  save_checkpoint(dest / "model.vaec", make_checkpoint(t.model, rc.beta, t.threshold, meta));
  {
    auto f = open_out(dest / "history.csv");
    write_history_csv(f, t.history);
  }
  {
    auto f = open_out(dest / "train_sweep.csv");
    write_sweep_csv(f, t.sweep);
  }
  write_snapshot(dest / "train.cfg", sub);
  const auto& best = t.sweep.points[t.sweep.best_index];
  out << "threshold " << fmt(t.threshold) << " train F1 " << fmt(best.train.f1);
  if (!t.split.test_pairs.empty()) out << " test F1 " << fmt(best.test.f1);
  out << "\nwrote " << (dest / "model.vaec").string() << '\n';
  return 0;
}

struct EvalData {
  Checkpoint ckpt;
  SplitDataset split;
  Predictions train_probs;
  Predictions test_probs;
};

EvalData load_eval(const RunConfig& rc) {
  EvalData d;
  d.ckpt = load_checkpoint(require_path(rc.checkpoint, "--checkpoint"));
  const auto songs = load_corpus(require_path(rc.corpus, "--corpus"), d.ckpt.model.band);
  if (d.ckpt.metadata.contains("test_songs")) {
    d.split = split_by_ids(songs, d.ckpt.model.window, d.ckpt.metadata["test_songs"].get<std::vector<std::string>>());
  } else {
    d.split = split_by_song(songs, d.ckpt.model.window, rc.test_fraction, rc.seed);
  }
  if (d.split.train_pairs.empty()) {
    throw DataError("no training songs of the checkpoint's split were found in the corpus");
  }
  d.train_probs = infer(d.ckpt.model, d.split.train_pairs);
  d.test_probs = infer(d.ckpt.model, d.split.test_pairs);
  return d;
}

void sweep_plot(const fs::path& path, const SweepResult& s) {
  std::vector<Series> series;
  std::vector<double> xs;
  for (const auto& p : s.points) xs.push_back(p.threshold);
  auto add = [&](const std::string& name, auto get) {
    Series ser{name, xs, {}};
    for (const auto& p : s.points) ser.y.push_back(get(p));
    series.push_back(std::move(ser));
  };
  add("train SEN", [](const SweepPoint& p) { return p.train.sen; });
  add("train PPV", [](const SweepPoint& p) { return p.train.ppv; });
  add("train F1", [](const SweepPoint& p) { return p.train.f1; });
  if (!s.points.empty() && s.points[0].test.counts.total() > 0) {
    add("test SEN", [](const SweepPoint& p) { return p.test.sen; });
    add("test PPV", [](const SweepPoint& p) { return p.test.ppv; });
    add("test F1", [](const SweepPoint& p) { return p.test.f1; });
  }
  auto f = open_out(path);
  write_line_chart_svg(f, "Metrics by threshold", "threshold", "score", series);
}

int cmd_sweep(const RunConfig& rc, const CLI::App& sub, std::ostream& out, Log&) {
  const auto dest = require_path(rc.out, "--out");
  const auto d = load_eval(rc);
  const auto s = sweep(d.train_probs, d.split.train_pairs, d.test_probs, d.split.test_pairs, rc.grid());
  {
    auto f = open_out(dest / "sweep.csv");
    write_sweep_csv(f, s);
  }
  sweep_plot(dest / "sweep.svg", s);
  write_snapshot(dest / "sweep.cfg", sub);
  out << "best threshold " << fmt(s.best_threshold) << " train F1 " << fmt(s.points[s.best_index].train.f1) << '\n';
  return 0;
}

int cmd_eval(const RunConfig& rc, const CLI::App& sub, std::ostream& out, Log&) {
  const auto dest = require_path(rc.out, "--out");
  const auto d = load_eval(rc);
  const auto& model = d.ckpt.model;
  const double theta = rc.threshold.value_or(d.ckpt.threshold.value_or(0.5));
  const bool has_test = !d.split.test_pairs.empty();

  const auto s = sweep(d.train_probs, d.split.train_pairs, d.test_probs, d.split.test_pairs, rc.grid());
  {
    auto f = open_out(dest / "sweep.csv");
    write_sweep_csv(f, s);
  }
  sweep_plot(dest / "thresholds.svg", s);

  struct Side {
    const char* name;
    const Predictions* probs;
    const std::vector<WindowPair>* pairs;
  };
  std::vector<Side> sides = {{"train", &d.train_probs, &d.split.train_pairs}};
  if (has_test) sides.push_back({"test", &d.test_probs, &d.split.test_pairs});

  auto report = open_out(dest / "metrics.csv");
  write_report_header(report);
  std::vector<Series> per_step_series;
  for (const auto& side : sides) {
    const auto split = split_metrics(*side.probs, *side.pairs, model.band, model.window, theta);
    write_report_row(report, side.name, "full", split.full);
    write_report_row(report, side.name, "reconstruction", split.reconstruction);
    write_report_row(report, side.name, "prediction", split.prediction);
    const auto steps = per_step_metrics(*side.probs, *side.pairs, model.band, model.window, theta);
    Series f1{std::string(side.name) + " F1", {}, {}};
    for (std::size_t k = 0; k < steps.size(); ++k) {
      write_report_row(report, side.name, "step_" + std::to_string(k + 1), steps[k]);
      f1.x.push_back(static_cast<double>((k + 1) * static_cast<std::size_t>(model.window.grid_ms)));
      f1.y.push_back(steps[k].f1);
    }
    per_step_series.push_back(std::move(f1));
    out << side.name << " F1 " << fmt(split.full.f1) << " reconstruction " << fmt(split.reconstruction.f1)
        << " prediction " << fmt(split.prediction.f1) << '\n';
  }

  // Reconstruction and prediction F1 across the threshold grid.
  std::vector<Series> segment_series;
  for (const auto& side : sides) {
    Series recon{std::string(side.name) + " reconstruction", {}, {}};
    Series pred{std::string(side.name) + " prediction", {}, {}};
    for (double t : normalize_grid(rc.grid())) {
      const auto split = split_metrics(*side.probs, *side.pairs, model.band, model.window, t);
      recon.x.push_back(t);
      recon.y.push_back(split.reconstruction.f1);
      pred.x.push_back(t);
      pred.y.push_back(split.prediction.f1);
    }
    segment_series.push_back(std::move(recon));
    segment_series.push_back(std::move(pred));
  }
  {
    auto f = open_out(dest / "segments.svg");
    write_line_chart_svg(f, "Reconstruction vs prediction F1", "threshold", "F1", segment_series);
  }
  {
    auto f = open_out(dest / "per_step.svg");
    write_line_chart_svg(f, "Prediction F1 by position", "ms after window end", "F1", per_step_series);
  }
  write_snapshot(dest / "eval.cfg", sub);
  out << "threshold " << fmt(theta) << " best sweep threshold " << fmt(s.best_threshold) << '\n';
  return 0;
}

BinaryVector seed_window_for(const RunConfig& rc, const Model& model, double theta) {
  if (rc.seed_midi.empty()) {
    return random_seed_window(model, rc.seed, theta);
  }
  const auto q = notes_to_roll(parse_midi(read_file_bytes(rc.seed_midi)).notes, model.band);
  const std::size_t w = model.window.width_cols();
  PianoRoll seed = q.roll.columns(0, std::min(w, q.roll.n_cols()));
  if (seed.n_cols() < w) seed.append(PianoRoll(model.band, w - seed.n_cols()));
  return flatten_columns(seed, 0, w);
}

int cmd_generate(const RunConfig& rc, const CLI::App& sub, std::ostream& out, Log&) {
  const fs::path dest = require_path(rc.out, "--out");
  const auto ckpt = load_checkpoint(require_path(rc.checkpoint, "--checkpoint"));
  const double theta = rc.threshold.value_or(ckpt.threshold.value_or(0.5));
  const auto seed = seed_window_for(rc, ckpt.model, theta);
  const auto roll = generate(ckpt.model, seed, rc.seconds, theta);
  if (dest.has_parent_path()) fs::create_directories(dest.parent_path());
  write_file_bytes(dest, write_midi(roll_to_notes(roll)));
  auto roll_path = dest;
  roll_path.replace_extension(".roll");
  {
    auto f = open_out(roll_path);
    write_roll_text(f, roll);
  }
  auto cfg_path = dest;
  cfg_path.replace_extension(".cfg");
  write_snapshot(cfg_path, sub);
  out << "wrote " << dest.string() << " (" << roll.n_cols() << " columns, " << roll.n_cols() - ckpt.model.window.width_cols()
      << " generated)\n";
  return 0;
}

int cmd_grid(const RunConfig& rc, const CLI::App& sub, std::ostream& out, Log& log) {
  const auto cells = grid_cells(rc);
  const auto dest = require_path(rc.out, "--out");
  fs::create_directories(dest);
  write_snapshot(dest / "grid.cfg", sub);
  const std::string header =
      "window_sec,hidden,latent,beta,threshold,train_f1,train_sen,train_ppv,train_acc,test_f1,test_sen,test_ppv,"
      "test_acc,status";
  if (rc.dry_run) {
    auto f = open_out(dest / "grid.csv");
    f << header << '\n';
    for (const auto& c : cells) {
      f << c.window_sec << ',' << c.hidden << ',' << c.latent << ',' << rc.beta << ",,,,,,,,,,planned\n";
    }
    out << cells.size() << " configurations planned\n";
    return 0;
  }
  const auto songs = load_corpus(require_path(rc.corpus, "--corpus"), rc.band());
  std::vector<std::string> rows(cells.size());
  std::vector<double> train_f1(cells.size(), -1);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    RunConfig cell_rc = rc;
    cell_rc.jobs = 1;
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const auto& c = cells[i];
      std::ostringstream row;
      row << c.window_sec << ',' << c.hidden << ',' << c.latent << ',' << rc.beta << ',';
      try {
        const auto t = train_cell(cell_rc, songs, c, nullptr);
        const auto& p = t.sweep.points[t.sweep.best_index];
        row << t.sweep.best_threshold << ',' << p.train.f1 << ',' << p.train.sen << ',' << p.train.ppv << ','
            << p.train.acc << ',';
        if (p.test.counts.total() > 0) {
          row << p.test.f1 << ',' << p.test.sen << ',' << p.test.ppv << ',' << p.test.acc << ",ok";
        } else {
          row << ",,,,ok";
        }
        train_f1[i] = p.train.f1;
        log.info("T=" + std::to_string(c.window_sec) + " H=" + std::to_string(c.hidden) + " Z=" +
                 std::to_string(c.latent) + " train F1 " + fmt(p.train.f1));
      } catch (const std::exception& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), ',', ';');
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        row << ",,,,,,,,,error: " << msg;
        log.warn("T=" + std::to_string(c.window_sec) + " H=" + std::to_string(c.hidden) + " Z=" +
                 std::to_string(c.latent) + " failed: " + e.what());
      }
      rows[i] = row.str();
    }
  };
  {
    std::vector<std::jthread> pool;
    const std::size_t n = std::max<std::size_t>(1, std::min(rc.jobs, cells.size()));
    for (std::size_t k = 0; k < n; ++k) pool.emplace_back(work);
  }
  auto f = open_out(dest / "grid.csv");
  f << header << '\n';
  for (const auto& r : rows) f << r << '\n';

  const auto best = std::max_element(train_f1.begin(), train_f1.end()) - train_f1.begin();
  if (train_f1[static_cast<std::size_t>(best)] < 0) {
    throw DataError("every grid configuration failed");
  }
  std::map<std::pair<std::size_t, std::size_t>, Series> by_size;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (train_f1[i] < 0) continue;
    auto& s = by_size[{cells[i].hidden, cells[i].latent}];
    s.name = "H=" + std::to_string(cells[i].hidden) + " Z=" + std::to_string(cells[i].latent);
    s.x.push_back(cells[i].window_sec);
    s.y.push_back(train_f1[i]);
  }
  std::vector<Series> series;
  for (auto& [k, s] : by_size) series.push_back(std::move(s));
  {
    auto svg = open_out(dest / "grid.svg");
    write_line_chart_svg(svg, "Best training F1 by window length", "T (s)", "train F1", series);
  }
  const auto& c = cells[static_cast<std::size_t>(best)];
  out << cells.size() << " configurations; best by training F1: T=" << c.window_sec << " H=" << c.hidden
      << " Z=" << c.latent << " F1 " << fmt(train_f1[static_cast<std::size_t>(best)]) << '\n';
  return 0;
}

std::atomic<Service*> g_service{nullptr};

extern "C" void handle_stop_signal(int) {
  if (auto* s = g_service.load()) s->stop();
}

int cmd_serve(const RunConfig& rc, const CLI::App&, std::ostream& out, Log& log) {
  auto ckpt = load_checkpoint(require_path(rc.checkpoint, "--checkpoint"));
  ServiceOptions options;
  if (!rc.static_dir.empty()) options.static_dir = fs::path(rc.static_dir);
  Service service(std::move(ckpt), options);
  const int port = service.bind(rc.host, rc.port);
  if (port < 0) throw IoError("cannot bind " + rc.host + ":" + std::to_string(rc.port));
  out << "listening on http://" << rc.host << ':' << port << '\n' << std::flush;
  g_service = &service;
  std::signal(SIGINT, handle_stop_signal);
  std::signal(SIGTERM, handle_stop_signal);
  service.run();
  g_service = nullptr;
  log.info("server stopped");
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig rc;
  Log log(err);
  CLI::App app{"Predictive beta-VAE for polyphonic piano rolls", "polyvae"};
  app.require_subcommand(1);

  using Command = int (*)(const RunConfig&, const CLI::App&, std::ostream&, Log&);
  std::vector<std::pair<CLI::App*, Command>> commands;
  auto add = [&](const char* name, const char* help, Command fn) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub, rc);
    commands.emplace_back(sub, fn);
    return sub;
  };

  auto* ingest = add("ingest", "quantize a directory of MIDI files", cmd_ingest);
  ingest->add_option("--corpus", rc.corpus, "directory of .mid files")->required();
  ingest->add_option("--out", rc.out, "output directory")->required();

  auto* synth = add("synth", "write a synthetic corpus of repeating patterns", cmd_synth);
  synth->add_option("--out", rc.out, "output directory")->required();
  synth->add_option("--songs", rc.songs, "number of songs")->capture_default_str();
  synth->add_option("--seconds", rc.seconds, "song length in seconds")->capture_default_str();
  synth->add_option("--period", rc.period, "motif length in columns")->capture_default_str();
  synth->add_option("--voices", rc.voices, "simultaneous voices")->capture_default_str();

  auto* train_cmd = add("train", "train one model", cmd_train);
  train_cmd->add_option("--corpus", rc.corpus, "ingested or MIDI directory")->required();
  train_cmd->add_option("--out", rc.out, "output directory")->required();
  add_model_options(train_cmd, rc);

  auto* grid = add("grid", "train every T x hidden x latent combination", cmd_grid);
  grid->add_option("--corpus", rc.corpus, "ingested or MIDI directory");
  grid->add_option("--out", rc.out, "output directory")->required();
  grid->add_flag("--dry-run", rc.dry_run, "list the configurations without training");
  add_model_options(grid, rc);

  for (auto [name, fn] : {std::pair<const char*, Command>{"eval", cmd_eval}, {"sweep", cmd_sweep}}) {
    auto* sub = add(name, name == std::string("eval") ? "report metrics and figure data for a checkpoint"
                                                      : "sweep decision thresholds for a checkpoint",
                    fn);
    sub->add_option("--checkpoint", rc.checkpoint, "model file")->required();
    sub->add_option("--corpus", rc.corpus, "ingested or MIDI directory")->required();
    sub->add_option("--out", rc.out, "output directory")->required();
    sub->add_option("--threshold-grid", rc.threshold_grid, "thresholds to sweep")->delimiter(',');
    sub->add_option("--threshold", rc.threshold, "decision threshold (default: the checkpoint's)");
    sub->add_option("--test-fraction", rc.test_fraction, "used when the checkpoint carries no split")
        ->capture_default_str();
  }

  auto* gen = add("generate", "continue a seed window and write an SMF file", cmd_generate);
  gen->add_option("--checkpoint", rc.checkpoint, "model file")->required();
  gen->add_option("--out", rc.out, "output .mid path")->required();
  gen->add_option("--seconds", rc.seconds, "seconds of new music")->capture_default_str();
  gen->add_option("--threshold", rc.threshold, "decision threshold (default: the checkpoint's)");
  gen->add_option("--seed-midi", rc.seed_midi, "seed from the first window of this MIDI file");

  auto* serve = add("serve", "serve the HTTP API for a checkpoint", cmd_serve);
  serve->add_option("--checkpoint", rc.checkpoint, "model file")->required();
  serve->add_option("--port", rc.port, "TCP port (0 picks one)")->capture_default_str();
  serve->add_option("--host", rc.host, "bind address")->capture_default_str();
  serve->add_option("--static", rc.static_dir, "directory served at /");

  try {
    auto args = expand_config(app, argc, argv);
    std::reverse(args.begin(), args.end());
    args.pop_back();
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 1;
  } catch (const DataError& e) {
    err << "usage error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (rc.pitch_lo < 0 || rc.pitch_hi > 127 || rc.pitch_lo > rc.pitch_hi) {
      throw DataError("pitch band must satisfy 0 <= lo <= hi <= 127");
    }
    for (const auto& [sub, fn] : commands) {
      if (sub->parsed()) return fn(rc, *sub, out, log);
    }
    return 1;
  } catch (const CLI::RequiredError& e) {
    err << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const NonFiniteLoss& e) {
    err << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace polyvae
