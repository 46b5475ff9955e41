// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (0 when everything passes).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <string>

#include "finite_difference.hpp"
#include "midi_fixtures.hpp"
#include "polyvae/checkpoint.hpp"
#include "polyvae/composer.hpp"
#include "polyvae/errors.hpp"
#include "polyvae/eval.hpp"
#include "polyvae/midi.hpp"
#include "polyvae/synthetic.hpp"
#include "polyvae/trainer.hpp"

using namespace polyvae;

namespace {

// Tolerances and budgets.
constexpr double kGradRelTol = 1e-4;
constexpr double kFdStep = 1e-4;
constexpr double kGradBudgetSec = 60;
constexpr double kKlZeroTol = 1e-12;
constexpr double kKlSpotTol = 1e-5;
constexpr double kLossAnchorRelTol = 1e-9;
constexpr double kOverfitF1 = 0.95;
constexpr double kOverfitBudgetSec = 300;
constexpr std::size_t kOverfitSteps = 2000;
constexpr double kSegmentSlack = 0.02;
constexpr double kFullScaleBudgetSec = 10;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(const char* name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

TrainingConfig small_config(const SyntheticSpec& spec, std::size_t steps, std::uint64_t seed) {
  TrainingConfig c;
  c.window = WindowSpec::for_seconds(2);
  c.dims = dims_for(spec.band, c.window, 64, 16);
  c.beta = 0.5;
  c.batch_size = 32;
  c.max_steps = steps;
  c.seed = seed;
  return c;
}

std::vector<double> grid_with_endpoints() {
  std::vector<double> g = {0.0};
  for (int i = 1; i < 20; ++i) g.push_back(i / 20.0);
  g.push_back(1.0);
  return g;
}

// Shared between the overfit and threshold-shape criteria.
struct OverfitRun {
  Model model;
  SplitDataset data;
  double seconds = 0;
};

const OverfitRun& overfit_run() {
  static const OverfitRun run = [] {
    SyntheticSpec spec;
    spec.seconds = 20;
    const auto songs = synthetic_corpus(2, spec);
    const auto config = small_config(spec, kOverfitSteps, 1);
    OverfitRun r;
    r.data = split_by_ids(songs, config.window, {});
    const auto t0 = Clock::now();
    r.model = {spec.band, config.window, train(config, r.data).params};
    r.seconds = seconds_since(t0);
    return r;
  }();
  return run;
}

struct HeldOutRun {
  Model model;
  SplitDataset data;
};

const HeldOutRun& held_out_run() {
  static const HeldOutRun run = [] {
    SyntheticSpec spec;
    spec.seconds = 20;
    spec.seed = 7;
    const auto songs = synthetic_corpus(6, spec);
    const auto config = small_config(spec, kOverfitSteps, 2);
    HeldOutRun r;
    r.data = split_by_ids(songs, config.window, {songs.back().id});
    r.model = {spec.band, config.window, train(config, r.data).params};
    return r;
  }();
  return run;
}

Outcome gradient_check() {
  const auto t0 = Clock::now();
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto inst = oracle::random_instance({4, 8, 3}, 100 + seed, 0.5);
    const auto [loss, cache] = elbo_loss(inst.params, inst.x, inst.y, inst.beta, inst.noise);
    const auto analytic = backward(inst.params, inst.y, inst.beta, cache);
    const auto numeric = oracle::elbo_gradient_fd(inst.params, inst.x, inst.y, inst.beta, inst.noise, kFdStep);
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      worst = std::max(worst, oracle::relative_error(analytic.flat()[i], numeric[i]));
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= kGradRelTol && secs < kGradBudgetSec,
          "10 models (D=4,H=8,Z=3), worst relative error " + num(worst) + " (tol " + num(kGradRelTol) + "), " +
              num(secs) + " s"};
}

Outcome kl_properties() {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> normal(0.0, 1.5);
  std::size_t negative = 0, zero_when_nonzero_code = 0;
  for (int i = 0; i < 1000; ++i) {
    LatentCode c{{normal(rng), normal(rng), normal(rng)}, {normal(rng), normal(rng), normal(rng)}};
    const double kl = kl_divergence(c);
    if (kl < 0) ++negative;
    if (std::abs(kl) <= kKlZeroTol) ++zero_when_nonzero_code;
  }
  const double at_prior = kl_divergence({{0, 0, 0}, {0, 0, 0}});
  const double a = kl_divergence({{1.0}, {0.0}});
  const double b = kl_divergence({{0.0, 0.0}, {std::log(4.0), 0.0}});
  const bool ok = negative == 0 && zero_when_nonzero_code == 0 && std::abs(at_prior) <= kKlZeroTol &&
                  std::abs(a - 0.5) <= kKlSpotTol && std::abs(b - 0.80685) <= kKlSpotTol;
  return {ok, "1000 codes: " + std::to_string(negative) + " negative, " + std::to_string(zero_when_nonzero_code) +
                  " spurious zeros; prior " + num(at_prior) + "; spot values " + num(a) + ", " + num(b)};
}

Outcome loss_anchor() {
  double worst = 0;
  for (const ModelDims dims : {ModelDims{4, 8, 3}, ModelDims{160, 16, 4}, ModelDims{7920, 750, 200}}) {
    ModelParameters zero(dims);
    std::vector<double> x(dims.input, 1.0), y(dims.input, 0.0), noise(dims.latent, 0.0);
    for (std::size_t i = 0; i < dims.input; i += 3) y[i] = 1.0;
    const auto loss = elbo_loss(zero, x, y, 0.5, noise).first;
    const double expected = static_cast<double>(dims.input) * std::numbers::ln2;
    worst = std::max(worst, std::abs(loss.total - expected) / expected);
  }
  return {worst <= kLossAnchorRelTol, "D in {4, 160, 7920}: worst relative error " + num(worst)};
}

Outcome overfit() {
  const auto& r = overfit_run();
  const auto s = sweep(r.model, r.data.train_pairs, {}, default_threshold_grid());
  const double f1 = s.points[s.best_index].train.f1;
  return {f1 >= kOverfitF1 && r.seconds < kOverfitBudgetSec,
          "2 songs x 20 s, T=2 H=64 Z=16 beta=0.5, " + std::to_string(kOverfitSteps) + " steps in " + num(r.seconds) +
              " s; training F1 " + num(f1) + " at threshold " + num(s.best_threshold)};
}

Outcome segment_shape() {
  const auto& r = held_out_run();
  const auto s = sweep(r.model, r.data.train_pairs, r.data.test_pairs, default_threshold_grid());
  const double theta = s.best_threshold;
  const auto test = split_metrics(r.model, r.data.test_pairs, theta);
  const auto train = split_metrics(r.model, r.data.train_pairs, theta);
  const bool ok = test.reconstruction.f1 >= test.prediction.f1 - kSegmentSlack &&
                  train.reconstruction.f1 >= train.prediction.f1 - kSegmentSlack;
  return {ok, "6 songs, 1 held out, threshold " + num(theta) + ": held-out reconstruction F1 " +
                  num(test.reconstruction.f1) + " vs prediction " + num(test.prediction.f1) +
                  "; training " + num(train.reconstruction.f1) + " vs " + num(train.prediction.f1)};
}

bool monotone(const SweepResult& s, bool test_side) {
  for (std::size_t i = 1; i < s.points.size(); ++i) {
    const auto& a = test_side ? s.points[i - 1].test : s.points[i - 1].train;
    const auto& b = test_side ? s.points[i].test : s.points[i].train;
    if (b.sen > a.sen || b.counts.predicted_positive() > a.counts.predicted_positive()) return false;
  }
  return true;
}

Outcome threshold_shape() {
  const auto grid = grid_with_endpoints();
  const auto& h = held_out_run();
  const auto held = sweep(h.model, h.data.train_pairs, h.data.test_pairs, grid);
  const auto& o = overfit_run();
  const auto over = sweep(o.model, o.data.train_pairs, {}, grid);
  const bool mono = monotone(held, false) && monotone(held, true) && monotone(over, false);
  const bool interior = over.best_index > 0 && over.best_index + 1 < over.points.size();
  return {mono && interior, std::string("SEN and predicted positives non-increasing on train and test: ") +
                                (mono ? "yes" : "no") + "; overfit training F1 peaks at " +
                                num(over.best_threshold) + " (F1 " + num(over.points[over.best_index].train.f1) +
                                ", endpoints " + num(over.points.front().train.f1) + " / " +
                                num(over.points.back().train.f1) + ")"};
}

Outcome per_step_geometry() {
  std::string detail;
  bool ok = true;
  SyntheticSpec spec;
  spec.band = {21, 108};
  spec.seconds = 30;
  spec.voices = 4;
  const auto song = synthetic_corpus(1, spec).front();
  for (int seconds : {9, 1}) {
    Model m{spec.band, WindowSpec::for_seconds(seconds), {}};
    m.params = init_params(dims_for(m.band, m.window, 16, 4), 3);
    const auto pairs = make_windows(song.roll, m.window, song.id);
    const auto steps = per_step_metrics(m, pairs, 0.5);
    const auto split = split_metrics(m, pairs, 0.5);
    ConfusionCounts step_sum, seg_sum = split.reconstruction.counts;
    for (const auto& s : steps) step_sum += s.counts;
    seg_sum += split.prediction.counts;
    ConfusionCounts direct;
    for (const auto& p : pairs) direct += confusion(apply_threshold(predict(m, p.input), 0.5), p.target);
    const std::size_t want = seconds == 9 ? 10 : 5;
    ok = ok && steps.size() == want && step_sum == split.prediction.counts && seg_sum == direct;
    detail += "T=" + std::to_string(seconds) + ": " + std::to_string(steps.size()) + " reports; ";
  }
  return {ok, detail + "partitions exact: " + (ok ? "yes" : "no")};
}

Outcome metrics_oracle() {
  std::mt19937_64 rng(2024);
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + rng() % 200;
    std::vector<double> probs(d);
    BinaryVector target(d);
    for (auto& p : probs) p = static_cast<double>(rng() % 10000) / 10000.0;
    for (auto& t : target) t = rng() % 2;
    const double theta = static_cast<double>(rng() % 101) / 100.0;
    const auto fast = metrics(confusion(apply_threshold(probs, theta), target), theta);
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < d; ++i) {
      const bool p = probs[i] > theta, t = target[i] == 1;
      tp += p && t;
      fp += p && !t;
      tn += !p && !t;
      fn += !p && t;
    }
    const double acc = static_cast<double>(tp + tn) / static_cast<double>(d);
    const double sen = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 1.0;
    const double ppv = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 1.0;
    const double f1 = sen + ppv > 0 ? 2 * sen * ppv / (sen + ppv) : 0.0;
    if (!(fast.counts == ConfusionCounts{tp, fp, tn, fn}) || fast.acc != acc || fast.sen != sen ||
        fast.ppv != ppv || fast.f1 != f1) {
      ++mismatches;
    }
  }
  return {mismatches == 0, "100 random instances, " + std::to_string(mismatches) + " mismatches"};
}

Outcome pianoroll_rules() {
  const PitchBand band{21, 108};
  auto a = notes_to_roll({{60, 0, 300}}, band).roll;
  PianoRoll expect_a(band, 3);
  for (int c = 0; c < 3; ++c) expect_a.set(39, static_cast<std::size_t>(c), true);
  auto b = notes_to_roll({{60, 0, 500}, {60, 500, 500}}, band).roll;
  PianoRoll expect_b(band, 10);
  for (int c = 0; c < 10; ++c) expect_b.set(39, static_cast<std::size_t>(c), c != 4);
  const bool examples = a == expect_a && b == expect_b;

  std::mt19937_64 rng(77);
  int bad = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const PitchBand small{50 + static_cast<int>(rng() % 20), 70 + static_cast<int>(rng() % 20)};
    const std::size_t cols = 1 + rng() % 60;
    PianoRoll roll(small, cols);
    for (std::size_t r = 0; r < roll.n_pitches(); ++r)
      for (std::size_t c = 0; c < cols; ++c) roll.set(r, c, rng() % 3 == 0);
    roll.set(rng() % roll.n_pitches(), cols - 1, true);
    // Any roll of runs is a fixpoint once run through the rules.
    const auto canonical = notes_to_roll(roll_to_notes(roll), small).roll;
    const auto again = notes_to_roll(roll_to_notes(canonical), small).roll;
    if (!(again == canonical)) ++bad;
  }
  return {examples && bad == 0, std::string("worked examples byte-exact: ") + (examples ? "yes" : "no") +
                                    "; 200 random rolls, " + std::to_string(bad) + " not idempotent"};
}

Outcome full_scale() {
  Model m;
  m.band = {21, 108};
  m.window = WindowSpec::for_seconds(9);
  const auto dims = dims_for(m.band, m.window, 750, 200);
  const auto t0 = Clock::now();
  m.params = init_params(dims, 9);
  BinaryVector x(dims.input, 0), y(dims.input, 0);
  std::mt19937_64 rng(1);
  for (std::size_t i = 0; i < dims.input; ++i) {
    x[i] = rng() % 20 == 0;
    y[i] = rng() % 20 == 0;
  }
  std::vector<double> noise(dims.latent);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& n : noise) n = normal(rng);
  const auto t1 = Clock::now();
  const auto [loss, cache] = elbo_loss(m.params, x, y, 0.5, noise);
  Gradients g(dims);
  accumulate_gradients(m.params, std::span<const std::uint8_t>(y), 0.5, cache, g);
  const double step_secs = seconds_since(t1);
  const double total_secs = seconds_since(t0);

  const auto ckpt = make_checkpoint(m, 0.5, 0.41);
  const auto back = deserialize_checkpoint(serialize_checkpoint(ckpt));
  const bool same_params = back.model.params == ckpt.model.params;
  const bool same_loss =
      elbo_loss(back.model.params, x, y, 0.5, noise).first.total == elbo_loss(ckpt.model.params, x, y, 0.5, noise).first.total;
  const bool ok = dims.input == 7920 && step_secs < kFullScaleBudgetSec && std::isfinite(loss.total) &&
                  g.all_finite() && same_params && same_loss;
  return {ok, "D=" + std::to_string(dims.input) + " H=750 Z=200: forward+backward " + num(step_secs) +
                  " s (with init " + num(total_secs) + " s); checkpoint round trip bit-exact: " +
                  (same_params && same_loss ? "yes" : "no")};
}

Outcome determinism() {
  SyntheticSpec spec;
  const auto songs = synthetic_corpus(3, spec);
  const auto config = small_config(spec, 100, 11);
  const auto split = split_by_song(songs, config.window, 0.3, 11);
  const auto a = train(config, split);
  const auto b = train(config, split);
  const bool train_same = a.params == b.params;
  const Model m{spec.band, config.window, a.params};
  const auto seed = random_seed_window(m, 4, 0.5);
  std::vector<std::vector<double>> deltas = {perturb_latent(encode(m.params, seed), 2, 1.5)};
  const bool gen_same = generate(m, seed, 5, 0.5, deltas) == generate(m, seed, 5, 0.5, deltas);
  return {train_same && gen_same, std::string("training bit-identical: ") + (train_same ? "yes" : "no") +
                                      "; generation bit-identical: " + (gen_same ? "yes" : "no")};
}

Outcome midi_robustness() {
  int wrong = 0, accepted_malformed = 0, crashes = 0, checked = 0;
  for (const auto& fx : fixtures::valid_fixtures()) {
    const auto f = parse_midi(fx.bytes);
    if (!(f.notes == fx.expected)) ++wrong;
  }
  auto probe = [&](const std::vector<std::uint8_t>& bytes, bool must_reject) {
    ++checked;
    try {
      parse_midi(bytes);
      if (must_reject) ++accepted_malformed;
    } catch (const MalformedFile&) {
    } catch (...) {
      ++crashes;
    }
  };
  for (const auto& [name, bytes] : fixtures::malformed_fixtures()) probe(bytes, true);
  std::mt19937_64 rng(5);
  for (const auto& fx : fixtures::valid_fixtures()) {
    for (std::size_t n = 0; n < fx.bytes.size(); ++n) {
      probe({fx.bytes.begin(), fx.bytes.begin() + static_cast<std::ptrdiff_t>(n)}, true);
    }
    for (int k = 0; k < 500; ++k) {
      auto bytes = fx.bytes;
      for (int f = 0; f < 1 + static_cast<int>(rng() % 4); ++f) bytes[rng() % bytes.size()] = static_cast<std::uint8_t>(rng());
      probe(bytes, false);
    }
  }
  const bool ok = wrong == 0 && accepted_malformed == 0 && crashes == 0;
  return {ok, std::to_string(fixtures::valid_fixtures().size()) + " fixtures, " + std::to_string(wrong) +
                  " decoded wrongly; " + std::to_string(checked) + " truncated/mutated/malformed inputs, " +
                  std::to_string(accepted_malformed) + " malformed accepted, " + std::to_string(crashes) +
                  " non-MalformedFile errors"};
}

}  // namespace

int main() {
  report("gradient correctness", gradient_check);
  report("KL properties", kl_properties);
  report("loss anchors", loss_anchor);
  report("overfit training F1", overfit);
  report("reconstruction vs prediction", segment_shape);
  report("threshold sweep shape", threshold_shape);
  report("per-step geometry", per_step_geometry);
  report("metrics oracle", metrics_oracle);
  report("piano-roll rules", pianoroll_rules);
  report("full-size instantiation", full_scale);
  report("determinism", determinism);
  report("MIDI robustness", midi_robustness);
  std::printf("%d criteria failed\n", failures);
  return failures;
}
