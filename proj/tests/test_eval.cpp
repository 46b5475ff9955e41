#include <algorithm>
#include <random>
#include <sstream>

#include "doctest.h"
#include "polyvae/errors.hpp"
#include "polyvae/eval.hpp"

using namespace polyvae;

namespace {

// Per-cell reference implementation.
MetricsReport naive_metrics(const std::vector<double>& probs, const BinaryVector& target, double theta) {
  double tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool p = probs[i] > theta;
    const bool t = target[i] == 1;
    if (p && t) tp += 1;
    if (p && !t) fp += 1;
    if (!p && !t) tn += 1;
    if (!p && t) fn += 1;
  }
  MetricsReport r;
  r.acc = (tp + tn) / (tp + fp + tn + fn);
  r.sen = (tp + fn) > 0 ? tp / (tp + fn) : 1.0;
  r.ppv = (tp + fp) > 0 ? tp / (tp + fp) : 1.0;
  r.f1 = (r.sen + r.ppv) > 0 ? 2 * r.sen * r.ppv / (r.sen + r.ppv) : 0.0;
  r.counts = {static_cast<std::uint64_t>(tp), static_cast<std::uint64_t>(fp), static_cast<std::uint64_t>(tn),
              static_cast<std::uint64_t>(fn)};
  return r;
}

std::vector<WindowPair> random_pairs(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::vector<WindowPair> pairs(n);
  for (auto& p : pairs) {
    p.input.resize(d);
    p.target.resize(d);
    for (auto& v : p.input) v = rng() % 3 == 0;
    for (auto& v : p.target) v = rng() % 3 == 0;
  }
  return pairs;
}

Predictions random_probs(const std::vector<WindowPair>& pairs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.001, 0.999);
  Predictions out;
  for (const auto& p : pairs) {
    std::vector<double> v(p.target.size());
    for (auto& x : v) x = u(rng);
    out.push_back(v);
  }
  return out;
}

Model tiny_model(PitchBand band, int seconds, std::uint64_t seed) {
  Model m;
  m.band = band;
  m.window = WindowSpec::for_seconds(seconds);
  m.params = init_params(dims_for(band, m.window, 4, 2), seed);
  return m;
}

}  // namespace

TEST_CASE("apply_threshold is strict") {
  const std::vector<double> probs = {0.3, 0.41, 0.5};
  CHECK(apply_threshold(probs, 0.41) == BinaryVector{0, 0, 1});
  CHECK(apply_threshold(probs, 0.0) == BinaryVector{1, 1, 1});
  CHECK(apply_threshold(probs, 1.0) == BinaryVector{0, 0, 0});
}

TEST_CASE("confusion examples") {
  CHECK(confusion(BinaryVector{1, 0, 1, 0}, BinaryVector{1, 0, 1, 0}) == ConfusionCounts{2, 0, 2, 0});
  CHECK(confusion(BinaryVector{1, 1, 0, 0}, BinaryVector{1, 0, 1, 0}) == ConfusionCounts{1, 1, 1, 1});
  CHECK(confusion(BinaryVector(7, 0), BinaryVector(7, 0)) == ConfusionCounts{0, 0, 7, 0});
  CHECK_THROWS_AS(confusion(BinaryVector(3), BinaryVector(4)), DimensionMismatch);
}

TEST_CASE("metrics examples") {
  auto r = metrics({2, 0, 2, 0});
  CHECK(r.acc == 1.0);
  CHECK(r.sen == 1.0);
  CHECK(r.ppv == 1.0);
  CHECK(r.f1 == 1.0);
  r = metrics({1, 1, 1, 1});
  CHECK(r.acc == 0.5);
  CHECK(r.sen == 0.5);
  CHECK(r.ppv == 0.5);
  CHECK(r.f1 == 0.5);
  r = metrics({0, 0, 5, 3});
  CHECK(r.sen == 0.0);
  CHECK(r.ppv == 1.0);
  CHECK(r.f1 == 0.0);
  CHECK(r.acc == 0.625);
  CHECK_THROWS_AS(metrics({}), EmptyCounts);
}

TEST_CASE("property: metrics equal a naive per-cell loop on 100 random instances") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + rng() % 60;
    std::vector<double> probs(d);
    BinaryVector target(d);
    for (auto& p : probs) p = static_cast<double>(rng() % 1000) / 1000.0;
    for (auto& t : target) t = rng() % 2;
    const double theta = static_cast<double>(rng() % 100) / 100.0;
    const auto fast = metrics(confusion(apply_threshold(probs, theta), target), theta);
    const auto slow = naive_metrics(probs, target, theta);
    CHECK(fast.counts == slow.counts);
    CHECK(fast.acc == slow.acc);
    CHECK(fast.sen == slow.sen);
    CHECK(fast.ppv == slow.ppv);
    CHECK(fast.f1 == slow.f1);
    for (double v : {fast.acc, fast.sen, fast.ppv, fast.f1}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("default grid runs 0.05 to 0.95 in steps of 0.02 and contains 0.41") {
  const auto grid = default_threshold_grid();
  CHECK(grid.size() == 46);
  CHECK(grid.front() == 0.05);
  CHECK(grid.back() == 0.95);
  CHECK(std::find(grid.begin(), grid.end(), 0.41) != grid.end());
  CHECK_THROWS_AS(normalize_grid({0.5, 1.5}), DataError);
  CHECK(normalize_grid({0.9, 0.1, 0.5, 0.1}) == std::vector<double>{0.1, 0.5, 0.9});
}

TEST_CASE("sweep endpoints give SEN 1 then 0 and output is sorted") {
  std::mt19937_64 rng(2);
  const auto train = random_pairs(4, 30, rng);
  const auto test = random_pairs(3, 30, rng);
  const auto result = sweep(random_probs(train, rng), train, random_probs(test, rng), test, {1.0, 0.0});
  REQUIRE(result.points.size() == 2);
  CHECK(result.points[0].threshold == 0.0);
  CHECK(result.points[0].train.sen == 1.0);
  CHECK(result.points[0].test.sen == 1.0);
  CHECK(result.points[1].threshold == 1.0);
  CHECK(result.points[1].train.sen == 0.0);
  CHECK(result.points[1].test.sen == 0.0);
}

TEST_CASE("property: SEN and predicted positives never increase with the threshold") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto train = random_pairs(3, 40, rng);
    const auto test = random_pairs(2, 40, rng);
    const auto result = sweep(random_probs(train, rng), train, random_probs(test, rng), test, default_threshold_grid());
    for (std::size_t i = 1; i < result.points.size(); ++i) {
      const auto& a = result.points[i - 1];
      const auto& b = result.points[i];
      CHECK(a.threshold < b.threshold);
      CHECK(b.train.sen <= a.train.sen);
      CHECK(b.test.sen <= a.test.sen);
      CHECK(b.train.counts.predicted_positive() <= a.train.counts.predicted_positive());
      CHECK(b.test.counts.predicted_positive() <= a.test.counts.predicted_positive());
    }
  }
}

TEST_CASE("best threshold is the lowest among tied training F1") {
  std::vector<WindowPair> pairs(1);
  pairs[0].input = {0, 0, 0, 0};
  pairs[0].target = {1, 1, 0, 0};
  const Predictions probs = {{0.9, 0.8, 0.2, 0.1}};
  const auto result = sweep(probs, pairs, {}, {}, {0.1, 0.3, 0.5, 0.7, 0.85});
  CHECK(result.best_threshold == 0.3);
  CHECK(result.best_index == 1);
  CHECK(result.points[1].train.f1 == 1.0);
}

TEST_CASE("split geometry: T=9 has 80 reconstruction and 10 prediction columns") {
  const PitchBand band{21, 108};
  const auto window = WindowSpec::for_seconds(9);
  std::mt19937_64 rng(4);
  const auto pairs = random_pairs(2, 88 * 90, rng);
  const auto probs = random_probs(pairs, rng);
  const auto r = split_metrics(probs, pairs, band, window, 0.5);
  CHECK(r.reconstruction.counts.total() == 2 * 88 * 80);
  CHECK(r.prediction.counts.total() == 2 * 88 * 10);
  auto sum = r.reconstruction.counts;
  sum += r.prediction.counts;
  CHECK(sum == r.full.counts);
  ConfusionCounts direct;
  for (std::size_t i = 0; i < pairs.size(); ++i) direct += confusion(apply_threshold(probs[i], 0.5), pairs[i].target);
  CHECK(direct == r.full.counts);
}

TEST_CASE("per-step reports: 10 for T=9, 5 for T=1, summing to the prediction side") {
  for (int seconds : {9, 1}) {
    CAPTURE(seconds);
    const auto model = tiny_model({21, 108}, seconds, 1);
    std::mt19937_64 rng(seconds);
    const auto pairs = random_pairs(3, model.input_dim(), rng);
    const auto steps = per_step_metrics(model, pairs, 0.5);
    CHECK(steps.size() == (seconds == 9 ? 10u : 5u));
    ConfusionCounts sum;
    for (const auto& s : steps) sum += s.counts;
    CHECK(sum == split_metrics(model, pairs, 0.5).prediction.counts);
  }
}

TEST_CASE("a copying model scores high on reconstruction and low on prediction") {
  const PitchBand band{60, 71};
  const auto window = WindowSpec::for_seconds(2);
  const std::size_t w = window.width_cols();
  std::mt19937_64 rng(11);
  std::vector<WindowPair> pairs;
  Predictions probs;
  for (int k = 0; k < 8; ++k) {
    PianoRoll roll(band, w + window.stride());
    for (std::size_t r = 0; r < roll.n_pitches(); ++r)
      for (std::size_t c = 0; c < roll.n_cols(); ++c) roll.set(r, c, rng() % 3 == 0);
    WindowPair pair{flatten_columns(roll, 0, w), flatten_columns(roll, window.stride(), w), "s", 0};
    // Copies the known columns exactly and guesses the new ones at random.
    std::vector<double> p(pair.target.size());
    for (std::size_t r = 0; r < roll.n_pitches(); ++r) {
      for (std::size_t t = 0; t < w; ++t) {
        const bool known = t < window.overlap_cols();
        const bool on = known ? pair.input[r * w + t + window.stride()] : rng() % 2;
        p[r * w + t] = on ? 0.9 : 0.1;
      }
    }
    pairs.push_back(pair);
    probs.push_back(p);
  }
  const auto r = split_metrics(probs, pairs, band, window, 0.5);
  CHECK(r.reconstruction.f1 == 1.0);
  CHECK(r.prediction.f1 < 0.6);
}

TEST_CASE("report CSV and SVG emitters") {
  SweepResult s;
  s.points.push_back({0.5, metrics({1, 1, 1, 1}, 0.5), metrics({2, 0, 2, 0}, 0.5)});
  std::ostringstream csv;
  write_sweep_csv(csv, s);
  CHECK(csv.str() ==
        "threshold,side,segment,tp,fp,tn,fn,acc,sen,ppv,f1\n"
        "0.5,train,full,1,1,1,1,0.5,0.5,0.5,0.5\n"
        "0.5,test,full,2,0,2,0,1,1,1,1\n");
  std::ostringstream svg;
  write_line_chart_svg(svg, "F1 & co", "threshold", "score", {{"F1", {0, 0.5, 1}, {0.2, 0.8, 0.1}}});
  CHECK(svg.str().rfind("<svg", 0) == 0);
  CHECK(svg.str().find("F1 &amp; co") != std::string::npos);
  CHECK(svg.str().find("<polyline") != std::string::npos);
}
