#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "polyvae/model.hpp"
#include "polyvae/windows.hpp"

namespace polyvae {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  std::uint64_t predicted_positive() const { return tp + fp; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// acc is the standard accuracy (tp + tn) / total. sen and ppv are 1 when
/// their denominator is 0; f1 is 0 when both sen and ppv are 0.
struct MetricsReport {
  double threshold = 0;
  double acc = 0;
  double sen = 0;
  double ppv = 0;
  double f1 = 0;
  ConfusionCounts counts;
};

/// 1 where prob > theta.
BinaryVector apply_threshold(std::span<const double> probs, double theta);

ConfusionCounts confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> target);

/// Throws EmptyCounts when total is 0.
MetricsReport metrics(const ConfusionCounts& counts, double threshold = 0);

/// Decoder probabilities for every pair's input at z = mu.
using Predictions = std::vector<std::vector<double>>;
Predictions infer(const Model& model, const std::vector<WindowPair>& pairs);

struct SweepPoint {
  double threshold = 0;
  MetricsReport train;
  MetricsReport test;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  double best_threshold = 0;
  std::size_t best_index = 0;
};

/// 0.05, 0.07, ..., 0.95.
std::vector<double> default_threshold_grid();

/// Sorts and de-duplicates; throws DataError on values outside [0, 1].
std::vector<double> normalize_grid(std::vector<double> grid);

/// Full-window metrics per threshold on both sides. best_threshold is the
/// training-F1 argmax, lowest threshold on ties. An empty test side yields
/// zeroed test reports.
SweepResult sweep(const Model& model, const std::vector<WindowPair>& train, const std::vector<WindowPair>& test,
                  std::vector<double> thresholds);
SweepResult sweep(const Predictions& train_probs, const std::vector<WindowPair>& train,
                  const Predictions& test_probs, const std::vector<WindowPair>& test, std::vector<double> thresholds);

/// Reconstruction covers the first W - stride columns of each output window,
/// prediction the last stride columns.
struct SplitReport {
  MetricsReport reconstruction;
  MetricsReport prediction;
  MetricsReport full;
};

SplitReport split_metrics(const Model& model, const std::vector<WindowPair>& pairs, double theta);
SplitReport split_metrics(const Predictions& probs, const std::vector<WindowPair>& pairs, const PitchBand& band,
                          const WindowSpec& window, double theta);

/// One report per predicted column (offsets 1..stride).
std::vector<MetricsReport> per_step_metrics(const Model& model, const std::vector<WindowPair>& pairs, double theta);
std::vector<MetricsReport> per_step_metrics(const Predictions& probs, const std::vector<WindowPair>& pairs,
                                            const PitchBand& band, const WindowSpec& window, double theta);

/// Report rows: threshold,side,segment,tp,fp,tn,fn,acc,sen,ppv,f1
void write_report_header(std::ostream& out);
void write_report_row(std::ostream& out, const std::string& side, const std::string& segment,
                      const MetricsReport& report);
void write_sweep_csv(std::ostream& out, const SweepResult& sweep);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Minimal standalone SVG line chart.
void write_line_chart_svg(std::ostream& out, const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::vector<Series>& series);

}  // namespace polyvae
