#include "polyvae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "polyvae/errors.hpp"

namespace polyvae {

namespace {

void check_pairs(const Predictions& probs, const std::vector<WindowPair>& pairs) {
  if (probs.size() != pairs.size()) {
    throw DimensionMismatch("have " + std::to_string(probs.size()) + " predictions for " +
                            std::to_string(pairs.size()) + " pairs");
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (probs[i].size() != pairs[i].target.size()) {
      throw DimensionMismatch("prediction " + std::to_string(i) + " has the wrong length");
    }
  }
}

void count_cell(ConfusionCounts& c, bool pred, bool target) {
  if (pred) {
    target ? ++c.tp : ++c.fp;
  } else {
    target ? ++c.fn : ++c.tn;
  }
}

// Confusion restricted to output columns [first, last) of each window.
ConfusionCounts column_confusion(const Predictions& probs, const std::vector<WindowPair>& pairs,
                                 std::size_t width, std::size_t first, std::size_t last, double theta) {
  ConfusionCounts c;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = probs[i];
    const auto& y = pairs[i].target;
    for (std::size_t base = 0; base < y.size(); base += width) {
      for (std::size_t t = first; t < last; ++t) {
        count_cell(c, p[base + t] > theta, y[base + t] != 0);
      }
    }
  }
  return c;
}

ConfusionCounts full_confusion(const Predictions& probs, const std::vector<WindowPair>& pairs, double theta) {
  ConfusionCounts c;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    for (std::size_t j = 0; j < probs[i].size(); ++j) {
      count_cell(c, probs[i][j] > theta, pairs[i].target[j] != 0);
    }
  }
  return c;
}

void check_geometry(const std::vector<WindowPair>& pairs, const PitchBand& band, const WindowSpec& window) {
  const std::size_t d = static_cast<std::size_t>(band.size()) * window.width_cols();
  for (const auto& pair : pairs) {
    if (pair.target.size() != d) {
      throw DimensionMismatch("window pair has " + std::to_string(pair.target.size()) + " cells, expected " +
                              std::to_string(d));
    }
  }
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  tn += o.tn;
  fn += o.fn;
  return *this;
}

BinaryVector apply_threshold(std::span<const double> probs, double theta) {
  BinaryVector out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    out[i] = probs[i] > theta ? 1 : 0;
  }
  return out;
}

ConfusionCounts confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> target) {
  if (pred.size() != target.size()) {
    throw DimensionMismatch("prediction has " + std::to_string(pred.size()) + " cells, target " +
                            std::to_string(target.size()));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    count_cell(c, pred[i] != 0, target[i] != 0);
  }
  return c;
}

MetricsReport metrics(const ConfusionCounts& counts, double threshold) {
  const auto total = counts.total();
  if (total == 0) {
    throw EmptyCounts("no cells to score");
  }
  MetricsReport r;
  r.threshold = threshold;
  r.counts = counts;
  const auto tp = static_cast<double>(counts.tp);
  r.acc = static_cast<double>(counts.tp + counts.tn) / static_cast<double>(total);
  r.sen = counts.tp + counts.fn == 0 ? 1.0 : tp / static_cast<double>(counts.tp + counts.fn);
  r.ppv = counts.tp + counts.fp == 0 ? 1.0 : tp / static_cast<double>(counts.tp + counts.fp);
  r.f1 = r.sen + r.ppv == 0 ? 0.0 : 2 * r.sen * r.ppv / (r.sen + r.ppv);
  return r;
}

Predictions infer(const Model& model, const std::vector<WindowPair>& pairs) {
  model.validate();
  Predictions out;
  out.reserve(pairs.size());
  for (const auto& pair : pairs) {
    out.push_back(predict(model, pair.input));
  }
  return out;
}

std::vector<double> default_threshold_grid() {
  std::vector<double> grid;
  for (int i = 5; i <= 95; i += 2) {
    grid.push_back(i / 100.0);
  }
  return grid;
}

std::vector<double> normalize_grid(std::vector<double> grid) {
  for (double t : grid) {
    if (!(t >= 0 && t <= 1)) {
      throw DataError("threshold " + format_number(t) + " outside [0, 1]");
    }
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  if (grid.empty()) {
    throw DataError("threshold grid is empty");
  }
  return grid;
}

SweepResult sweep(const Predictions& train_probs, const std::vector<WindowPair>& train,
                  const Predictions& test_probs, const std::vector<WindowPair>& test, std::vector<double> thresholds) {
  check_pairs(train_probs, train);
  check_pairs(test_probs, test);
  if (train.empty()) {
    throw DataError("sweep needs at least one training pair");
  }
  thresholds = normalize_grid(std::move(thresholds));
  SweepResult result;
  double best_f1 = -1;
  for (double theta : thresholds) {
    SweepPoint point;
    point.threshold = theta;
    point.train = metrics(full_confusion(train_probs, train, theta), theta);
    if (!test.empty()) {
      point.test = metrics(full_confusion(test_probs, test, theta), theta);
    } else {
      point.test.threshold = theta;
    }
    if (point.train.f1 > best_f1) {
      best_f1 = point.train.f1;
      result.best_threshold = theta;
      result.best_index = result.points.size();
    }
    result.points.push_back(point);
  }
  return result;
}

SweepResult sweep(const Model& model, const std::vector<WindowPair>& train, const std::vector<WindowPair>& test,
                  std::vector<double> thresholds) {
  return sweep(infer(model, train), train, infer(model, test), test, std::move(thresholds));
}

SplitReport split_metrics(const Predictions& probs, const std::vector<WindowPair>& pairs, const PitchBand& band,
                          const WindowSpec& window, double theta) {
  check_pairs(probs, pairs);
  check_geometry(pairs, band, window);
  const std::size_t w = window.width_cols();
  const std::size_t cut = window.overlap_cols();
  SplitReport r;
  const auto recon = column_confusion(probs, pairs, w, 0, cut, theta);
  const auto pred = column_confusion(probs, pairs, w, cut, w, theta);
  auto full = recon;
  full += pred;
  r.reconstruction = metrics(recon, theta);
  r.prediction = metrics(pred, theta);
  r.full = metrics(full, theta);
  return r;
}

SplitReport split_metrics(const Model& model, const std::vector<WindowPair>& pairs, double theta) {
  return split_metrics(infer(model, pairs), pairs, model.band, model.window, theta);
}

std::vector<MetricsReport> per_step_metrics(const Predictions& probs, const std::vector<WindowPair>& pairs,
                                            const PitchBand& band, const WindowSpec& window, double theta) {
  check_pairs(probs, pairs);
  check_geometry(pairs, band, window);
  const std::size_t w = window.width_cols();
  std::vector<MetricsReport> out;
  for (std::size_t t = window.overlap_cols(); t < w; ++t) {
    out.push_back(metrics(column_confusion(probs, pairs, w, t, t + 1, theta), theta));
  }
  return out;
}

std::vector<MetricsReport> per_step_metrics(const Model& model, const std::vector<WindowPair>& pairs, double theta) {
  return per_step_metrics(infer(model, pairs), pairs, model.band, model.window, theta);
}

void write_report_header(std::ostream& out) { out << "threshold,side,segment,tp,fp,tn,fn,acc,sen,ppv,f1\n"; }

void write_report_row(std::ostream& out, const std::string& side, const std::string& segment,
                      const MetricsReport& r) {
  out << format_number(r.threshold) << ',' << side << ',' << segment << ',' << r.counts.tp << ',' << r.counts.fp
      << ',' << r.counts.tn << ',' << r.counts.fn << ',' << format_number(r.acc) << ',' << format_number(r.sen)
      << ',' << format_number(r.ppv) << ',' << format_number(r.f1) << '\n';
}

void write_sweep_csv(std::ostream& out, const SweepResult& sweep) {
  write_report_header(out);
  for (const auto& p : sweep.points) {
    write_report_row(out, "train", "full", p.train);
    if (p.test.counts.total() > 0) {
      write_report_row(out, "test", "full", p.test);
    }
  }
}

void write_line_chart_svg(std::ostream& out, const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::vector<Series>& series) {
  constexpr double kWidth = 640, kHeight = 400, kLeft = 60, kRight = 150, kTop = 40, kBottom = 50;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo;
  double y_lo = 0, y_hi = 1;
  for (const auto& s : series) {
    for (double x : s.x) {
      x_lo = std::min(x_lo, x);
      x_hi = std::max(x_hi, x);
    }
    for (double y : s.y) {
      y_lo = std::min(y_lo, y);
      y_hi = std::max(y_hi, y);
    }
  }
  if (!std::isfinite(x_lo)) {
    x_lo = 0;
    x_hi = 1;
  }
  if (x_hi == x_lo) x_hi = x_lo + 1;
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x_lo) / (x_hi - x_lo) * plot_w; };
  auto py = [&](double y) { return kTop + (1 - (y - y_lo) / (y_hi - y_lo)) * plot_h; };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kLeft << "\" y=\"24\" font-size=\"15\">" << xml_escape(title) << "</text>\n";
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kLeft + plot_w << "\" y2=\""
      << kTop + plot_h << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + plot_h
      << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x_lo + (x_hi - x_lo) * i / 4;
    const double yv = y_lo + (y_hi - y_lo) * i / 4;
    out << "<text x=\"" << px(xv) << "\" y=\"" << kTop + plot_h + 16 << "\" text-anchor=\"middle\">"
        << format_number(xv) << "</text>\n";
    out << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << format_number(yv)
        << "</text>\n";
  }
  out << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 10 << "\" text-anchor=\"middle\">"
      << xml_escape(x_label) << "</text>\n";
  out << "<text x=\"16\" y=\"" << kTop + plot_h / 2 << "\" transform=\"rotate(-90 16 " << kTop + plot_h / 2
      << ")\" text-anchor=\"middle\">" << xml_escape(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % std::size(kColors)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      out << (i ? " " : "") << px(s.x[i]) << ',' << py(s.y[i]);
    }
    out << "\"/>\n";
    const double ly = kTop + 14 + 18 * static_cast<double>(k);
    out << "<line x1=\"" << kLeft + plot_w + 12 << "\" y1=\"" << ly << "\" x2=\"" << kLeft + plot_w + 32
        << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << kLeft + plot_w + 36 << "\" y=\"" << ly + 4 << "\">" << xml_escape(s.name)
        << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace polyvae
