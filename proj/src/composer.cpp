#include "polyvae/composer.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "polyvae/errors.hpp"
#include "polyvae/eval.hpp"

namespace polyvae {

namespace {

struct RawStep {
  LatentCode latent;
  std::vector<double> probs;
};

void check_window(const Model& model, std::size_t size) {
  if (size != model.input_dim()) {
    throw DimensionMismatch("window has " + std::to_string(size) + " cells, model expects " +
                            std::to_string(model.input_dim()));
  }
}

template <typename T>
RawStep raw_step(const Model& model, std::span<const T> window, std::span<const double> delta,
                 const ComposerOptions& options, std::size_t step) {
  check_window(model, window.size());
  const std::size_t z_dim = model.latent_dim();
  if (!delta.empty() && delta.size() != z_dim) {
    throw DimensionMismatch("latent delta has " + std::to_string(delta.size()) + " entries, latent size is " +
                            std::to_string(z_dim));
  }
  RawStep out;
  out.latent = encode(model.params, window);
  std::vector<double> z = out.latent.mu;
  if (options.sample_seed) {
    std::mt19937_64 rng(*options.sample_seed + step);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t j = 0; j < z_dim; ++j) {
      z[j] += std::exp(0.5 * out.latent.logvar[j]) * normal(rng);
    }
  }
  for (std::size_t j = 0; j < delta.size(); ++j) {
    z[j] += delta[j];
  }
  out.probs = decode(model.params, z);
  return out;
}

// Last `stride` columns of a pitch-major window.
template <typename T>
std::vector<T> tail_columns(std::span<const T> flat, std::size_t rows, std::size_t width, std::size_t stride) {
  std::vector<T> out(rows * stride);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(r * width + width - stride), stride,
                out.begin() + static_cast<std::ptrdiff_t>(r * stride));
  }
  return out;
}

// window[stride:] followed by `cols` (rows x stride), both pitch-major.
template <typename T>
std::vector<T> slide(std::span<const T> window, std::span<const T> cols, std::size_t rows, std::size_t width,
                     std::size_t stride) {
  std::vector<T> out(window.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = window.subspan(r * width, width);
    std::copy(row.begin() + static_cast<std::ptrdiff_t>(stride), row.end(),
              out.begin() + static_cast<std::ptrdiff_t>(r * width));
    std::copy_n(cols.begin() + static_cast<std::ptrdiff_t>(r * stride), stride,
                out.begin() + static_cast<std::ptrdiff_t>(r * width + width - stride));
  }
  return out;
}

ContinueResult finish(const Model& model, std::span<const std::uint8_t> window, RawStep raw, double theta,
                      Feedback feedback) {
  const std::size_t rows = static_cast<std::size_t>(model.band.size());
  const std::size_t width = model.window.width_cols();
  const std::size_t stride = model.window.stride();
  ContinueResult out;
  out.output = apply_threshold(raw.probs, theta);
  const auto cols = tail_columns<std::uint8_t>(out.output, rows, width, stride);
  out.new_cols = unflatten(cols, model.band, stride);
  out.next_window = feedback == Feedback::kOutput ? out.output : slide<std::uint8_t>(window, cols, rows, width, stride);
  out.latent = std::move(raw.latent);
  return out;
}

}  // namespace

ContinueResult continue_window(const Model& model, std::span<const std::uint8_t> window, double theta,
                               std::span<const double> latent_delta, const ComposerOptions& options) {
  auto raw = raw_step(model, window, latent_delta, options, 0);
  return finish(model, window, std::move(raw), theta, options.feedback);
}

CompositionState start_composition(const Model& model, std::span<const std::uint8_t> seed_window) {
  model.validate();
  check_window(model, seed_window.size());
  CompositionState state;
  state.current_window.assign(seed_window.begin(), seed_window.end());
  state.roll = unflatten(seed_window, model.band, model.window.width_cols());
  state.seed_cols = model.window.width_cols();
  state.soft_window.assign(seed_window.begin(), seed_window.end());
  return state;
}

ContinueResult step_composition(const Model& model, CompositionState& state, double theta,
                                std::span<const double> latent_delta, const ComposerOptions& options) {
  ContinueResult result;
  if (options.feedback == Feedback::kProbabilities) {
    auto raw = raw_step<double>(model, state.soft_window, latent_delta, options, state.step_count);
    const std::size_t rows = static_cast<std::size_t>(model.band.size());
    const std::size_t width = model.window.width_cols();
    const std::size_t stride = model.window.stride();
    const auto soft_cols = tail_columns<double>(raw.probs, rows, width, stride);
    state.soft_window = slide<double>(state.soft_window, soft_cols, rows, width, stride);
    result = finish(model, state.current_window, std::move(raw), theta, Feedback::kSlide);
  } else {
    auto raw = raw_step<std::uint8_t>(model, state.current_window, latent_delta, options, state.step_count);
    result = finish(model, state.current_window, std::move(raw), theta, options.feedback);
  }
  state.current_window = result.next_window;
  state.roll.append(result.new_cols);
  state.last_latent = result.latent;
  ++state.step_count;
  return result;
}

PianoRoll generate(const Model& model, std::span<const std::uint8_t> seed_window, int seconds, double theta,
                   const std::vector<std::vector<double>>& deltas, const ComposerOptions& options) {
  if (seconds < 1) {
    throw DataError("seconds must be >= 1");
  }
  auto state = start_composition(model, seed_window);
  const std::size_t wanted = static_cast<std::size_t>(seconds) * kColsPerSecond;
  const std::size_t steps = wanted / model.window.stride();
  for (std::size_t k = 0; k < steps; ++k) {
    const std::span<const double> delta = k < deltas.size() ? std::span<const double>(deltas[k]) : std::span<const double>();
    step_composition(model, state, theta, delta, options);
  }
  return std::move(state.roll);
}

BinaryVector random_seed_window(const Model& model, std::uint64_t seed, double theta) {
  model.validate();
  std::vector<double> z(model.latent_dim(), 0.0);
  if (seed != 0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : z) v = normal(rng);
  }
  return apply_threshold(decode(model.params, z), theta);
}

std::vector<double> perturb_latent(const LatentCode& latent, std::size_t dim, double delta) {
  if (dim >= latent.mu.size()) {
    throw IndexOutOfRange("latent dimension " + std::to_string(dim) + " out of range [0, " +
                          std::to_string(latent.mu.size()) + ")");
  }
  std::vector<double> out(latent.mu.size(), 0.0);
  out[dim] = delta;
  return out;
}

std::vector<double> add_deltas(std::span<const double> a, std::span<const double> b) {
  if (a.empty()) return {b.begin(), b.end()};
  if (b.empty()) return {a.begin(), a.end()};
  if (a.size() != b.size()) {
    throw DimensionMismatch("latent deltas differ in size");
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

}  // namespace polyvae
