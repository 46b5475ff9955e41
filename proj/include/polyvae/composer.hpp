#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "polyvae/model.hpp"
#include "polyvae/pianoroll.hpp"
#include "polyvae/vae.hpp"
#include "polyvae/windows.hpp"

namespace polyvae {

/// What the loop feeds back as the next input window.
enum class Feedback {
  /// Drop the oldest stride columns of the current window and append the new
  /// ones. Keeps the window equal to the tail of the composed roll.
  kSlide,
  /// The whole thresholded output window.
  kOutput,
  /// Like kSlide, but the appended columns are raw probabilities.
  kProbabilities,
};

struct ComposerOptions {
  Feedback feedback = Feedback::kSlide;
  /// When set, z = mu + delta + sigma * noise with noise seeded by this value
  /// plus the step index. Otherwise z = mu + delta.
  std::optional<std::uint64_t> sample_seed;
};

struct ContinueResult {
  BinaryVector next_window;
  /// n_pitches x stride.
  PianoRoll new_cols;
  LatentCode latent;
  BinaryVector output;
};

/// One loop step from a binary window. `latent_delta` may be empty (zero).
ContinueResult continue_window(const Model& model, std::span<const std::uint8_t> window, double theta,
                               std::span<const double> latent_delta = {}, const ComposerOptions& options = {});

struct CompositionState {
  BinaryVector current_window;
  /// Seed columns followed by every generated column.
  PianoRoll roll;
  std::size_t seed_cols = 0;
  LatentCode last_latent;
  std::size_t step_count = 0;
  /// Real-valued window, only used with Feedback::kProbabilities.
  std::vector<double> soft_window;
};

CompositionState start_composition(const Model& model, std::span<const std::uint8_t> seed_window);

/// Advances the state by one stride and returns the step's result.
ContinueResult step_composition(const Model& model, CompositionState& state, double theta,
                                std::span<const double> latent_delta = {}, const ComposerOptions& options = {});

/// Runs the loop until seconds * 10 new columns exist. Step k uses deltas[k]
/// when present. Returns the seed columns followed by the new ones.
PianoRoll generate(const Model& model, std::span<const std::uint8_t> seed_window, int seconds, double theta,
                   const std::vector<std::vector<double>>& deltas = {}, const ComposerOptions& options = {});

/// Seed 0 decodes the latent origin; any other seed draws z from a standard
/// normal.
BinaryVector random_seed_window(const Model& model, std::uint64_t seed, double theta);

/// Zero vector of size Z except `delta` at `dim`. Throws IndexOutOfRange.
std::vector<double> perturb_latent(const LatentCode& latent, std::size_t dim, double delta);

/// Element-wise sum; an empty operand counts as zero.
std::vector<double> add_deltas(std::span<const double> a, std::span<const double> b);

}  // namespace polyvae
