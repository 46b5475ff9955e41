#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "polyvae/pianoroll.hpp"

namespace polyvae {

using BinaryVector = std::vector<std::uint8_t>;

/// Input window of T seconds and the prediction stride. The stride is one
/// second (10 columns) except for T = 1, where it is half a second.
struct WindowSpec {
  int window_seconds = 9;
  int grid_ms = kGridMs;
  int stride_cols = kColsPerSecond;

  static WindowSpec for_seconds(int seconds);

  std::size_t width_cols() const { return static_cast<std::size_t>(window_seconds) * kColsPerSecond; }
  std::size_t stride() const { return static_cast<std::size_t>(stride_cols); }
  /// Leading columns of an output window that restate the input.
  std::size_t overlap_cols() const { return width_cols() - stride(); }

  /// Throws DataError unless the invariants hold.
  void validate() const;

  friend bool operator==(const WindowSpec&, const WindowSpec&) = default;
};

struct WindowPair {
  BinaryVector input;
  BinaryVector target;
  std::string source_song;
  std::size_t source_offset_cols = 0;
};

/// Flattens `width` columns starting at `first` in pitch-major order:
/// element p * width + t holds row p, column first + t.
BinaryVector flatten_columns(const PianoRoll& roll, std::size_t first, std::size_t width);

/// Inverse of flatten_columns.
PianoRoll unflatten(std::span<const std::uint8_t> flat, PitchBand band, std::size_t width);

/// Input windows start every second (offsets 0, 10, 20, ...); each target is
/// the input advanced by the stride. Throws TooShort when the roll cannot hold
/// a single pair.
std::vector<WindowPair> make_windows(const PianoRoll& roll, const WindowSpec& spec,
                                     const std::string& song_id = {});

}  // namespace polyvae
