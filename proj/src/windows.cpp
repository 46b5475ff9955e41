#include "polyvae/windows.hpp"

#include "polyvae/errors.hpp"

namespace polyvae {

WindowSpec WindowSpec::for_seconds(int seconds) {
  WindowSpec spec;
  spec.window_seconds = seconds;
  spec.stride_cols = seconds == 1 ? kColsPerSecond / 2 : kColsPerSecond;
  spec.validate();
  return spec;
}

void WindowSpec::validate() const {
  if (window_seconds < 1) {
    throw DataError("window_seconds must be >= 1");
  }
  if (grid_ms != kGridMs) {
    throw DataError("grid_ms is fixed at 100");
  }
  const int expected = window_seconds == 1 ? kColsPerSecond / 2 : kColsPerSecond;
  if (stride_cols != expected) {
    throw DataError("stride_cols must be " + std::to_string(expected) + " for a " +
                    std::to_string(window_seconds) + " s window");
  }
}

BinaryVector flatten_columns(const PianoRoll& roll, std::size_t first, std::size_t width) {
  if (first + width > roll.n_cols()) {
    throw IndexOutOfRange("window exceeds roll width");
  }
  BinaryVector flat(roll.n_pitches() * width);
  for (std::size_t p = 0; p < roll.n_pitches(); ++p) {
    auto row = roll.row(p).subspan(first, width);
    std::copy(row.begin(), row.end(), flat.begin() + static_cast<std::ptrdiff_t>(p * width));
  }
  return flat;
}

PianoRoll unflatten(std::span<const std::uint8_t> flat, PitchBand band, std::size_t width) {
  const auto n_pitches = static_cast<std::size_t>(band.size());
  if (flat.size() != n_pitches * width) {
    throw DimensionMismatch("flat window has " + std::to_string(flat.size()) + " cells, expected " +
                            std::to_string(n_pitches * width));
  }
  PianoRoll roll(band, width);
  for (std::size_t p = 0; p < n_pitches; ++p) {
    for (std::size_t t = 0; t < width; ++t) {
      roll.set(p, t, flat[p * width + t] != 0);
    }
  }
  return roll;
}

std::vector<WindowPair> make_windows(const PianoRoll& roll, const WindowSpec& spec, const std::string& song_id) {
  spec.validate();
  const std::size_t width = spec.width_cols();
  const std::size_t stride = spec.stride();
  if (roll.n_cols() < width + stride) {
    throw TooShort("song '" + song_id + "' has " + std::to_string(roll.n_cols()) + " columns, a window pair needs " +
                   std::to_string(width + stride));
  }
  std::vector<WindowPair> pairs;
  for (std::size_t t = 0; t + stride + width <= roll.n_cols(); t += kColsPerSecond) {
    pairs.push_back({flatten_columns(roll, t, width), flatten_columns(roll, t + stride, width), song_id, t});
  }
  return pairs;
}

}  // namespace polyvae
