#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace polyvae {

inline constexpr int kGridMs = 100;
inline constexpr int kColsPerSecond = 1000 / kGridMs;

struct NoteEvent {
  int pitch = 60;
  std::int64_t onset_ms = 0;
  std::int64_t duration_ms = 1;

  std::int64_t end_ms() const { return onset_ms + duration_ms; }
  friend bool operator==(const NoteEvent&, const NoteEvent&) = default;
};

using NoteList = std::vector<NoteEvent>;

/// Sorts by (onset, pitch, duration).
void sort_notes(NoteList& notes);

/// Inclusive MIDI pitch range modelled by a roll. Defaults to the 88 piano keys.
struct PitchBand {
  int lo = 21;
  int hi = 108;

  int size() const { return hi - lo + 1; }
  bool contains(int pitch) const { return pitch >= lo && pitch <= hi; }
  friend bool operator==(const PitchBand&, const PitchBand&) = default;
};

/// Binary pitch x time matrix on a 100 ms grid. Row r holds pitch band.lo + r.
class PianoRoll {
 public:
  PianoRoll() = default;
  PianoRoll(PitchBand band, std::size_t n_cols);

  const PitchBand& band() const { return band_; }
  std::size_t n_pitches() const { return static_cast<std::size_t>(band_.size()); }
  std::size_t n_cols() const { return n_cols_; }

  std::uint8_t at(std::size_t row, std::size_t col) const { return cells_[row * n_cols_ + col]; }
  void set(std::size_t row, std::size_t col, bool on) { cells_[row * n_cols_ + col] = on ? 1 : 0; }

  std::span<const std::uint8_t> row(std::size_t r) const {
    return {cells_.data() + r * n_cols_, n_cols_};
  }
  const std::vector<std::uint8_t>& cells() const { return cells_; }

  /// Copy of columns [first, first + count).
  PianoRoll columns(std::size_t first, std::size_t count) const;

  /// Appends the columns of `other`, which must share the pitch band.
  void append(const PianoRoll& other);

  std::size_t active_cells() const;

  friend bool operator==(const PianoRoll&, const PianoRoll&) = default;

 private:
  PitchBand band_{};
  std::size_t n_cols_ = 0;
  std::vector<std::uint8_t> cells_;
};

struct QuantizedRoll {
  PianoRoll roll;
  std::size_t dropped_notes = 0;  // outside the pitch band
};

/// Quantizes notes onto the grid. A note covering [s, e) ms occupies columns
/// floor(s/grid) .. max(floor(s/grid), ceil(e/grid) - 1). When a later note of
/// the same pitch starts on or right after the previous one's last column, the
/// column before it is cleared so the two stay distinguishable, unless that
/// would erase an earlier note entirely (then the notes merge).
/// Throws EmptyAfterQuantization when no note falls inside the band.
QuantizedRoll notes_to_roll(const NoteList& notes, PitchBand band, int grid_ms = kGridMs);

/// Every maximal run of 1s becomes one note. Sorted by (onset, pitch).
NoteList roll_to_notes(const PianoRoll& roll, int grid_ms = kGridMs);

/// Text format: "lo hi n_cols" header, then one line of 0/1 per pitch row
/// (lowest pitch first).
void write_roll_text(std::ostream& out, const PianoRoll& roll);
PianoRoll read_roll_text(std::istream& in);

}  // namespace polyvae
