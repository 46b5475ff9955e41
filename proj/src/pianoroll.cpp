#include "polyvae/pianoroll.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <tuple>

#include "polyvae/errors.hpp"

namespace polyvae {

void sort_notes(NoteList& notes) {
  std::sort(notes.begin(), notes.end(), [](const NoteEvent& a, const NoteEvent& b) {
    return std::tie(a.onset_ms, a.pitch, a.duration_ms) < std::tie(b.onset_ms, b.pitch, b.duration_ms);
  });
}

PianoRoll::PianoRoll(PitchBand band, std::size_t n_cols)
    : band_(band), n_cols_(n_cols), cells_(static_cast<std::size_t>(band.size()) * n_cols, 0) {
  if (band.lo > band.hi || band.lo < 0 || band.hi > 127) {
    throw DataError("invalid pitch band [" + std::to_string(band.lo) + ", " + std::to_string(band.hi) + "]");
  }
}

PianoRoll PianoRoll::columns(std::size_t first, std::size_t count) const {
  if (first + count > n_cols_) {
    throw IndexOutOfRange("column range exceeds roll width");
  }
  PianoRoll out(band_, count);
  for (std::size_t r = 0; r < n_pitches(); ++r) {
    std::copy_n(cells_.begin() + static_cast<std::ptrdiff_t>(r * n_cols_ + first), count,
                out.cells_.begin() + static_cast<std::ptrdiff_t>(r * count));
  }
  return out;
}

void PianoRoll::append(const PianoRoll& other) {
  if (other.band_ != band_) {
    throw DimensionMismatch("cannot append rolls with different pitch bands");
  }
  PianoRoll merged(band_, n_cols_ + other.n_cols_);
  for (std::size_t r = 0; r < n_pitches(); ++r) {
    auto dst = merged.cells_.begin() + static_cast<std::ptrdiff_t>(r * merged.n_cols_);
    auto src = row(r);
    auto tail = other.row(r);
    dst = std::copy(src.begin(), src.end(), dst);
    std::copy(tail.begin(), tail.end(), dst);
  }
  *this = std::move(merged);
}

std::size_t PianoRoll::active_cells() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

namespace {

struct Span {
  std::size_t first;
  std::size_t last;
};

std::int64_t floor_div(std::int64_t a, std::int64_t b) { return a / b - ((a % b != 0) && ((a < 0) != (b < 0))); }
std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return -floor_div(-a, b); }

// Clears column `c - 1` before each later note that touches or overlaps the
// previous material of its pitch. A clear is skipped when it would leave an
// earlier note with no set column.
void apply_separation(PianoRoll& roll, std::size_t row, std::vector<Span>& spans) {
  std::sort(spans.begin(), spans.end(),
            [](const Span& a, const Span& b) { return std::tie(a.first, a.last) < std::tie(b.first, b.last); });
  std::vector<std::size_t> cleared;
  auto survives_without = [&](const Span& s, std::size_t col) {
    for (std::size_t c = s.first; c <= s.last; ++c) {
      if (c != col && std::find(cleared.begin(), cleared.end(), c) == cleared.end()) {
        return true;
      }
    }
    return false;
  };

  std::size_t prev_last = spans.front().last;
  std::size_t prev_first = spans.front().first;
  for (std::size_t k = 1; k < spans.size(); ++k) {
    const Span& note = spans[k];
    const bool later = note.first > prev_first;
    if (later && note.first <= prev_last + 1) {
      const std::size_t col = note.first - 1;
      bool erases = false;
      for (std::size_t j = 0; j < k && !erases; ++j) {
        if (spans[j].first <= col && col <= spans[j].last) {
          erases = !survives_without(spans[j], col);
        }
      }
      if (!erases) {
        roll.set(row, col, false);
        cleared.push_back(col);
      }
    }
    prev_first = std::max(prev_first, note.first);
    prev_last = std::max(prev_last, note.last);
  }
}

}  // namespace

QuantizedRoll notes_to_roll(const NoteList& notes, PitchBand band, int grid_ms) {
  if (grid_ms <= 0) {
    throw DataError("grid_ms must be positive");
  }
  std::map<int, std::vector<Span>> by_pitch;
  std::size_t dropped = 0;
  std::size_t n_cols = 0;
  for (const auto& n : notes) {
    if (!band.contains(n.pitch)) {
      ++dropped;
      continue;
    }
    const std::int64_t first = floor_div(n.onset_ms, grid_ms);
    const std::int64_t last = std::max(first, ceil_div(n.end_ms(), grid_ms) - 1);
    if (first < 0) {
      throw DataError("note with negative onset");
    }
    by_pitch[n.pitch].push_back({static_cast<std::size_t>(first), static_cast<std::size_t>(last)});
    n_cols = std::max(n_cols, static_cast<std::size_t>(last) + 1);
  }
  if (by_pitch.empty()) {
    throw EmptyAfterQuantization(std::to_string(notes.size()) + " notes, none inside pitch band [" +
                                 std::to_string(band.lo) + ", " + std::to_string(band.hi) + "]");
  }

  QuantizedRoll out{PianoRoll(band, n_cols), dropped};
  for (auto& [pitch, spans] : by_pitch) {
    const auto row = static_cast<std::size_t>(pitch - band.lo);
    for (const auto& s : spans) {
      for (std::size_t c = s.first; c <= s.last; ++c) {
        out.roll.set(row, c, true);
      }
    }
    apply_separation(out.roll, row, spans);
  }
  return out;
}

NoteList roll_to_notes(const PianoRoll& roll, int grid_ms) {
  NoteList notes;
  for (std::size_t r = 0; r < roll.n_pitches(); ++r) {
    auto cells = roll.row(r);
    std::size_t c = 0;
    while (c < cells.size()) {
      if (!cells[c]) {
        ++c;
        continue;
      }
      const std::size_t start = c;
      while (c < cells.size() && cells[c]) {
        ++c;
      }
      notes.push_back({roll.band().lo + static_cast<int>(r), static_cast<std::int64_t>(start) * grid_ms,
                       static_cast<std::int64_t>(c - start) * grid_ms});
    }
  }
  sort_notes(notes);
  return notes;
}

void write_roll_text(std::ostream& out, const PianoRoll& roll) {
  out << roll.band().lo << ' ' << roll.band().hi << ' ' << roll.n_cols() << '\n';
  std::string line(roll.n_cols(), '0');
  for (std::size_t r = 0; r < roll.n_pitches(); ++r) {
    auto cells = roll.row(r);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      line[c] = cells[c] ? '1' : '0';
    }
    out << line << '\n';
  }
}

PianoRoll read_roll_text(std::istream& in) {
  int lo = 0;
  int hi = 0;
  long long n_cols = 0;
  if (!(in >> lo >> hi >> n_cols)) {
    throw FormatError("roll text: missing 'pitch_lo pitch_hi n_cols' header");
  }
  if (lo < 0 || hi > 127 || lo > hi || n_cols < 1) {
    throw FormatError("roll text: invalid header values");
  }
  PianoRoll roll(PitchBand{lo, hi}, static_cast<std::size_t>(n_cols));
  std::string line;
  for (std::size_t r = 0; r < roll.n_pitches(); ++r) {
    if (!(in >> line) || line.size() != roll.n_cols()) {
      throw FormatError("roll text: row " + std::to_string(r) + " missing or of wrong width");
    }
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (line[c] != '0' && line[c] != '1') {
        throw FormatError("roll text: non-binary character in row " + std::to_string(r));
      }
      roll.set(r, c, line[c] == '1');
    }
  }
  return roll;
}

}  // namespace polyvae
