#include "polyvae/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <random>

#include "polyvae/errors.hpp"

namespace polyvae {

std::string synthetic_song_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth-%02d", index);
  return buf;
}

NoteList synthetic_notes(const SyntheticSpec& spec, int index) {
  if (spec.seconds < 1 || spec.period_cols < 1 || spec.voices < 1 || spec.band.size() < spec.voices) {
    throw DataError("invalid synthetic corpus spec");
  }
  std::mt19937_64 rng(spec.seed * 1000003ULL + static_cast<std::uint64_t>(index));
  const int total_cols = spec.seconds * kColsPerSecond;
  // Each voice draws from its own slice of the band, so voices never share a pitch.
  const int slice = spec.band.size() / spec.voices;

  struct MotifNote {
    int col;
    int pitch;
    int len;
  };
  std::vector<MotifNote> motif;
  for (int v = 0; v < spec.voices; ++v) {
    const int lo = spec.band.lo + v * slice;
    std::uniform_int_distribution<int> pitch(lo, lo + slice - 1);
    std::uniform_int_distribution<int> len(1, 3);
    int col = 0;
    while (col < spec.period_cols) {
      const int l = std::min(len(rng), spec.period_cols - col);
      if (rng() % 4 != 0) {
        motif.push_back({col, pitch(rng), l});
      }
      col += l;
    }
  }
  if (motif.empty()) {
    motif.push_back({0, spec.band.lo, 1});
  }

  NoteList notes;
  for (int start = 0; start < total_cols; start += spec.period_cols) {
    for (const auto& m : motif) {
      const int col = start + m.col;
      if (col >= total_cols) continue;
      const int len = std::min(m.len, total_cols - col);
      notes.push_back({m.pitch, static_cast<std::int64_t>(col) * kGridMs, static_cast<std::int64_t>(len) * kGridMs});
    }
  }
  sort_notes(notes);
  return notes;
}

std::vector<Song> synthetic_corpus(int n_songs, const SyntheticSpec& spec) {
  std::vector<Song> songs;
  for (int i = 0; i < n_songs; ++i) {
    auto q = notes_to_roll(synthetic_notes(spec, i), spec.band);
    PianoRoll roll = std::move(q.roll);
    const auto want = static_cast<std::size_t>(spec.seconds) * kColsPerSecond;
    if (roll.n_cols() < want) {
      roll.append(PianoRoll(spec.band, want - roll.n_cols()));
    }
    songs.push_back({synthetic_song_id(i), std::move(roll)});
  }
  return songs;
}

}  // namespace polyvae
