#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "polyvae/pianoroll.hpp"
#include "polyvae/trainer.hpp"

namespace polyvae {

/// Songs built from a short motif repeated for the whole duration. Useful as
/// a corpus a small model can memorize.
struct SyntheticSpec {
  PitchBand band{48, 71};
  int seconds = 20;
  int period_cols = 8;
  int voices = 3;
  std::uint64_t seed = 0;
};

/// Notes of song `index`; motif choice depends on (spec.seed, index).
NoteList synthetic_notes(const SyntheticSpec& spec, int index);

/// `n_songs` songs with ids "synth-00", "synth-01", ...
std::vector<Song> synthetic_corpus(int n_songs, const SyntheticSpec& spec);

std::string synthetic_song_id(int index);

}  // namespace polyvae
