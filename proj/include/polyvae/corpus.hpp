#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "polyvae/pianoroll.hpp"
#include "polyvae/trainer.hpp"

namespace polyvae {

struct IngestEntry {
  std::string id;
  std::filesystem::path source;
  std::size_t n_cols = 0;
  std::size_t dropped_notes = 0;
  std::size_t unterminated_notes = 0;
  std::size_t zero_length_notes = 0;
};

struct IngestFailure {
  std::filesystem::path source;
  std::string reason;
};

struct IngestResult {
  std::vector<Song> songs;
  std::vector<IngestEntry> entries;
  std::vector<IngestFailure> failures;
};

/// Parses and quantizes every .mid/.midi file in `dir` (sorted by name; id =
/// file stem). Files that fail are listed in `failures`.
IngestResult ingest_directory(const std::filesystem::path& dir, PitchBand band);

/// CSV: song_id,n_cols,dropped_notes,unterminated_notes,zero_length_notes,source
void write_manifest(std::ostream& out, const std::vector<IngestEntry>& entries);
std::vector<IngestEntry> read_manifest(std::istream& in);

/// Writes <dir>/<id>.roll for every song and <dir>/manifest.csv.
void write_ingested(const std::filesystem::path& dir, const IngestResult& result);

/// Loads an ingested directory (manifest.csv plus .roll files) or, when no
/// manifest exists, ingests the MIDI files in place. Throws DataError if no
/// song loads, DimensionMismatch if stored rolls use another pitch band.
std::vector<Song> load_corpus(const std::filesystem::path& dir, PitchBand band);

}  // namespace polyvae
