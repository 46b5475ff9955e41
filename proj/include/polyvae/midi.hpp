#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "polyvae/pianoroll.hpp"

namespace polyvae {

struct MidiFile {
  int format = 0;
  int track_count = 0;
  NoteList notes;
  /// Note-ons still open when their track ended; they were closed there.
  std::size_t unterminated_notes = 0;
  /// Notes shorter than 1 ms after tick conversion; dropped.
  std::size_t zero_length_notes = 0;
};

/// Decodes a format 0 or 1 Standard MIDI File. All tracks are merged onto one
/// millisecond timeline using the file's tempo map. Note-on with velocity 0
/// counts as note-off, running status is honoured and channel 10 (percussion)
/// is ignored. Throws MalformedFile on anything that does not decode.
MidiFile parse_midi(std::span<const std::uint8_t> bytes);

/// Encodes notes as a format 0 file: division 480, tempo 500000 us/quarter,
/// channel 1, velocity 80.
std::vector<std::uint8_t> write_midi(const NoteList& notes);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace polyvae
