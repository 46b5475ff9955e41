#include "polyvae/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "polyvae/errors.hpp"
#include "polyvae/midi.hpp"

namespace polyvae {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifestHeader = "song_id,n_cols,dropped_notes,unterminated_notes,zero_length_notes,source";

bool is_midi(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".mid" || ext == ".midi";
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

}  // namespace

IngestResult ingest_directory(const fs::path& dir, PitchBand band) {
  if (!fs::is_directory(dir)) {
    throw IoError("not a directory: " + dir.string());
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_midi(e.path())) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  IngestResult result;
  for (const auto& file : files) {
    try {
      const auto midi = parse_midi(read_file_bytes(file));
      auto q = notes_to_roll(midi.notes, band);
      IngestEntry entry{file.stem().string(), file, q.roll.n_cols(), q.dropped_notes, midi.unterminated_notes,
                        midi.zero_length_notes};
      result.songs.push_back({entry.id, std::move(q.roll)});
      result.entries.push_back(std::move(entry));
    } catch (const DataError& e) {
      result.failures.push_back({file, e.what()});
    }
  }
  return result;
}

void write_manifest(std::ostream& out, const std::vector<IngestEntry>& entries) {
  out << kManifestHeader << '\n';
  for (const auto& e : entries) {
    out << e.id << ',' << e.n_cols << ',' << e.dropped_notes << ',' << e.unterminated_notes << ','
        << e.zero_length_notes << ',' << e.source.filename().string() << '\n';
  }
}

std::vector<IngestEntry> read_manifest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) {
    throw FormatError("manifest header missing");
  }
  std::vector<IngestEntry> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 6) throw FormatError("manifest row has " + std::to_string(f.size()) + " fields: " + line);
    try {
      out.push_back({f[0], f[5], std::stoul(f[1]), std::stoul(f[2]), std::stoul(f[3]), std::stoul(f[4])});
    } catch (const std::exception&) {
      throw FormatError("manifest row is not numeric: " + line);
    }
  }
  return out;
}

void write_ingested(const fs::path& dir, const IngestResult& result) {
  fs::create_directories(dir);
  for (const auto& song : result.songs) {
    std::ofstream out(dir / (song.id + ".roll"));
    if (!out) throw IoError("cannot write " + (dir / (song.id + ".roll")).string());
    write_roll_text(out, song.roll);
  }
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.csv").string());
  write_manifest(manifest, result.entries);
}

std::vector<Song> load_corpus(const fs::path& dir, PitchBand band) {
  const auto manifest_path = dir / "manifest.csv";
  std::vector<Song> songs;
  if (fs::exists(manifest_path)) {
    std::ifstream manifest(manifest_path);
    for (const auto& entry : read_manifest(manifest)) {
      const auto path = dir / (entry.id + ".roll");
      std::ifstream in(path);
      if (!in) throw IoError("cannot read " + path.string());
      auto roll = read_roll_text(in);
      if (!(roll.band() == band)) {
        throw DimensionMismatch(path.string() + " uses pitch band " + std::to_string(roll.band().lo) + "-" +
                                std::to_string(roll.band().hi) + ", expected " + std::to_string(band.lo) + "-" +
                                std::to_string(band.hi));
      }
      songs.push_back({entry.id, std::move(roll)});
    }
  } else {
    songs = ingest_directory(dir, band).songs;
  }
  if (songs.empty()) {
    throw DataError("no songs found in " + dir.string());
  }
  return songs;
}

}  // namespace polyvae
