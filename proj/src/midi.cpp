#include "polyvae/midi.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <utility>

#include "polyvae/errors.hpp"

namespace polyvae {

namespace {

constexpr std::uint32_t kDefaultTempo = 500000;  // us per quarter note
constexpr int kPercussionChannel = 9;
// Bounds tick * tempo below 2^60 so the timeline math cannot overflow.
constexpr std::uint64_t kMaxTick = std::uint64_t{1} << 36;
constexpr std::uint16_t kWriteDivision = 480;
constexpr std::uint8_t kWriteVelocity = 80;

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::size_t begin, std::size_t end)
      : bytes_(bytes), pos_(begin), end_(end) {}

  bool done() const { return pos_ >= end_; }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return end_ - pos_; }

  std::uint8_t peek() const {
    need(1);
    return bytes_[pos_];
  }

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }

  std::uint32_t u16() {
    need(2);
    const std::uint32_t v = (std::uint32_t{bytes_[pos_]} << 8) | bytes_[pos_ + 1];
    pos_ += 2;
    return v;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v = (v << 8) | bytes_[pos_++];
    }
    return v;
  }

  std::uint32_t vlq() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7F);
      if (!(b & 0x80)) {
        return v;
      }
    }
    throw MalformedFile("variable-length quantity longer than 4 bytes at offset " + std::to_string(pos_));
  }

  std::uint8_t data_byte() {
    const std::uint8_t b = u8();
    if (b & 0x80) {
      throw MalformedFile("status byte where data byte expected at offset " + std::to_string(pos_ - 1));
    }
    return b;
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  bool tag_is(const char* tag) const { return remaining() >= 4 && std::memcmp(bytes_.data() + pos_, tag, 4) == 0; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) {
      throw MalformedFile("unexpected end of data at offset " + std::to_string(pos_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
  std::size_t end_;
};

struct TickNote {
  int pitch;
  std::uint64_t start;
  std::uint64_t end;
};

struct TempoChange {
  std::uint64_t tick;
  std::uint32_t tempo;
};

struct TrackData {
  std::vector<TickNote> notes;
  std::vector<TempoChange> tempos;
  std::size_t unterminated = 0;
};

TrackData parse_track(ByteReader in) {
  TrackData track;
  std::map<std::pair<int, int>, std::deque<std::uint64_t>> open;
  std::uint64_t tick = 0;
  std::uint8_t running = 0;

  auto close_note = [&](int channel, int pitch) {
    auto it = open.find({channel, pitch});
    if (it == open.end() || it->second.empty()) {
      return;
    }
    track.notes.push_back({pitch, it->second.front(), tick});
    it->second.pop_front();
  };

  bool ended = false;
  while (!in.done() && !ended) {
    tick += in.vlq();
    if (tick > kMaxTick) {
      throw MalformedFile("track timeline exceeds " + std::to_string(kMaxTick) + " ticks");
    }
    std::uint8_t status = in.peek();
    if (status & 0x80) {
      in.u8();
    } else if (running == 0) {
      throw MalformedFile("data byte without running status at offset " + std::to_string(in.pos()));
    } else {
      status = running;
    }

    if (status == 0xFF) {
      running = 0;
      const std::uint8_t type = in.data_byte();
      const std::uint32_t len = in.vlq();
      auto payload = in.take(len);
      if (type == 0x51) {
        if (len != 3) {
          throw MalformedFile("tempo meta event with length " + std::to_string(len));
        }
        const std::uint32_t tempo = (std::uint32_t{payload[0]} << 16) | (std::uint32_t{payload[1]} << 8) | payload[2];
        if (tempo == 0) {
          throw MalformedFile("zero tempo");
        }
        track.tempos.push_back({tick, tempo});
      } else if (type == 0x2F) {
        ended = true;
      }
      continue;
    }
    if (status == 0xF0 || status == 0xF7) {
      running = 0;
      in.take(in.vlq());
      continue;
    }
    if (status >= 0xF0) {
      throw MalformedFile("unexpected system message 0x" + std::to_string(status) + " in track");
    }

    running = status;
    const int kind = status & 0xF0;
    const int channel = status & 0x0F;
    const std::uint8_t d1 = in.data_byte();
    const bool two_data = kind != 0xC0 && kind != 0xD0;
    const std::uint8_t d2 = two_data ? in.data_byte() : 0;
    if (channel == kPercussionChannel) {
      continue;
    }
    if (kind == 0x90 && d2 > 0) {
      open[{channel, d1}].push_back(tick);
    } else if (kind == 0x80 || kind == 0x90) {
      close_note(channel, d1);
    }
  }

  for (auto& [key, starts] : open) {
    for (auto start : starts) {
      track.notes.push_back({key.second, start, tick});
      ++track.unterminated;
    }
  }
  return track;
}

// Converts absolute ticks to milliseconds. Metrical time is exact integer
// arithmetic in units of us * division.
class TickClock {
 public:
  TickClock(std::uint16_t division, std::vector<TempoChange> tempos) : division_(division) {
    if (division & 0x8000) {
      const int fps = -static_cast<std::int8_t>(division >> 8);
      const int ticks_per_frame = division & 0xFF;
      if (fps <= 0 || ticks_per_frame == 0) {
        throw MalformedFile("invalid SMPTE division");
      }
      smpte_ticks_per_second_ = (fps == 29 ? 29.97 : fps) * ticks_per_frame;
      return;
    }
    if (division == 0) {
      throw MalformedFile("division of zero ticks per quarter");
    }
    std::stable_sort(tempos.begin(), tempos.end(),
                     [](const TempoChange& a, const TempoChange& b) { return a.tick < b.tick; });
    segments_.push_back({0, kDefaultTempo, 0});
    for (const auto& t : tempos) {
      const Segment& last = segments_.back();
      const auto at = last.scaled_us + static_cast<std::int64_t>(t.tick - last.tick) * last.tempo;
      if (t.tick == last.tick) {
        segments_.back().tempo = t.tempo;
      } else {
        segments_.push_back({t.tick, t.tempo, at});
      }
    }
  }

  std::int64_t to_ms(std::uint64_t tick) const {
    if (smpte_ticks_per_second_ > 0) {
      return std::llround(static_cast<double>(tick) * 1000.0 / smpte_ticks_per_second_);
    }
    auto it = std::upper_bound(segments_.begin(), segments_.end(), tick,
                               [](std::uint64_t t, const Segment& s) { return t < s.tick; });
    const Segment& seg = *std::prev(it);
    const std::int64_t scaled = seg.scaled_us + static_cast<std::int64_t>(tick - seg.tick) * seg.tempo;
    const std::int64_t denom = static_cast<std::int64_t>(division_) * 1000;
    return (scaled + denom / 2) / denom;
  }

 private:
  struct Segment {
    std::uint64_t tick;
    std::uint32_t tempo;
    std::int64_t scaled_us;
  };

  std::uint16_t division_;
  std::vector<Segment> segments_;
  double smpte_ticks_per_second_ = 0;
};

void put_u16(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) {
    out.push_back(static_cast<std::uint8_t>(v >> shift));
  }
}

void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t buf[5];
  int n = 0;
  buf[n++] = v & 0x7F;
  while (v >>= 7) {
    buf[n++] = static_cast<std::uint8_t>((v & 0x7F) | 0x80);
  }
  while (n > 0) {
    out.push_back(buf[--n]);
  }
}

}  // namespace

MidiFile parse_midi(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes, 0, bytes.size());
  if (!in.tag_is("MThd")) {
    throw MalformedFile("missing MThd header");
  }
  in.take(4);
  const std::uint32_t header_len = in.u32();
  if (header_len < 6) {
    throw MalformedFile("MThd chunk shorter than 6 bytes");
  }
  MidiFile file;
  file.format = static_cast<int>(in.u16());
  const std::uint32_t ntracks = in.u16();
  const auto division = static_cast<std::uint16_t>(in.u16());
  in.take(header_len - 6);
  if (file.format > 1) {
    throw MalformedFile("unsupported SMF format " + std::to_string(file.format));
  }
  if (ntracks == 0) {
    throw MalformedFile("file declares no tracks");
  }

  std::vector<TrackData> tracks;
  while (tracks.size() < ntracks) {
    if (in.remaining() < 8) {
      throw MalformedFile("expected " + std::to_string(ntracks) + " tracks, found " + std::to_string(tracks.size()));
    }
    const bool is_track = in.tag_is("MTrk");
    in.take(4);
    const std::uint32_t len = in.u32();
    if (in.remaining() < len) {
      throw MalformedFile("chunk length " + std::to_string(len) + " runs past end of file");
    }
    if (is_track) {
      tracks.push_back(parse_track(ByteReader(bytes, in.pos(), in.pos() + len)));
    }
    in.take(len);
  }
  file.track_count = static_cast<int>(tracks.size());

  std::vector<TempoChange> tempos;
  for (const auto& t : tracks) {
    tempos.insert(tempos.end(), t.tempos.begin(), t.tempos.end());
  }
  const TickClock clock(division, std::move(tempos));
  for (const auto& t : tracks) {
    file.unterminated_notes += t.unterminated;
    for (const auto& n : t.notes) {
      const std::int64_t onset = clock.to_ms(n.start);
      const std::int64_t end = clock.to_ms(n.end);
      if (end <= onset) {
        ++file.zero_length_notes;
        continue;
      }
      file.notes.push_back({n.pitch, onset, end - onset});
    }
  }
  sort_notes(file.notes);
  return file;
}

std::vector<std::uint8_t> write_midi(const NoteList& notes) {
  struct Event {
    std::uint32_t tick;
    bool on;
    std::uint8_t pitch;
  };
  auto to_tick = [](std::int64_t ms) {
    // 480 ticks per 500 ms quarter.
    return static_cast<std::uint32_t>((ms * kWriteDivision * 2 + 500) / 1000);
  };
  std::vector<Event> events;
  events.reserve(notes.size() * 2);
  for (const auto& n : notes) {
    if (n.pitch < 0 || n.pitch > 127) {
      throw DataError("pitch " + std::to_string(n.pitch) + " outside MIDI range");
    }
    const auto on = to_tick(n.onset_ms);
    const auto off = std::max(on + 1, to_tick(n.end_ms()));
    events.push_back({on, true, static_cast<std::uint8_t>(n.pitch)});
    events.push_back({off, false, static_cast<std::uint8_t>(n.pitch)});
  }
  std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.tick != b.tick) return a.tick < b.tick;
    return !a.on && b.on;
  });

  std::vector<std::uint8_t> track = {0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20};
  std::uint32_t tick = 0;
  for (const auto& e : events) {
    put_vlq(track, e.tick - tick);
    tick = e.tick;
    track.push_back(e.on ? 0x90 : 0x80);
    track.push_back(e.pitch);
    track.push_back(e.on ? kWriteVelocity : 0);
  }
  track.insert(track.end(), {0x00, 0xFF, 0x2F, 0x00});

  std::vector<std::uint8_t> out = {'M', 'T', 'h', 'd'};
  put_u32(out, 6);
  put_u16(out, 0);
  put_u16(out, 1);
  put_u16(out, kWriteDivision);
  out.insert(out.end(), {'M', 'T', 'r', 'k'});
  put_u32(out, static_cast<std::uint32_t>(track.size()));
  out.insert(out.end(), track.begin(), track.end());
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) {
    throw IoError("read failed for " + path.string());
  }
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("write failed for " + path.string());
  }
}

}  // namespace polyvae
