#include "polyvae/checkpoint.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <string>

#include "polyvae/errors.hpp"
#include "polyvae/midi.hpp"

namespace polyvae {

namespace {

constexpr char kMagic[4] = {'V', 'A', 'E', 'C'};
constexpr const char* kFlattenOrder = "pitch-major";

void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

std::uint32_t get_u32_le(std::span<const std::uint8_t> bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) {
    v = (v << 8) | bytes[at + static_cast<std::size_t>(i)];
  }
  return v;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

template <typename T>
T required(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) {
    throw FormatError(std::string("checkpoint header is missing '") + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header field '") + key + "': " + e.what());
  }
}

}  // namespace

void round_to_float32(ModelParameters& params) {
  for (auto& v : params.flat()) {
    v = static_cast<double>(static_cast<float>(v));
  }
}

Checkpoint make_checkpoint(Model model, double beta, std::optional<double> threshold, nlohmann::json metadata) {
  model.validate();
  round_to_float32(model.params);
  if (!metadata.is_object()) {
    metadata = nlohmann::json::object();
  }
  if (!metadata.contains("created_utc")) {
    metadata["created_utc"] = utc_timestamp();
  }
  return {std::move(model), beta, threshold, std::move(metadata)};
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  ckpt.model.validate();
  const auto& dims = ckpt.model.params.dims();
  nlohmann::json header = {
      {"dims", {{"input", dims.input}, {"hidden", dims.hidden}, {"latent", dims.latent}}},
      {"window",
       {{"seconds", ckpt.model.window.window_seconds},
        {"grid_ms", ckpt.model.window.grid_ms},
        {"stride_cols", ckpt.model.window.stride_cols}}},
      {"pitch_band", {{"lo", ckpt.model.band.lo}, {"hi", ckpt.model.band.hi}}},
      {"beta", ckpt.beta},
      {"threshold", ckpt.threshold ? nlohmann::json(*ckpt.threshold) : nlohmann::json(nullptr)},
      {"flatten_order", kFlattenOrder},
      {"dtype", "f32le"},
      {"metadata", ckpt.metadata},
  };
  nlohmann::json order = nlohmann::json::array();
  for (const auto& t : tensor_layout(dims)) {
    order.push_back(std::string(t.name));
  }
  header["tensor_order"] = order;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(kCheckpointVersion);
  put_u32_le(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + ckpt.model.params.flat().size() * 4);
  for (double v : ckpt.model.params.flat()) {
    put_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 9 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a checkpoint file (bad magic)");
  }
  if (bytes[4] != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(bytes[4]));
  }
  const std::size_t header_len = get_u32_le(bytes, 5);
  if (bytes.size() - 9 < header_len) {
    throw FormatError("checkpoint header truncated");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 9, bytes.begin() + 9 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) {
    throw FormatError("checkpoint header is not a JSON object");
  }
  if (header.value("flatten_order", std::string()) != kFlattenOrder) {
    throw FormatError("unsupported flatten order");
  }

  Checkpoint ckpt;
  const auto dims_j = required<nlohmann::json>(header, "dims");
  const ModelDims dims{required<std::size_t>(dims_j, "input"), required<std::size_t>(dims_j, "hidden"),
                       required<std::size_t>(dims_j, "latent")};
  const auto window_j = required<nlohmann::json>(header, "window");
  ckpt.model.window.window_seconds = required<int>(window_j, "seconds");
  ckpt.model.window.grid_ms = required<int>(window_j, "grid_ms");
  ckpt.model.window.stride_cols = required<int>(window_j, "stride_cols");
  const auto band_j = required<nlohmann::json>(header, "pitch_band");
  ckpt.model.band = {required<int>(band_j, "lo"), required<int>(band_j, "hi")};
  ckpt.beta = required<double>(header, "beta");
  if (header.contains("threshold") && !header["threshold"].is_null()) {
    ckpt.threshold = required<double>(header, "threshold");
  }
  if (header.contains("metadata") && header["metadata"].is_object()) {
    ckpt.metadata = header["metadata"];
  }

  try {
    dims.validate();
    ckpt.model.window.validate();
    if (ckpt.model.band.lo < 0 || ckpt.model.band.hi > 127 || ckpt.model.band.lo > ckpt.model.band.hi) {
      throw FormatError("invalid pitch band");
    }
  } catch (const DataError& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  if (dims.input != ckpt.model.input_dim()) {
    throw FormatError("header input dimension " + std::to_string(dims.input) + " disagrees with band x window " +
                      std::to_string(ckpt.model.input_dim()));
  }
  const std::size_t payload = bytes.size() - 9 - header_len;
  const std::size_t count = dims.param_count();
  if (payload != count * 4) {
    throw FormatError("payload holds " + std::to_string(payload) + " bytes, header declares " +
                      std::to_string(count) + " f32 values");
  }
  ckpt.model.params = ModelParameters(dims);
  auto flat = ckpt.model.params.flat();
  const std::size_t base = 9 + header_len;
  for (std::size_t i = 0; i < count; ++i) {
    const float v = std::bit_cast<float>(get_u32_le(bytes, base + 4 * i));
    if (!std::isfinite(v)) {
      throw FormatError("non-finite parameter at index " + std::to_string(i));
    }
    flat[i] = static_cast<double>(v);
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = serialize_checkpoint(checkpoint);
  auto tmp = path;
  tmp += ".tmp";
  write_file_bytes(tmp, bytes);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move checkpoint into place at " + path.string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file_bytes(path)); }

}  // namespace polyvae
