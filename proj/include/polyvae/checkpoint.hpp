#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "polyvae/model.hpp"

namespace polyvae {

inline constexpr std::uint8_t kCheckpointVersion = 0x01;

/// Self-describing model file. Parameters are stored as 32-bit floats, so
/// make_checkpoint rounds them to float precision up front; a loaded
/// checkpoint is then bit-identical to the one that was saved.
struct Checkpoint {
  Model model;
  double beta = 0.5;
  std::optional<double> threshold;
  nlohmann::json metadata = nlohmann::json::object();
};

Checkpoint make_checkpoint(Model model, double beta, std::optional<double> threshold = std::nullopt,
                           nlohmann::json metadata = nlohmann::json::object());

/// Rounds every parameter to the nearest float.
void round_to_float32(ModelParameters& params);

/// Layout: "VAEC", version byte, u32 LE header length, UTF-8 JSON header,
/// then the tensors as little-endian f32 in tensor_layout() order.
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

/// Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace polyvae
