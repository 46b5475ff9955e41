#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>

#include "json.hpp"
#include "polyvae/checkpoint.hpp"
#include "polyvae/windows.hpp"

namespace polyvae {

/// Window as a list of [pitch_row, start, len] runs of 1s.
nlohmann::json encode_runs(std::span<const std::uint8_t> flat, std::size_t rows, std::size_t width);
/// Throws FormatError on malformed runs and DimensionMismatch on runs that
/// fall outside rows x width.
BinaryVector decode_runs(const nlohmann::json& runs, std::size_t rows, std::size_t width);

struct ServiceOptions {
  /// Served at / when set.
  std::optional<std::filesystem::path> static_dir;
  /// Oldest sessions are dropped beyond this count.
  std::size_t max_sessions = 256;
};

struct ApiResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";

  nlohmann::json json() const { return nlohmann::json::parse(body); }
};

/// JSON API over one checkpoint. The model is never modified after
/// construction; sessions are independent.
class Service {
 public:
  explicit Service(Checkpoint checkpoint, ServiceOptions options = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Routes one request to the matching endpoint. `body` is the raw request
  /// body; for POST /api/midi it is the SMF bytes.
  ApiResponse handle(const std::string& method, const std::string& path, const std::string& body);

  /// Binds to host:port (0 picks a free port) and returns the bound port, or
  /// -1 on failure.
  int bind(const std::string& host, int port);
  /// Blocks serving requests until stop().
  bool run();
  void stop();
  /// Waits until the server accepts connections.
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace polyvae
