#include "polyvae/service.hpp"

#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <regex>

#include "httplib.h"
#include "polyvae/composer.hpp"
#include "polyvae/errors.hpp"
#include "polyvae/eval.hpp"
#include "polyvae/midi.hpp"

namespace polyvae {

using nlohmann::json;

namespace {

class HttpError : public std::runtime_error {
 public:
  HttpError(int status, const std::string& what) : std::runtime_error(what), status(status) {}
  int status;
};

constexpr const char* kPlaceholderPage =
    "<!doctype html><html><head><meta charset=\"utf-8\"><title>polyvae</title></head><body>"
    "<h1>polyvae service</h1><p>No UI assets are installed. JSON endpoints live under <code>/api/</code>:"
    " <code>GET /api/model</code>, <code>POST /api/encode</code>, <code>POST /api/decode</code>,"
    " <code>POST /api/continue</code>, <code>POST /api/session</code>,"
    " <code>POST /api/session/{id}/step</code>, <code>GET /api/session/{id}/export</code>,"
    " <code>POST /api/midi</code>.</p></body></html>";

std::vector<double> real_vector(const json& j, const char* field) {
  if (!j.is_array()) {
    throw FormatError(std::string("'") + field + "' must be an array of numbers");
  }
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) {
      throw FormatError(std::string("'") + field + "' must be an array of numbers");
    }
    const double d = v.get<double>();
    if (!std::isfinite(d)) {
      throw FormatError(std::string("'") + field + "' holds a non-finite value");
    }
    out.push_back(d);
  }
  return out;
}

json latent_json(const LatentCode& code) { return {{"mu", code.mu}, {"logvar", code.logvar}}; }

ApiResponse json_response(int status, const json& body) { return {status, body.dump(), "application/json"}; }

ApiResponse error_response(int status, const std::string& message) {
  return json_response(status, {{"error", message}, {"status", status}});
}

}  // namespace

json encode_runs(std::span<const std::uint8_t> flat, std::size_t rows, std::size_t width) {
  json runs = json::array();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t t = 0;
    while (t < width) {
      if (!flat[r * width + t]) {
        ++t;
        continue;
      }
      const std::size_t start = t;
      while (t < width && flat[r * width + t]) ++t;
      runs.push_back({r, start, t - start});
    }
  }
  return runs;
}

BinaryVector decode_runs(const json& runs, std::size_t rows, std::size_t width) {
  if (!runs.is_array()) {
    throw FormatError("window must be an array of [pitch_row, start, len] runs");
  }
  BinaryVector out(rows * width, 0);
  for (const auto& run : runs) {
    if (!run.is_array() || run.size() != 3 || !run[0].is_number_integer() || !run[1].is_number_integer() ||
        !run[2].is_number_integer()) {
      throw FormatError("each run must be three integers [pitch_row, start, len]");
    }
    const auto row = run[0].get<std::int64_t>();
    const auto start = run[1].get<std::int64_t>();
    const auto len = run[2].get<std::int64_t>();
    if (row < 0 || start < 0 || len < 1) {
      throw FormatError("run entries must be non-negative with len >= 1");
    }
    if (static_cast<std::uint64_t>(row) >= rows || static_cast<std::uint64_t>(start) + static_cast<std::uint64_t>(len) > width) {
      throw DimensionMismatch("run [" + std::to_string(row) + ", " + std::to_string(start) + ", " +
                              std::to_string(len) + "] falls outside " + std::to_string(rows) + " x " +
                              std::to_string(width));
    }
    for (std::int64_t t = start; t < start + len; ++t) {
      out[static_cast<std::size_t>(row) * width + static_cast<std::size_t>(t)] = 1;
    }
  }
  return out;
}

struct Session {
  std::mutex mutex;
  CompositionState state;
  double threshold = 0.5;
  std::vector<std::vector<double>> deltas;
};

struct Service::Impl {
  Checkpoint ckpt;
  ServiceOptions options;
  double default_threshold = 0.5;
  std::size_t rows = 0;
  std::size_t width = 0;
  std::size_t stride = 0;

  std::mutex sessions_mutex;
  std::map<std::uint64_t, std::shared_ptr<Session>> sessions;
  std::uint64_t next_session = 1;

  httplib::Server server;

  json window_json(std::span<const std::uint8_t> flat) const { return encode_runs(flat, rows, width); }
  json cols_json(const PianoRoll& cols) const { return encode_runs(cols.cells(), rows, cols.n_cols()); }

  BinaryVector window_from(const json& req, const char* field) const {
    if (!req.contains(field)) {
      throw FormatError(std::string("missing '") + field + "'");
    }
    return decode_runs(req.at(field), rows, width);
  }

  double threshold_from(const json& req, double fallback) const {
    if (!req.contains("threshold") || req["threshold"].is_null()) return fallback;
    if (!req["threshold"].is_number()) throw FormatError("'threshold' must be a number");
    const double t = req["threshold"].get<double>();
    if (!(t >= 0 && t <= 1)) throw FormatError("'threshold' must lie in [0, 1]");
    return t;
  }

  std::vector<double> delta_from(const json& req) const {
    if (!req.contains("latent_delta") || req["latent_delta"].is_null()) return {};
    auto delta = real_vector(req["latent_delta"], "latent_delta");
    if (delta.size() != ckpt.model.latent_dim()) {
      throw DimensionMismatch("latent_delta has " + std::to_string(delta.size()) + " entries, latent size is " +
                              std::to_string(ckpt.model.latent_dim()));
    }
    return delta;
  }

  std::shared_ptr<Session> find_session(const std::string& id) {
    std::uint64_t key = 0;
    try {
      std::size_t used = 0;
      key = std::stoull(id, &used);
      if (used != id.size()) throw std::invalid_argument(id);
    } catch (const std::exception&) {
      throw HttpError(404, "unknown session '" + id + "'");
    }
    std::lock_guard lock(sessions_mutex);
    auto it = sessions.find(key);
    if (it == sessions.end()) {
      throw HttpError(404, "unknown session '" + id + "'");
    }
    return it->second;
  }

  json model_info() const {
    const auto& d = ckpt.model.params.dims();
    return {{"dims", {{"input", d.input}, {"hidden", d.hidden}, {"latent", d.latent}}},
            {"window_seconds", ckpt.model.window.window_seconds},
            {"window_cols", width},
            {"stride_cols", stride},
            {"grid_ms", ckpt.model.window.grid_ms},
            {"pitch_band", {{"lo", ckpt.model.band.lo}, {"hi", ckpt.model.band.hi}}},
            {"threshold", default_threshold},
            {"beta", ckpt.beta},
            {"flatten_order", "pitch-major"},
            {"window_encoding", "runs of [pitch_row, start, len]"}};
  }

  json encode_endpoint(const json& req) const {
    const auto window = window_from(req, "window");
    return latent_json(encode(ckpt.model.params, window));
  }

  json decode_endpoint(const json& req) const {
    if (!req.contains("z")) throw FormatError("missing 'z'");
    const auto z = real_vector(req["z"], "z");
    if (z.size() != ckpt.model.latent_dim()) {
      throw DimensionMismatch("z has " + std::to_string(z.size()) + " entries, latent size is " +
                              std::to_string(ckpt.model.latent_dim()));
    }
    const auto probs = decode(ckpt.model.params, z);
    json out = {{"window", window_json(apply_threshold(probs, threshold_from(req, default_threshold)))}};
    if (req.value("return_probs", false)) {
      out["probs"] = probs;
    }
    return out;
  }

  json step_session(Session& s, const std::vector<double>& delta, double threshold) {
    const auto r = step_composition(ckpt.model, s.state, threshold, delta);
    s.deltas.push_back(delta);
    return {{"next_window", window_json(r.next_window)},
            {"new_cols", cols_json(r.new_cols)},
            {"new_cols_width", r.new_cols.n_cols()},
            {"latent", latent_json(r.latent)},
            {"step", s.state.step_count}};
  }

  json continue_endpoint(const json& req) {
    const auto delta = delta_from(req);
    if (req.contains("session") && !req["session"].is_null()) {
      const auto& sid = req["session"];
      if (!sid.is_string() && !sid.is_number_unsigned()) throw FormatError("'session' must be an id");
      auto session = find_session(sid.is_string() ? sid.get<std::string>() : std::to_string(sid.get<std::uint64_t>()));
      std::lock_guard lock(session->mutex);
      return step_session(*session, delta, threshold_from(req, session->threshold));
    }
    const auto window = window_from(req, "window");
    const auto r = continue_window(ckpt.model, window, threshold_from(req, default_threshold), delta);
    return {{"next_window", window_json(r.next_window)},
            {"new_cols", cols_json(r.new_cols)},
            {"new_cols_width", r.new_cols.n_cols()},
            {"latent", latent_json(r.latent)}};
  }

  json create_session(const json& req) {
    const double threshold = threshold_from(req, default_threshold);
    BinaryVector seed;
    if (req.contains("window") && !req["window"].is_null()) {
      seed = window_from(req, "window");
    } else {
      std::uint64_t seed_value = 0;
      if (req.contains("seed") && !req["seed"].is_null()) {
        if (!req["seed"].is_number_unsigned()) throw FormatError("'seed' must be a non-negative integer");
        seed_value = req["seed"].get<std::uint64_t>();
      }
      seed = random_seed_window(ckpt.model, seed_value, threshold);
    }
    auto session = std::make_shared<Session>();
    session->state = start_composition(ckpt.model, seed);
    session->threshold = threshold;
    std::uint64_t id = 0;
    {
      std::lock_guard lock(sessions_mutex);
      id = next_session++;
      sessions.emplace(id, session);
      while (sessions.size() > options.max_sessions) {
        sessions.erase(sessions.begin());
      }
    }
    return {{"id", std::to_string(id)}, {"seed_window", window_json(seed)}, {"threshold", threshold}, {"step", 0}};
  }

  json session_step(const std::string& id, const json& req) {
    auto session = find_session(id);
    const auto delta = delta_from(req);
    std::lock_guard lock(session->mutex);
    if (req.contains("threshold")) {
      session->threshold = threshold_from(req, session->threshold);
    }
    return step_session(*session, delta, session->threshold);
  }

  ApiResponse session_export(const std::string& id) {
    auto session = find_session(id);
    std::vector<std::uint8_t> bytes;
    {
      std::lock_guard lock(session->mutex);
      bytes = write_midi(roll_to_notes(session->state.roll));
    }
    return {200, std::string(bytes.begin(), bytes.end()), "audio/midi"};
  }

  json midi_endpoint(const std::string& body) const {
    const std::vector<std::uint8_t> bytes(body.begin(), body.end());
    const auto file = parse_midi(bytes);
    const auto q = notes_to_roll(file.notes, ckpt.model.band);
    PianoRoll seed = q.roll.columns(0, std::min(width, q.roll.n_cols()));
    if (seed.n_cols() < width) {
      seed.append(PianoRoll(ckpt.model.band, width - seed.n_cols()));
    }
    return {{"roll",
             {{"pitch_lo", q.roll.band().lo},
              {"pitch_hi", q.roll.band().hi},
              {"n_cols", q.roll.n_cols()},
              {"runs", encode_runs(q.roll.cells(), rows, q.roll.n_cols())}}},
            {"dropped_notes", q.dropped_notes},
            {"unterminated_notes", file.unterminated_notes},
            {"seed_window", window_json(flatten_columns(seed, 0, width))}};
  }

  json parse_body(const std::string& body) const {
    if (body.empty()) return json::object();
    json j;
    try {
      j = json::parse(body);
    } catch (const json::parse_error& e) {
      throw FormatError(std::string("request body is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw FormatError("request body must be a JSON object");
    return j;
  }

  ApiResponse route(const std::string& method, const std::string& path, const std::string& body) {
    static const std::regex step_re(R"(^/api/session/([^/]+)/step$)");
    static const std::regex export_re(R"(^/api/session/([^/]+)/export$)");
    std::smatch m;
    if (method == "GET") {
      if (path == "/api/model") return json_response(200, model_info());
      if (std::regex_match(path, m, export_re)) return session_export(m[1]);
    } else if (method == "POST") {
      if (path == "/api/midi") return json_response(200, midi_endpoint(body));
      const json req = parse_body(body);
      if (path == "/api/encode") return json_response(200, encode_endpoint(req));
      if (path == "/api/decode") return json_response(200, decode_endpoint(req));
      if (path == "/api/continue") return json_response(200, continue_endpoint(req));
      if (path == "/api/session") return json_response(200, create_session(req));
      if (std::regex_match(path, m, step_re)) return json_response(200, session_step(m[1], req));
    }
    throw HttpError(404, "no endpoint " + method + " " + path);
  }

  ApiResponse handle(const std::string& method, const std::string& path, const std::string& body) {
    try {
      return route(method, path, body);
    } catch (const HttpError& e) {
      return error_response(e.status, e.what());
    } catch (const DimensionMismatch& e) {
      return error_response(422, e.what());
    } catch (const EmptyAfterQuantization& e) {
      return error_response(422, e.what());
    } catch (const IndexOutOfRange& e) {
      return error_response(422, e.what());
    } catch (const DataError& e) {
      return error_response(400, e.what());
    } catch (const json::exception& e) {
      return error_response(400, e.what());
    } catch (const std::exception& e) {
      return error_response(500, e.what());
    }
  }
};

Service::Service(Checkpoint checkpoint, ServiceOptions options) : impl_(std::make_unique<Impl>()) {
  checkpoint.model.validate();
  impl_->ckpt = std::move(checkpoint);
  impl_->options = std::move(options);
  impl_->default_threshold = impl_->ckpt.threshold.value_or(0.5);
  impl_->rows = static_cast<std::size_t>(impl_->ckpt.model.band.size());
  impl_->width = impl_->ckpt.model.window.width_cols();
  impl_->stride = impl_->ckpt.model.window.stride();

  auto& svr = impl_->server;
  auto forward = [this](const httplib::Request& req, httplib::Response& res) {
    std::string body = req.body;
    if (req.path == "/api/midi" && req.is_multipart_form_data()) {
      body = req.has_file("file") ? req.get_file_value("file").content : std::string();
    }
    const auto r = impl_->handle(req.method, req.path, body);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  svr.Get(R"(/api/.*)", forward);
  svr.Post(R"(/api/.*)", forward);
  if (impl_->options.static_dir) {
    if (!svr.set_mount_point("/", impl_->options.static_dir->string())) {
      throw IoError("static directory not found: " + impl_->options.static_dir->string());
    }
  } else {
    svr.Get("/", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(kPlaceholderPage, "text/html");
    });
  }
  svr.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    res.status = 500;
    res.set_content(json{{"error", what}, {"status", 500}}.dump(), "application/json");
  });
}

Service::~Service() { stop(); }

ApiResponse Service::handle(const std::string& method, const std::string& path, const std::string& body) {
  return impl_->handle(method, path, body);
}

int Service::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool Service::run() { return impl_->server.listen_after_bind(); }

void Service::stop() {
  if (impl_) impl_->server.stop();
}

void Service::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace polyvae
