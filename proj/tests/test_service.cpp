#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "polyvae/errors.hpp"
#include "polyvae/midi.hpp"
#include "polyvae/service.hpp"

using namespace polyvae;
using nlohmann::json;

namespace {

Checkpoint small_checkpoint() {
  Model m;
  m.band = {60, 67};
  m.window = WindowSpec::for_seconds(2);
  m.params = init_params(dims_for(m.band, m.window, 16, 4), 21);
  return make_checkpoint(std::move(m), 0.5, 0.45);
}

void check_window(const json& runs, std::size_t rows, std::size_t width) {
  CHECK_NOTHROW(decode_runs(runs, rows, width));
}

}  // namespace

TEST_CASE("run-length window encoding round-trips") {
  const BinaryVector flat = {1, 1, 0, 1, 0, 0, 0, 0, 1, 1, 1, 1};
  const auto runs = encode_runs(flat, 3, 4);
  CHECK(runs == json::parse("[[0,0,2],[0,3,1],[2,0,4]]"));
  CHECK(decode_runs(runs, 3, 4) == flat);
  CHECK_THROWS_AS(decode_runs(json::parse("[[3,0,1]]"), 3, 4), DimensionMismatch);
  CHECK_THROWS_AS(decode_runs(json::parse("[[0,3,2]]"), 3, 4), DimensionMismatch);
  CHECK_THROWS_AS(decode_runs(json::parse("[[0,1]]"), 3, 4), FormatError);
  CHECK_THROWS_AS(decode_runs(json::parse("{}"), 3, 4), FormatError);
  CHECK_THROWS_AS(decode_runs(json::parse("[[0,0,0]]"), 3, 4), FormatError);
}

TEST_CASE("model metadata") {
  Service svc(small_checkpoint());
  const auto r = svc.handle("GET", "/api/model", "");
  REQUIRE(r.status == 200);
  const auto j = r.json();
  CHECK(j["dims"]["input"] == 160);
  CHECK(j["dims"]["latent"] == 4);
  CHECK(j["window_seconds"] == 2);
  CHECK(j["stride_cols"] == 10);
  CHECK(j["pitch_band"]["lo"] == 60);
  CHECK(j["threshold"] == 0.45);
}

TEST_CASE("encode an all-zero window") {
  Service svc(small_checkpoint());
  const auto r = svc.handle("POST", "/api/encode", R"({"window": []})");
  REQUIRE(r.status == 200);
  const auto j = r.json();
  CHECK(j["mu"].size() == 4);
  CHECK(j["logvar"].size() == 4);
}

TEST_CASE("decode returns a binary window and optional probabilities") {
  Service svc(small_checkpoint());
  const auto j = svc.handle("POST", "/api/decode", R"({"z": [0, 0, 0, 0], "return_probs": true})").json();
  CHECK(j["probs"].size() == 160);
  check_window(j["window"], 8, 20);
  CHECK(svc.handle("POST", "/api/decode", R"({"z": [0, 0, 0]})").status == 422);
  CHECK(svc.handle("POST", "/api/decode", R"({"z": "abc"})").status == 400);
}

TEST_CASE("continue is deterministic") {
  Service svc(small_checkpoint());
  const std::string body = R"({"window": [[0,0,5],[3,4,10],[7,0,20]], "threshold": 0.5})";
  const auto a = svc.handle("POST", "/api/continue", body);
  const auto b = svc.handle("POST", "/api/continue", body);
  REQUIRE(a.status == 200);
  CHECK(a.body == b.body);
  const auto j = a.json();
  check_window(j["next_window"], 8, 20);
  check_window(j["new_cols"], 8, 10);
  CHECK(j["latent"]["mu"].size() == 4);
}

TEST_CASE("error statuses") {
  Service svc(small_checkpoint());
  CHECK(svc.handle("POST", "/api/encode", "{not json").status == 400);
  CHECK(svc.handle("POST", "/api/encode", "[1,2]").status == 400);
  CHECK(svc.handle("POST", "/api/encode", R"({"window": [[99,0,1]]})").status == 422);
  CHECK(svc.handle("POST", "/api/continue", R"({"window": [], "latent_delta": [1]})").status == 422);
  CHECK(svc.handle("POST", "/api/continue", R"({"window": [], "threshold": 2})").status == 400);
  CHECK(svc.handle("POST", "/api/session/12345/step", "{}").status == 404);
  CHECK(svc.handle("POST", "/api/session/abc/step", "{}").status == 404);
  CHECK(svc.handle("GET", "/api/session/77/export", "").status == 404);
  CHECK(svc.handle("POST", "/api/continue", R"({"session": "999", "threshold": 0.5})").status == 404);
  CHECK(svc.handle("GET", "/api/nothing", "").status == 404);
  CHECK(svc.handle("POST", "/api/midi", "garbage").status == 400);
}

TEST_CASE("sessions step independently and export SMF") {
  Service svc(small_checkpoint());
  const auto a = svc.handle("POST", "/api/session", R"({"seed": 3})").json();
  const auto b = svc.handle("POST", "/api/session", R"({"seed": 3})").json();
  CHECK(a["id"] != b["id"]);
  CHECK(a["seed_window"] == b["seed_window"]);
  const std::string ida = a["id"];
  const std::string idb = b["id"];
  // Interleave: session a gets a delta, b does not.
  for (int k = 1; k <= 3; ++k) {
    const auto ra = svc.handle("POST", "/api/session/" + ida + "/step", R"({"latent_delta": [3, 0, 0, 0]})").json();
    const auto rb = svc.handle("POST", "/api/session/" + idb + "/step", "{}").json();
    CHECK(ra["step"] == k);
    CHECK(rb["step"] == k);
  }
  // A fresh session without deltas must match b exactly.
  const auto c = svc.handle("POST", "/api/session", R"({"seed": 3})").json();
  const std::string idc = c["id"];
  for (int k = 0; k < 3; ++k) svc.handle("POST", "/api/session/" + idc + "/step", "{}");
  const auto eb = svc.handle("GET", "/api/session/" + idb + "/export", "");
  const auto ec = svc.handle("GET", "/api/session/" + idc + "/export", "");
  CHECK(eb.content_type == "audio/midi");
  CHECK(eb.body == ec.body);
  const std::vector<std::uint8_t> bytes(eb.body.begin(), eb.body.end());
  CHECK_NOTHROW(parse_midi(bytes));
}

TEST_CASE("midi upload returns the quantized roll and a seed window") {
  Service svc(small_checkpoint());
  const auto bytes = write_midi({{60, 0, 500}, {64, 1000, 300}, {90, 0, 100}});
  const auto r = svc.handle("POST", "/api/midi", std::string(bytes.begin(), bytes.end()));
  REQUIRE(r.status == 200);
  const auto j = r.json();
  CHECK(j["dropped_notes"] == 1);
  CHECK(j["roll"]["n_cols"] == 13);
  CHECK(j["roll"]["runs"] == json::parse("[[0,0,5],[4,10,3]]"));
  CHECK(j["seed_window"] == json::parse("[[0,0,5],[4,10,3]]"));
  const auto seeded = svc.handle("POST", "/api/session", json{{"window", j["seed_window"]}}.dump());
  CHECK(seeded.status == 200);
}

TEST_CASE("live server over localhost") {
  Service svc(small_checkpoint());
  const int port = svc.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread server([&] { svc.run(); });
  svc.wait_until_ready();

  httplib::Client cli("127.0.0.1", port);
  auto model = cli.Get("/api/model");
  REQUIRE(model);
  CHECK(model->status == 200);
  CHECK(json::parse(model->body)["dims"]["input"] == 160);

  auto page = cli.Get("/");
  REQUIRE(page);
  CHECK(page->status == 200);

  auto bad = cli.Post("/api/encode", "{", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);

  const auto smf = write_midi({{62, 0, 300}});
  httplib::MultipartFormDataItems items = {{"file", std::string(smf.begin(), smf.end()), "seed.mid", "audio/midi"}};
  auto upload = cli.Post("/api/midi", items);
  REQUIRE(upload);
  CHECK(upload->status == 200);
  CHECK(json::parse(upload->body)["roll"]["runs"] == json::parse("[[2,0,3]]"));

  // Concurrent clients on separate sessions.
  std::vector<std::thread> clients;
  std::vector<std::string> exports(4);
  for (int t = 0; t < 4; ++t) {
    clients.emplace_back([&, t] {
      httplib::Client c("127.0.0.1", port);
      auto s = c.Post("/api/session", R"({"seed": 8})", "application/json");
      const std::string id = json::parse(s->body)["id"];
      for (int k = 0; k < 4; ++k) c.Post("/api/session/" + id + "/step", "{}", "application/json");
      exports[t] = c.Get("/api/session/" + id + "/export")->body;
    });
  }
  for (auto& c : clients) c.join();
  for (int t = 1; t < 4; ++t) CHECK(exports[t] == exports[0]);

  svc.stop();
  server.join();
}
