#include <doctest.h>

#include <httplib.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "nuanced/codec.hpp"
#include "nuanced/errors.hpp"
#include "nuanced/hub.hpp"

using namespace nuanced;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

int closed_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("nuanced_test_hub_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  return dir;
}

ServiceConfig mock_config(MockScript script = MockScript::defaults()) {
  ServiceConfig c;
  c.backend.mock = std::move(script);
  c.seed = 17;
  return c;
}

std::unique_ptr<Hub> make_hub(ServiceConfig c) {
  auto backend = make_backend(c.backend);
  return std::make_unique<Hub>(std::move(c), std::move(backend));
}

struct Served {
  std::unique_ptr<Hub> hub;
  HubServer server;
  std::thread thread;
  int port;
  httplib::Client client;

  explicit Served(std::unique_ptr<Hub> h)
      : hub(std::move(h)), server(*hub), port(server.bind_any("127.0.0.1")),
        client("127.0.0.1", port) {
    REQUIRE(port > 0);
    thread = std::thread([this] { server.serve(); });
    server.wait_until_ready();
  }
  ~Served() {
    server.stop();
    thread.join();
  }
  std::pair<int, json> post(const std::string& path, const json& body) {
    auto res = client.Post(path, body.dump(), "application/json");
    REQUIRE(res);
    return {res->status, json::parse(res->body)};
  }
};

std::vector<json> read_lines(const fs::path& path) {
  std::ifstream in(path);
  std::vector<json> out;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

}  // namespace

TEST_CASE("first and continuation over HTTP") {
  Served s(make_hub(mock_config()));
  auto [status, first] = s.post("/v1/dialogue/first", {{"session_id", "alice"}, {"sentence", "Good evening!"}});
  REQUIRE(status == 200);
  CHECK(first["session_id"] == "alice");
  CHECK(first["turn"] == 0);
  CHECK_FALSE(first["filler"].get<std::string>().empty());
  CHECK(first["reply"] == "That sounds interesting.");
  CHECK(first["detected_tone"] == "neutral");
  CHECK(first["state"]["pending"].is_object());
  CHECK(first["telemetry"]["requests"].size() == 2);

  auto [status2, second] =
      s.post("/v1/dialogue/continuation", {{"session_id", "alice"}, {"state", first["state"]}});
  REQUIRE(status2 == 200);
  CHECK(second["continuation"] == "Would you like to tell me more?");
  CHECK(second["state"]["turn"] == 1);
  CHECK(second["state"]["pending"].is_null());
  CHECK(second["record"]["steps"].size() == 2);

  auto res = s.client.Get("/v1/health");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body)["status"] == "ok");
}

TEST_CASE("bad requests") {
  Served s(make_hub(mock_config()));
  auto [st, body] = s.post("/v1/dialogue/first", {{"session_id", "a"}, {"sentence", "hi"}, {"state", {{"version", 1}}}});
  CHECK(st == 400);
  CHECK(body["error"] == "bad_state");

  std::tie(st, body) = s.post("/v1/dialogue/first", {{"session_id", "a"}, {"sentence", "hi"}, {"state", "corrupt"}});
  CHECK(st == 400);
  std::tie(st, body) = s.post("/v1/dialogue/first", {{"session_id", "a"}, {"sentence", "   "}});
  CHECK(st == 400);
  std::tie(st, body) = s.post("/v1/dialogue/first", {{"session_id", "../etc"}, {"sentence", "hi"}});
  CHECK(st == 400);
  std::tie(st, body) = s.post("/v1/dialogue/first", {{"sentence", "hi"}});
  CHECK(st == 400);

  auto raw = s.client.Post("/v1/dialogue/first", "{oops", "application/json");
  REQUIRE(raw);
  CHECK(raw->status == 400);
  CHECK(json::parse(raw->body)["error"] == "bad_json");

  std::tie(st, body) = s.post("/v1/dialogue/continuation", {{"session_id", "a"}});
  CHECK(st == 409);
  std::tie(st, body) =
      s.post("/v1/dialogue/continuation", {{"session_id", "a"}, {"state", to_json(s.hub->initial_state())}});
  CHECK(st == 409);
  CHECK(body["error"] == "phase_one_missing");
}

TEST_CASE("state values must match the service configuration") {
  auto hub = make_hub(mock_config());
  auto state = hub->initial_state();
  state.nuances.values[index_of(NuanceKind::place)].labels[1] = "Savona";
  try {
    hub->first({{"session_id", "a"}, {"sentence", "hi"}, {"state", to_json(state)}});
    FAIL("expected a HubError");
  } catch (const HubError& e) {
    CHECK(e.status() == 400);
  }
}

TEST_CASE("a timed-out reply gives 504 and a persisted failed record") {
  const auto dir = scratch_dir("timeout");
  auto cfg = mock_config(MockScript{{{RequestKind::reply, std::nullopt, "TONE: neutral\nok", 30000.0, true, std::nullopt},
                                     {RequestKind::topic, std::nullopt, "NONE", 0.0, true, std::nullopt}}});
  cfg.log_dir = dir.string();
  Served s(make_hub(cfg));
  auto [st, body] = s.post("/v1/dialogue/first", {{"session_id", "slow"}, {"sentence", "hi"}});
  CHECK(st == 504);
  CHECK(body["error"] == "backend_timeout");
  CHECK(body["detail"]["record"]["ok"] == false);
  auto lines = read_lines(dir / "slow.jsonl");
  REQUIRE(lines.size() == 1);
  CHECK(lines[0]["record"] == "turn");
  CHECK(lines[0]["failed_phase"] == "first");
  CHECK(read_turn_log_file((dir / "slow.jsonl").string()).size() == 1);
  fs::remove_all(dir);
}

TEST_CASE("an unreachable continuation gives 502") {
  auto script = MockScript::defaults();
  script.entries.insert(script.entries.begin(),
                        {RequestKind::continuation, std::nullopt, "", 0.0, true, MockFault::unreachable});
  auto hub = make_hub(mock_config(script));
  auto first = hub->first({{"session_id", "b"}, {"sentence", "hi"}});
  try {
    hub->continuation({{"session_id", "b"}, {"state", first["state"]}});
    FAIL("expected a HubError");
  } catch (const HubError& e) {
    CHECK(e.status() == 502);
    CHECK(e.detail()["record"]["failed_phase"] == "continuation");
  }
}

TEST_CASE("configuration errors stop the service from starting") {
  auto cfg = mock_config();
  cfg.ontology_path = "/nonexistent/ontology.json";
  CHECK_THROWS_AS(make_hub(cfg), ConfigError);
  cfg = mock_config();
  cfg.templates_dir = "/nonexistent/templates";
  CHECK_THROWS_AS(make_hub(cfg), ConfigError);

  CHECK_THROWS_AS(parse_service_config(json::parse(R"({"backend": {"kind": "carrier-pigeon"}})"), "."), ConfigError);
  CHECK_THROWS_AS(parse_service_config(json::parse(R"({"nuances": {"time": {"columns": [[1, 0], [0, 1]]}}})"), "."),
                  Error);
  CHECK_THROWS_AS(load_service_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("the bundled example configuration loads") {
  const std::string dir = std::string(NUANCED_SOURCE_DIR) + "/resources/config/";
  auto cfg = load_service_config(dir + "example.jsonc");
  CHECK(cfg.backend.kind == BackendSpec::Kind::mock);
  CHECK(cfg.ontology_path);
  CHECK(fs::exists(*cfg.ontology_path));
  cfg.log_dir.reset();
  auto hub = make_hub(cfg);
  CHECK(hub->manager().graph().size() >= 48);
  CHECK_NOTHROW(load_service_config(dir + "default.json"));
}

TEST_CASE("an unreachable http backend is degraded") {
  const int port = closed_port();
  ServiceConfig cfg;
  cfg.backend.kind = BackendSpec::Kind::http;
  cfg.backend.http.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  cfg.backend.http.timeout_s = 1.0;
  auto hub = make_hub(cfg);
  int status = 0;
  auto body = hub->health(status);
  CHECK(status == 503);
  CHECK(body["status"] == "degraded");
  try {
    hub->first({{"session_id", "c"}, {"sentence", "hi"}});
    FAIL("expected a HubError");
  } catch (const HubError& e) {
    CHECK(e.status() == 502);
  }
}

TEST_CASE("session logs hold a fragment and a record per turn") {
  const auto dir = scratch_dir("logs");
  auto cfg = mock_config();
  cfg.log_dir = dir.string();
  auto hub = make_hub(cfg);
  json state = nullptr;
  for (int i = 0; i < 5; ++i) {
    auto first = hub->first({{"session_id", "log"}, {"sentence", "sentence " + std::to_string(i)}, {"state", state}});
    auto second = hub->continuation({{"session_id", "log"}, {"state", first["state"]}});
    state = second["state"];
  }
  auto lines = read_lines(dir / "log.jsonl");
  REQUIRE(lines.size() == 10);
  for (int i = 0; i < 5; ++i) {
    CHECK(lines[2 * i]["record"] == "first_phase");
    CHECK(lines[2 * i + 1]["record"] == "turn");
    CHECK(lines[2 * i + 1]["turn"] == i);
  }
  auto log = read_turn_log_file((dir / "log.jsonl").string());
  REQUIRE(log.size() == 5);
  for (const auto& r : log) CHECK(r.steps.size() == 2);
  fs::remove_all(dir);
}

TEST_CASE("same seed, session and state give the same turn") {
  auto a = make_hub(mock_config());
  auto b = make_hub(mock_config());
  json env{{"session_id", "det"}, {"sentence", "Hello there"}};
  CHECK(a->first(env) == b->first(env));
}

TEST_CASE("concurrent requests on one session are serialized") {
  MockScript script;
  script.entries = {{RequestKind::reply, std::nullopt, "TONE: neutral\nok", 30.0, true, std::nullopt},
                    {RequestKind::topic, std::nullopt, "NONE", 0.0, true, std::nullopt}};
  auto cfg = mock_config(script);
  cfg.backend.mock_options.real_time = true;
  const auto dir = scratch_dir("concurrent");
  cfg.log_dir = dir.string();
  Served s(make_hub(cfg));
  std::atomic<int> ok{0};
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i)
    threads.emplace_back([&, i] {
      httplib::Client c("127.0.0.1", s.port);
      json env{{"session_id", "shared"}, {"sentence", "hi " + std::to_string(i)}};
      auto res = c.Post("/v1/dialogue/first", env.dump(), "application/json");
      if (res && res->status == 200) ++ok;
    });
  for (auto& t : threads) t.join();
  CHECK(ok == 8);
  auto lines = read_lines(dir / "shared.jsonl");
  CHECK(lines.size() == 8);
  fs::remove_all(dir);
}

TEST_CASE("session ids and listen addresses") {
  CHECK(valid_session_id("user-1_a.b"));
  CHECK_FALSE(valid_session_id(""));
  CHECK_FALSE(valid_session_id(".."));
  CHECK_FALSE(valid_session_id("a/b"));
  CHECK_FALSE(valid_session_id(std::string(129, 'a')));
  CHECK(parse_listen_address("0.0.0.0:9000") == std::pair<std::string, int>{"0.0.0.0", 9000});
  CHECK_THROWS_AS(parse_listen_address("nohost"), ConfigError);
  CHECK_THROWS_AS(parse_listen_address("h:99999"), ConfigError);
}
