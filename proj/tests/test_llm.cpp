#include <doctest.h>

#include <httplib.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>

#include "nuanced/errors.hpp"
#include "nuanced/llm.hpp"

using namespace nuanced;
using nlohmann::json;

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

std::string read_fixture(const std::string& name) {
  std::ifstream in(std::string(NUANCED_SOURCE_DIR) + "/tests/fixtures/" + name);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CompletionRequest request_of(RequestKind kind, std::string last) {
  CompletionRequest r;
  r.kind = kind;
  r.model = "m";
  r.messages = {{Role::system, "sys"}, {Role::user, std::move(last)}};
  return r;
}

// Local stand-in for an OpenAI-compatible endpoint.
struct StubServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::string last_body;
  std::string last_auth;
  std::string response;
  int status = 200;
  int delay_ms = 0;

  StubServer() {
    server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      last_body = req.body;
      last_auth = req.get_header_value("Authorization");
      if (delay_ms) std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
      res.status = status;
      res.set_content(response, "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~StubServer() {
    server.stop();
    thread.join();
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions"; }
};

}  // namespace

TEST_CASE("routing sends classification to the cheap slot") {
  auto r = ModelRouting::defaults("small", "large");
  CHECK(r.settings(RequestKind::topic).model == "small");
  CHECK(r.settings(RequestKind::sentiment).model == "small");
  CHECK(r.settings(RequestKind::reply).model == "large");
  CHECK(r.settings(RequestKind::continuation).model == "large");
}

TEST_CASE("mock backend answers from its script") {
  MockScript script;
  script.entries.push_back({RequestKind::topic, std::nullopt, "gardening", 50.0, true, std::nullopt});
  MockBackend mock(script);
  auto res = mock.complete(request_of(RequestKind::topic, "I love my roses"));
  CHECK(res.text == "gardening");
  CHECK(res.latency_ms == 50.0);
  CHECK(mock.simulated_clock());
  CHECK(mock.calls(RequestKind::topic) == 1);
  CHECK_THROWS_AS(mock.complete(request_of(RequestKind::reply, "x")), BackendError);
}

TEST_CASE("mock matching, consumption and faults") {
  auto script = MockScript::parse(R"([
    {"request_kind": "reply", "match": "joke", "response_text": "TONE: humorous\nHa!", "repeat": false},
    {"request_kind": "reply", "response_text": "TONE: neutral\nOk."},
    {"request_kind": "topic", "match": "slow", "response_text": "NONE", "latency_ms": 25000},
    {"request_kind": "topic", "match": "down", "response_text": "NONE", "fault": "unreachable"},
    {"request_kind": "topic", "match": "junk", "response_text": "NONE", "fault": "malformed"}
  ])");
  MockBackend mock(script);
  CHECK(mock.complete(request_of(RequestKind::reply, "a joke")).text == "TONE: humorous\nHa!");
  CHECK(mock.complete(request_of(RequestKind::reply, "a joke")).text == "TONE: neutral\nOk.");
  CHECK_THROWS_AS(mock.complete(request_of(RequestKind::topic, "slow")), Timeout);
  CHECK_THROWS_AS(mock.complete(request_of(RequestKind::topic, "down")), BackendUnreachable);
  CHECK_THROWS_AS(mock.complete(request_of(RequestKind::topic, "junk")), MalformedUpstreamResponse);

  auto round = MockScript::parse(script.to_json().dump());
  REQUIRE(round.entries.size() == script.entries.size());
  CHECK(round.to_json() == script.to_json());
  CHECK_THROWS_AS(MockScript::parse(R"([{"request_kind": "weather"}])"), ConfigError);
  CHECK(MockScript::parse("{\"request_kind\": \"topic\"}\n{\"request_kind\": \"reply\"}\n").entries.size() == 2);
}

TEST_CASE("real-time mock sleeps for the injected latency") {
  MockScript script;
  script.entries.push_back({RequestKind::topic, std::nullopt, "NONE", 40.0, true, std::nullopt});
  MockBackend mock(script, {true, 20000});
  CHECK_FALSE(mock.simulated_clock());
  const auto start = std::chrono::steady_clock::now();
  auto res = mock.complete(request_of(RequestKind::topic, "x"));
  const double wall = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  CHECK(res.latency_ms >= 40.0);
  CHECK(res.latency_ms <= 45.0);
  CHECK(wall >= 40.0);
}

TEST_CASE("wire format matches the golden fixture") {
  CompletionRequest req;
  req.kind = RequestKind::reply;
  req.model = "gpt-4-turbo";
  req.messages = {{Role::system, "You are a friendly social robot."}, {Role::user, "I spent the day in the garden."}};
  req.temperature = 0.7;
  req.max_tokens = 120;
  CHECK(to_wire(req) == json::parse(read_fixture("chat_request.json")));

  auto res = from_wire(read_fixture("chat_response.json"), req);
  CHECK(res.text == "TONE: neutral\nThat sounds like a lovely day.");
  CHECK(res.prompt_tokens == 31);
  CHECK(res.completion_tokens == 9);

  CHECK_THROWS_AS(from_wire("not json", req), MalformedUpstreamResponse);
  CHECK_THROWS_AS(from_wire(R"({"choices": []})", req), MalformedUpstreamResponse);
  CHECK_THROWS_AS(from_wire(R"({"choices": [{"message": {"content": 3}}]})", req), MalformedUpstreamResponse);
  auto no_usage = from_wire(R"({"choices": [{"message": {"content": "hi there"}}]})", req);
  CHECK(no_usage.completion_tokens == 2);
}

TEST_CASE("http backend against a local stub") {
  StubServer stub;
  stub.response = read_fixture("chat_response.json");
  HttpBackend http({stub.endpoint(), "secret", 5.0, 0});
  CompletionRequest req;
  req.kind = RequestKind::reply;
  req.model = "gpt-4-turbo";
  req.messages = {{Role::system, "You are a friendly social robot."}, {Role::user, "I spent the day in the garden."}};
  auto res = http.complete(req);
  CHECK(res.text == "TONE: neutral\nThat sounds like a lovely day.");
  CHECK(res.latency_ms >= 0.0);
  CHECK(json::parse(stub.last_body) == json::parse(read_fixture("chat_request.json")));
  CHECK(stub.last_auth == "Bearer secret");
  CHECK(http.reachable());

  stub.status = 500;
  CHECK_THROWS_AS(http.complete(req), MalformedUpstreamResponse);
  stub.status = 200;
  stub.response = "{}";
  CHECK_THROWS_AS(http.complete(req), MalformedUpstreamResponse);

  stub.response = read_fixture("chat_response.json");
  stub.delay_ms = 600;
  HttpBackend impatient({stub.endpoint(), "", 0.2, 0});
  CHECK_THROWS_AS(impatient.complete(req), Timeout);
}

TEST_CASE("unreachable endpoint") {
  const int port = closed_port();
  HttpBackend http({"http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions", "", 1.0, 1});
  CHECK_THROWS_AS(http.complete(request_of(RequestKind::topic, "x")), BackendUnreachable);
  CHECK_FALSE(http.reachable());
  CHECK_THROWS_AS(HttpBackend({"ftp://example.com", "", 1.0, 0}), ConfigError);
}

TEST_CASE("parse_topic") {
  const std::vector<std::string> allowed{"gardening", "cooking"};
  CHECK(parse_topic("Gardening", allowed).value == "gardening");
  CHECK(parse_topic("  cooking.\n", allowed).value == "cooking");
  auto none = parse_topic("NONE", allowed);
  CHECK_FALSE(none.value);
  CHECK_FALSE(none.warning);
  auto loose = parse_topic("I think gardening", {"gardening"});
  CHECK_FALSE(loose.value);
  CHECK(loose.warning);
}

TEST_CASE("parse_sentiment") {
  CHECK(parse_sentiment("Positive").value == Sentiment::positive);
  CHECK(parse_sentiment("negative.").value == Sentiment::negative);
  auto maybe = parse_sentiment("maybe");
  CHECK(maybe.value == Sentiment::neutral);
  CHECK(maybe.warning);
}

TEST_CASE("parse_tone_reply") {
  auto r = parse_tone_reply("TONE: humorous\nHa! Good one...");
  CHECK(r.value.tone == DetectedTone::humorous);
  CHECK(r.value.reply == "Ha! Good one...");
  CHECK_FALSE(r.warning);

  r = parse_tone_reply("Hello there");
  CHECK(r.value.tone == DetectedTone::none);
  CHECK(r.value.reply == "Hello there");
  CHECK(r.warning);

  r = parse_tone_reply("tone: Aggressive\nWhatever.");
  CHECK(r.value.tone == DetectedTone::aggressive);
  r = parse_tone_reply("TONE: sarcastic\nSure.");
  CHECK(r.value.tone == DetectedTone::none);
  CHECK(r.warning);

  CHECK_THROWS_AS(parse_tone_reply("TONE: aggressive\n"), EmptyReply);
  CHECK_THROWS_AS(parse_tone_reply(""), EmptyReply);
}

TEST_CASE("parsers survive random input") {
  Rng rng(424242);
  const std::string alphabet = "TONE: humorousaggressiveneutralNONEpositive\n\r\t .,!?{}[]\"\\";
  const std::vector<std::string> allowed{"gardening", "cooking", "music"};
  std::size_t empty_replies = 0;
  for (int i = 0; i < 10000; ++i) {
    // Mostly short strings, with an occasional large one up to 64 KiB.
    const std::size_t len = i % 500 == 0 ? uniform_index(rng, 65536) : uniform_index(rng, 200);
    std::string s(len, '\0');
    const bool raw = i % 3 == 0;
    for (auto& c : s)
      c = raw ? static_cast<char>(uniform_index(rng, 256)) : alphabet[uniform_index(rng, alphabet.size())];
    if (i % 7 == 0) s = "TONE: " + s;
    REQUIRE_NOTHROW(parse_topic(s, allowed));
    REQUIRE_NOTHROW(parse_sentiment(s));
    try {
      auto r = parse_tone_reply(s);
      REQUIRE_FALSE(r.value.reply.empty());
    } catch (const EmptyReply&) {
      ++empty_replies;
    }
    MockScript parsed;
    try {
      parsed = MockScript::parse(s);
    } catch (const ConfigError&) {
    }
  }
  CHECK(empty_replies < 10000);
}
