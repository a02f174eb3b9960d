#include "nuanced/llm.hpp"

#include <algorithm>
#include <chrono>
#include <cctype>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "nuanced/errors.hpp"
#include "nuanced/tokenizer.hpp"

namespace nuanced {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::string_view fault_name(MockFault f) {
  switch (f) {
    case MockFault::timeout: return "timeout";
    case MockFault::unreachable: return "unreachable";
    case MockFault::malformed: return "malformed";
  }
  return "timeout";
}

std::optional<MockFault> fault_from_name(std::string_view name) {
  for (auto f : {MockFault::timeout, MockFault::unreachable, MockFault::malformed})
    if (fault_name(f) == name) return f;
  return std::nullopt;
}

bool is_ascii_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_ascii_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_ascii_space(s.back())) s.remove_suffix(1);
  return s;
}

// Trim, drop wrapping quotes or markdown emphasis, drop trailing sentence
// punctuation, then ASCII case-fold.
std::string normalize_label(std::string_view text) {
  auto s = trim(text);
  auto wrapper = [](char c) { return c == '"' || c == '\'' || c == '`' || c == '*'; };
  auto trailing = [](char c) { return c == '.' || c == '!' || c == '?' || c == ',' || c == ';' || c == ':'; };
  bool changed = true;
  while (changed && !s.empty()) {
    changed = false;
    if (wrapper(s.front())) { s.remove_prefix(1); changed = true; }
    if (!s.empty() && (wrapper(s.back()) || trailing(s.back()))) { s.remove_suffix(1); changed = true; }
    s = trim(s);
  }
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string preview(std::string_view text) {
  constexpr std::size_t kMax = 60;
  std::string out(text.substr(0, kMax));
  for (auto& c : out)
    if (c == '\n' || c == '\r') c = ' ';
  if (text.size() > kMax) out += "...";
  return out;
}

}  // namespace

// ── routing ─────────────────────────────────────────────────────

ModelRouting ModelRouting::defaults(std::string cheap, std::string capable) {
  ModelRouting r;
  r.per_kind[RequestKind::topic] = {cheap, 0.0, 120};
  r.per_kind[RequestKind::sentiment] = {cheap, 0.0, 120};
  r.per_kind[RequestKind::reply] = {capable, 0.7, 120};
  r.per_kind[RequestKind::continuation] = {capable, 0.7, 120};
  return r;
}

CompletionRequest make_request(const PromptBundle& bundle, const ModelRouting& routing) {
  const auto& s = routing.settings(bundle.kind);
  return {bundle.kind, s.model, bundle.messages, s.max_tokens, s.temperature};
}

// ── mock ────────────────────────────────────────────────────────

MockScript MockScript::defaults() {
  MockScript s;
  s.entries = {
      {RequestKind::topic, std::nullopt, "NONE", 0.0, true, std::nullopt},
      {RequestKind::sentiment, std::nullopt, "neutral", 0.0, true, std::nullopt},
      {RequestKind::reply, std::nullopt, "TONE: neutral\nThat sounds interesting.", 0.0, true, std::nullopt},
      {RequestKind::continuation, std::nullopt, "Would you like to tell me more?", 0.0, true, std::nullopt},
  };
  return s;
}

namespace {

MockEntry entry_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("mock entry must be an object");
  MockEntry e;
  const auto kind = request_kind_from_string(j.value("request_kind", std::string{}));
  if (!kind) throw ConfigError("mock entry has an unknown request_kind");
  e.kind = *kind;
  if (j.contains("match") && !j["match"].is_null()) e.match = j["match"].get<std::string>();
  e.response = j.value("response_text", std::string{});
  e.latency_ms = j.value("latency_ms", 0.0);
  if (e.latency_ms < 0) throw ConfigError("mock latency must be non-negative");
  e.repeat = j.value("repeat", true);
  if (j.contains("fault") && !j["fault"].is_null()) {
    e.fault = fault_from_name(j["fault"].get<std::string>());
    if (!e.fault) throw ConfigError("mock entry has an unknown fault");
  }
  return e;
}

}  // namespace

MockScript MockScript::parse(std::string_view text) {
  MockScript s;
  try {
    const auto trimmed = trim(text);
    if (!trimmed.empty() && (trimmed.front() == '[' || trimmed.front() == '{')) {
      // A whole document, unless it is JSON lines of objects.
      json doc;
      bool whole = true;
      try {
        doc = json::parse(trimmed, nullptr, true, true);
      } catch (const json::parse_error&) {
        whole = false;
      }
      if (whole) {
        const json& arr = doc.is_array() ? doc : doc.at("entries");
        for (const auto& e : arr) s.entries.push_back(entry_from_json(e));
        return s;
      }
    }
    std::istringstream in{std::string(text)};
    for (std::string line; std::getline(in, line);) {
      if (trim(line).empty()) continue;
      s.entries.push_back(entry_from_json(json::parse(line)));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("mock script: ") + e.what());
  }
  return s;
}

MockScript MockScript::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open mock script " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

json MockScript::to_json() const {
  json arr = json::array();
  for (const auto& e : entries) {
    json j{{"request_kind", to_string(e.kind)}, {"response_text", e.response},
           {"latency_ms", e.latency_ms}, {"repeat", e.repeat}};
    if (e.match) j["match"] = *e.match;
    if (e.fault) j["fault"] = fault_name(*e.fault);
    arr.push_back(std::move(j));
  }
  return arr;
}

MockBackend::MockBackend(MockScript script, MockOptions options)
    : script_(std::move(script)), options_(options), consumed_(script_.entries.size(), false) {}

std::size_t MockBackend::calls(RequestKind kind) const {
  std::lock_guard lock(mutex_);
  auto it = calls_.find(kind);
  return it == calls_.end() ? 0 : it->second;
}

CompletionResult MockBackend::complete(const CompletionRequest& request) {
  const auto start = Clock::now();
  const std::string_view last =
      request.messages.empty() ? std::string_view{} : std::string_view(request.messages.back().content);

  MockEntry entry;
  {
    std::lock_guard lock(mutex_);
    ++calls_[request.kind];
    std::optional<std::size_t> hit;
    for (std::size_t i = 0; i < script_.entries.size(); ++i) {
      const auto& e = script_.entries[i];
      if (e.kind != request.kind || consumed_[i]) continue;
      if (e.match && last.find(*e.match) == std::string_view::npos) continue;
      hit = i;
      break;
    }
    if (!hit)
      throw BackendError("mock script has no entry for a " + std::string(to_string(request.kind)) +
                         " request");
    if (!script_.entries[*hit].repeat) consumed_[*hit] = true;
    entry = script_.entries[*hit];
  }

  const bool late = entry.latency_ms > options_.deadline_ms || entry.fault == MockFault::timeout;
  if (options_.real_time) {
    const double wait = late ? options_.deadline_ms : entry.latency_ms;
    std::this_thread::sleep_until(start + std::chrono::duration<double, std::milli>(wait));
  }
  if (late)
    throw Timeout(std::string(to_string(request.kind)) + " request exceeded " +
                  std::to_string(options_.deadline_ms) + " ms");
  if (entry.fault == MockFault::unreachable) throw BackendUnreachable("mock backend unreachable");
  if (entry.fault == MockFault::malformed) throw MalformedUpstreamResponse("mock backend sent garbage");

  CompletionResult result;
  result.text = entry.response;
  result.prompt_tokens = count_prompt_tokens(request.messages);
  result.completion_tokens = count_tokens(entry.response);
  result.latency_ms = options_.real_time ? elapsed_ms(start) : entry.latency_ms;
  return result;
}

// ── wire format ─────────────────────────────────────────────────

json to_wire(const CompletionRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages)
    messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  return {{"model", request.model},
          {"messages", std::move(messages)},
          {"temperature", request.temperature},
          {"max_tokens", request.max_tokens}};
}

CompletionResult from_wire(std::string_view body, const CompletionRequest& request) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    throw MalformedUpstreamResponse(std::string("response is not JSON: ") + e.what());
  }
  try {
    const auto& content = doc.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) throw MalformedUpstreamResponse("message content is not text");
    CompletionResult r;
    r.text = content.get<std::string>();
    if (doc.contains("usage") && doc["usage"].is_object()) {
      r.prompt_tokens = doc["usage"].value("prompt_tokens", std::size_t{0});
      r.completion_tokens = doc["usage"].value("completion_tokens", std::size_t{0});
    } else {
      r.prompt_tokens = count_prompt_tokens(request.messages);
      r.completion_tokens = count_tokens(r.text);
    }
    return r;
  } catch (const json::exception& e) {
    throw MalformedUpstreamResponse(std::string("unexpected response shape: ") + e.what());
  }
}

// ── HTTP ────────────────────────────────────────────────────────

HttpBackend::HttpBackend(HttpBackendOptions options) : options_(std::move(options)) {
  static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(options_.endpoint, m, url))
    throw ConfigError("backend endpoint is not an http(s) URL: " + options_.endpoint);
  base_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/v1/chat/completions";
}

CompletionResult HttpBackend::complete(const CompletionRequest& request) {
  const std::string body = to_wire(request).dump();
  httplib::Headers headers;
  if (!options_.api_key.empty()) headers.emplace("Authorization", "Bearer " + options_.api_key);

  const auto timeout = std::chrono::duration<double>(options_.timeout_s);
  const auto whole = std::chrono::duration_cast<std::chrono::microseconds>(timeout);
  for (int attempt = 0;; ++attempt) {
    httplib::Client client(base_);
    client.set_connection_timeout(whole);
    client.set_read_timeout(whole);
    client.set_write_timeout(whole);

    const auto start = Clock::now();
    auto res = client.Post(path_, headers, body, "application/json");
    const double ms = elapsed_ms(start);
    if (res) {
      if (res->status != 200)
        throw MalformedUpstreamResponse("upstream answered HTTP " + std::to_string(res->status));
      auto result = from_wire(res->body, request);
      result.latency_ms = ms;
      return result;
    }
    const auto err = res.error();
    if (err == httplib::Error::Read && ms >= 0.95 * options_.timeout_s * 1000.0)
      throw Timeout(std::string(to_string(request.kind)) + " request timed out after " +
                    std::to_string(options_.timeout_s) + " s");
    if (attempt >= options_.transport_retries)
      throw BackendUnreachable("backend " + base_ + ": " + httplib::to_string(err));
  }
}

bool HttpBackend::reachable() {
  httplib::Client client(base_);
  client.set_connection_timeout(std::chrono::seconds(2));
  client.set_read_timeout(std::chrono::seconds(2));
  return static_cast<bool>(client.Get("/"));
}

std::unique_ptr<ChatBackend> make_backend(const BackendSpec& spec) {
  if (spec.kind == BackendSpec::Kind::http) return std::make_unique<HttpBackend>(spec.http);
  return std::make_unique<MockBackend>(spec.mock, spec.mock_options);
}

// ── parsing ─────────────────────────────────────────────────────

Parsed<std::optional<std::string>> parse_topic(std::string_view text,
                                               const std::vector<std::string>& allowed) {
  const auto label = normalize_label(text);
  if (label == "none") return {std::nullopt, std::nullopt};
  for (const auto& id : allowed) {
    std::string folded = id;
    std::transform(folded.begin(), folded.end(), folded.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (folded == label) return {id, std::nullopt};
  }
  return {std::nullopt, "topic answer is not in the candidate list: \"" + preview(text) + "\""};
}

Parsed<Sentiment> parse_sentiment(std::string_view text) {
  if (auto s = sentiment_from_string(normalize_label(text))) return {*s, std::nullopt};
  return {Sentiment::neutral, "unparseable sentiment answer: \"" + preview(text) + "\""};
}

std::string_view tone_name(DetectedTone tone) {
  switch (tone) {
    case DetectedTone::humorous: return "humorous";
    case DetectedTone::aggressive: return "aggressive";
    case DetectedTone::none: return "neutral";
  }
  return "neutral";
}

std::optional<DetectedTone> tone_from_name(std::string_view name) {
  for (auto t : {DetectedTone::humorous, DetectedTone::aggressive, DetectedTone::none})
    if (tone_name(t) == name) return t;
  return std::nullopt;
}

Parsed<ToneReply> parse_tone_reply(std::string_view text) {
  const auto body = trim(text);
  const auto newline = body.find('\n');
  const auto first = trim(body.substr(0, newline));

  constexpr std::string_view kPrefix = "tone:";
  std::string head(first.substr(0, kPrefix.size()));
  std::transform(head.begin(), head.end(), head.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (head != kPrefix) {
    if (body.empty()) throw EmptyReply();
    return {{DetectedTone::none, std::string(body)}, "reply has no TONE line"};
  }

  const auto rest = newline == std::string_view::npos ? std::string_view{} : trim(body.substr(newline + 1));
  if (rest.empty()) throw EmptyReply();
  const auto label = normalize_label(first.substr(kPrefix.size()));
  if (auto tone = tone_from_name(label)) return {{*tone, std::string(rest)}, std::nullopt};
  return {{DetectedTone::none, std::string(rest)}, "unknown tone label \"" + preview(label) + "\""};
}

}  // namespace nuanced
