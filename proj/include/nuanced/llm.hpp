#pragma once

// Chat-completion backends and strict parsing of their answers.

#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "nuanced/knowledge_base.hpp"
#include "nuanced/nuance.hpp"
#include "nuanced/prompt.hpp"

namespace nuanced {

struct CompletionRequest {
  RequestKind kind = RequestKind::reply;  // routing only; never sent upstream
  std::string model;
  std::vector<ChatMessage> messages;
  int max_tokens = 120;
  double temperature = 0.7;
};

struct CompletionResult {
  std::string text;
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
  double latency_ms = 0.0;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  /// Throws BackendUnreachable, Timeout or MalformedUpstreamResponse.
  virtual CompletionResult complete(const CompletionRequest& request) = 0;
  /// True when latencies are injected rather than measured, in which case the
  /// dialogue timeline is computed from reported latencies alone.
  virtual bool simulated_clock() const { return false; }
  virtual bool reachable() { return true; }
};

// ── routing ─────────────────────────────────────────────────────

struct GenerationSettings {
  std::string model;
  double temperature = 0.7;
  int max_tokens = 120;
};

/// Topic and sentiment go to the cheap model slot; reply and continuation to
/// the capable one.
struct ModelRouting {
  std::map<RequestKind, GenerationSettings> per_kind;

  static ModelRouting defaults(std::string cheap = "gpt-3.5-turbo",
                               std::string capable = "gpt-4-turbo");
  const GenerationSettings& settings(RequestKind kind) const { return per_kind.at(kind); }
};

CompletionRequest make_request(const PromptBundle& bundle, const ModelRouting& routing);

// ── mock ────────────────────────────────────────────────────────

enum class MockFault { timeout, unreachable, malformed };

/// `match`, when present, must occur in the last message of the request.
/// Non-repeating entries are consumed once; the first live match wins.
struct MockEntry {
  RequestKind kind = RequestKind::reply;
  std::optional<std::string> match;
  std::string response;
  double latency_ms = 0.0;
  bool repeat = true;
  std::optional<MockFault> fault;
};

struct MockScript {
  std::vector<MockEntry> entries;

  /// One catch-all entry per request kind.
  static MockScript defaults();
  /// Accepts a JSON array or an object with an `entries` array, or JSON lines.
  static MockScript parse(std::string_view text);
  static MockScript load_file(const std::string& path);
  nlohmann::json to_json() const;
};

struct MockOptions {
  bool real_time = false;      // actually sleep for the injected latency
  double deadline_ms = 20000;  // latency beyond this reports Timeout
};

class MockBackend final : public ChatBackend {
 public:
  explicit MockBackend(MockScript script, MockOptions options = {});

  CompletionResult complete(const CompletionRequest& request) override;
  bool simulated_clock() const override { return !options_.real_time; }

  std::size_t calls(RequestKind kind) const;

 private:
  MockScript script_;
  MockOptions options_;
  std::vector<bool> consumed_;
  std::map<RequestKind, std::size_t> calls_;
  mutable std::mutex mutex_;
};

// ── HTTP ────────────────────────────────────────────────────────

struct HttpBackendOptions {
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string api_key;
  double timeout_s = 20.0;
  int transport_retries = 1;
};

/// Speaks the OpenAI-compatible chat-completions wire format.
class HttpBackend final : public ChatBackend {
 public:
  explicit HttpBackend(HttpBackendOptions options);

  CompletionResult complete(const CompletionRequest& request) override;
  bool reachable() override;

 private:
  HttpBackendOptions options_;
  std::string base_;  // scheme://host[:port]
  std::string path_;
};

nlohmann::json to_wire(const CompletionRequest& request);
/// Throws MalformedUpstreamResponse when the body lacks choices[0].message.content.
CompletionResult from_wire(std::string_view body, const CompletionRequest& request);

struct BackendSpec {
  enum class Kind { mock, http } kind = Kind::mock;
  HttpBackendOptions http;
  MockScript mock = MockScript::defaults();
  MockOptions mock_options;
};

std::unique_ptr<ChatBackend> make_backend(const BackendSpec& spec);

// ── parsing ─────────────────────────────────────────────────────

template <class T>
struct Parsed {
  T value;
  std::optional<std::string> warning;
};

/// Exact, case-insensitive match against `allowed`; NONE or anything else
/// yields no topic (the latter with a warning).
Parsed<std::optional<std::string>> parse_topic(std::string_view text,
                                               const std::vector<std::string>& allowed);

/// Unparseable answers fall back to neutral with a warning.
Parsed<Sentiment> parse_sentiment(std::string_view text);

struct ToneReply {
  DetectedTone tone = DetectedTone::none;  // none reads as "neutral"
  std::string reply;
};

std::string_view tone_name(DetectedTone tone);
std::optional<DetectedTone> tone_from_name(std::string_view name);

/// Expects a first line `TONE: <humorous|aggressive|neutral>`; without it the
/// whole text is the reply and the tone is neutral. Throws EmptyReply.
Parsed<ToneReply> parse_tone_reply(std::string_view text);

}  // namespace nuanced
