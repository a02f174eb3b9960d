#pragma once

// Turn orchestration: filler, the concurrent first phase (topic, sentiment,
// reply) and the continuation phase, with two nuance updates per turn.

#include <array>
#include <cstdint>
#include <exception>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nuanced/errors.hpp"
#include "nuanced/knowledge_base.hpp"
#include "nuanced/llm.hpp"
#include "nuanced/nuance.hpp"
#include "nuanced/nuance_set.hpp"
#include "nuanced/prompt.hpp"
#include "nuanced/random.hpp"

namespace nuanced {

/// Flag indices of one nuance update: what the chain produced and what the
/// prompt actually carried (they differ only when a question forces the
/// directive speech act).
struct StepRecord {
  std::array<std::size_t, 5> sampled{};
  std::array<std::size_t, 5> used{};
  bool operator==(const StepRecord&) const = default;
};

struct RequestTelemetry {
  RequestKind kind = RequestKind::reply;
  std::string model;
  bool ok = true;
  std::optional<std::string> error;
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
  double latency_ms = 0.0;
  std::size_t system_tokens = 0;
  std::size_t tone_detection_tokens = 0;
  std::array<std::size_t, 5> nuance_tokens{};
  bool operator==(const RequestTelemetry&) const = default;
};

/// What the first phase hands to the continuation phase. Its presence in
/// the dialogue state is the "first request completed" marker.
struct PendingTurn {
  std::string user_sentence;
  std::string filler;
  std::string reply;
  std::optional<std::string> detected_topic;
  std::optional<Sentiment> sentiment;
  DetectedTone detected_tone = DetectedTone::none;
  bool tone_overridden = false;
  StepRecord first_step;
  std::vector<RequestTelemetry> requests;
  double first_response_ms = 0.0;
  std::vector<std::string> warnings;
  bool operator==(const PendingTurn&) const = default;
};

struct DialogueState {
  static constexpr int kVersion = 1;

  std::string current_topic;
  CoverageLedger coverage;
  PreferenceStore prefs;
  ConversationMemory memory;
  NuanceState nuances;
  std::optional<SentenceType> last_sentence_type;
  std::uint64_t turn = 0;
  std::optional<std::size_t> last_filler;
  std::optional<PendingTurn> pending;

  bool operator==(const DialogueState&) const = default;
};

/// Throws InvalidState when the state does not fit the graph or its nuances
/// are malformed.
void validate_state(const DialogueState& state, const TopicGraph& graph);

/// Seconds on the simulated client clock, measured from the moment the
/// client starts uttering the filler and sends the first request.
struct TurnTimeline {
  double filler_end = 0.0;         // t1
  double reply_start = 0.0;        // t2
  double reply_end = 0.0;          // t3
  double continuation_start = 0.0; // t4
  double continuation_end = 0.0;
  double first_gap() const { return reply_start - filler_end; }
  double second_gap() const { return continuation_start - reply_end; }
  bool operator==(const TurnTimeline&) const = default;
};

struct TurnRecord {
  std::string session;
  std::uint64_t turn = 0;
  bool ok = true;
  std::optional<std::string> error;
  std::optional<std::string> failed_phase;  // "first" or "continuation"

  std::string user_sentence;
  std::string filler;
  std::string reply;
  std::string continuation;

  DetectedTone detected_tone = DetectedTone::none;
  bool tone_overridden = false;
  std::optional<std::string> detected_topic;
  std::optional<Sentiment> sentiment;
  std::string topic_before;
  std::optional<TopicPlan> plan;

  std::vector<StepRecord> steps;
  std::vector<RequestTelemetry> requests;

  double filler_duration_s = 0.0;
  double reply_duration_s = 0.0;
  double continuation_duration_s = 0.0;
  double first_response_s = 0.0;
  double second_response_s = 0.0;
  TurnTimeline timeline;

  std::vector<std::string> warnings;

  bool operator==(const TurnRecord&) const = default;
};

/// A turn phase failed. Carries whatever telemetry was gathered.
class TurnFailed : public Error {
 public:
  enum class Cause { unreachable, timeout, malformed, other };
  TurnFailed(Cause cause, const std::string& what, TurnRecord record)
      : Error(what), cause_(cause), record_(std::move(record)) {}
  Cause cause() const noexcept { return cause_; }
  const TurnRecord& record() const noexcept { return record_; }

 private:
  Cause cause_;
  TurnRecord record_;
};

struct TurnPhaseOneResult {
  std::string reply;
  DetectedTone detected_tone = DetectedTone::none;
  std::optional<std::string> detected_topic;
  std::optional<Sentiment> detected_sentiment;
  DialogueState state;  // carries the pending marker
  std::vector<RequestTelemetry> requests;
};

struct TurnPhaseTwoResult {
  std::string continuation;
  SentenceType sentence_type = SentenceType::open_question;
  DialogueState state;
  double continuation_latency_ms = 0.0;
  TurnRecord record;
};

struct TurnOutcome {
  std::string filler;
  std::string reply;
  std::string continuation;
  DialogueState state;
  TurnRecord record;
};

struct DialogueConfig {
  TraversalPolicy traversal;
  double speech_rate_wpm = 170.0;
  ModelRouting routing = ModelRouting::defaults();
};

class DialogueManager {
 public:
  DialogueManager(const TopicGraph& graph, const NuanceSet& nuances, const PromptBuilder& prompts,
                  DialogueConfig config = {});

  /// Root topic, free flags everywhere, empty memory.
  DialogueState initial_state() const;

  /// Picks a filler and records it as the state's last filler.
  std::string choose_filler(DialogueState& state, const FillerPool& pool, Rng& rng) const;

  /// First nuance update, then topic, (sentiment,) and reply requests issued
  /// concurrently. Only a failed reply aborts; throws TurnFailed.
  TurnPhaseOneResult handle_first_request(const DialogueState& state, std::string_view user_sentence,
                                          std::string filler, ChatBackend& backend, Rng& rng) const;

  /// Second nuance update, topic planning and the continuation request.
  /// Throws PhaseOneMissing when the state has no pending first phase.
  TurnPhaseTwoResult handle_continuation_request(const DialogueState& state, ChatBackend& backend,
                                                 Rng& rng, std::string_view session = {}) const;

  /// Filler, phase one, phase two. On failure the returned state equals the
  /// input and the record is marked failed.
  TurnOutcome run_turn(const DialogueState& state, std::string_view user_sentence,
                       ChatBackend& backend, const FillerPool& pool, Rng& rng,
                       std::string_view session = {}) const;

  double utterance_seconds(std::string_view text) const;

  const TopicGraph& graph() const noexcept { return *graph_; }
  const NuanceSet& nuances() const noexcept { return *nuances_; }
  const PromptBuilder& prompts() const noexcept { return *prompts_; }
  const DialogueConfig& config() const noexcept { return config_; }

 private:
  const TopicGraph* graph_;
  const NuanceSet* nuances_;
  const PromptBuilder* prompts_;
  DialogueConfig config_;
};

/// Topics offered to the topic request: the current topic first, then its
/// related topics, `limit` in total.
std::vector<std::string> topic_request_candidates(const TopicGraph& graph, std::string_view current,
                                                  std::size_t limit);

/// Builds the timeline from utterance durations and response latencies.
TurnTimeline compute_timeline(double filler_s, double first_response_s, double reply_s,
                              double second_response_s, double continuation_s);

}  // namespace nuanced
