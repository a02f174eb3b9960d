#include "nuanced/dialogue.hpp"

#include <algorithm>
#include <chrono>
#include <future>

#include "nuanced/tokenizer.hpp"

namespace nuanced {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

struct Issued {
  PromptBundle bundle;
  std::optional<CompletionResult> result;
  std::exception_ptr error;
  RequestTelemetry telemetry;
};

TurnFailed::Cause classify(const std::exception_ptr& error) {
  try {
    std::rethrow_exception(error);
  } catch (const Timeout&) {
    return TurnFailed::Cause::timeout;
  } catch (const BackendUnreachable&) {
    return TurnFailed::Cause::unreachable;
  } catch (const MalformedUpstreamResponse&) {
    return TurnFailed::Cause::malformed;
  } catch (...) {
    return TurnFailed::Cause::other;
  }
}

std::string message_of(const std::exception_ptr& error) {
  try {
    std::rethrow_exception(error);
  } catch (const std::exception& e) {
    return e.what();
  } catch (...) {
    return "unknown error";
  }
}

RequestTelemetry base_telemetry(const PromptBundle& bundle, const CompletionRequest& request) {
  RequestTelemetry t;
  t.kind = bundle.kind;
  t.model = request.model;
  const auto cost = diversity_cost(bundle);
  t.system_tokens = cost.system_tokens;
  t.tone_detection_tokens = cost.tone_detection.tokens;
  for (auto kind : kAllNuances) t.nuance_tokens[index_of(kind)] = cost.per_nuance.at(kind).tokens;
  t.prompt_tokens = cost.total_tokens;
  return t;
}

void run_request(Issued& issued, ChatBackend& backend, const ModelRouting& routing) {
  const auto request = make_request(issued.bundle, routing);
  issued.telemetry = base_telemetry(issued.bundle, request);
  const auto start = Clock::now();
  try {
    issued.result = backend.complete(request);
    issued.telemetry.prompt_tokens = issued.result->prompt_tokens;
    issued.telemetry.completion_tokens = issued.result->completion_tokens;
    issued.telemetry.latency_ms = issued.result->latency_ms;
  } catch (...) {
    issued.error = std::current_exception();
    issued.telemetry.ok = false;
    issued.telemetry.error = message_of(issued.error);
    issued.telemetry.latency_ms = backend.simulated_clock() ? 0.0 : elapsed_ms(start);
  }
}

StepRecord step_all(NuanceState& nuances, const NuanceSet& set, bool continuation, Rng& rng,
                    bool keep_tone) {
  StepRecord rec;
  for (auto kind : kAllNuances) {
    auto& flags = nuances.flags_of(kind);
    if (!(keep_tone && kind == NuanceKind::tone)) {
      const auto& model = set[kind];
      flags = step_nuance(flags, continuation ? model.matrix_for_continuation() : model.reply, rng);
    }
    rec.sampled[index_of(kind)] = flags.active();
    rec.used[index_of(kind)] = flags.active();
  }
  return rec;
}

TurnRecord record_from_pending(const DialogueState& state, const PendingTurn& p,
                               std::string_view session) {
  TurnRecord r;
  r.session = std::string(session);
  r.turn = state.turn;
  r.user_sentence = p.user_sentence;
  r.filler = p.filler;
  r.reply = p.reply;
  r.detected_tone = p.detected_tone;
  r.tone_overridden = p.tone_overridden;
  r.detected_topic = p.detected_topic;
  r.sentiment = p.sentiment;
  r.topic_before = state.current_topic;
  r.steps.push_back(p.first_step);
  r.requests = p.requests;
  r.first_response_s = p.first_response_ms / 1000.0;
  r.warnings = p.warnings;
  return r;
}

}  // namespace

void validate_state(const DialogueState& state, const TopicGraph& graph) {
  validate(state.nuances);
  if (!graph.contains(state.current_topic))
    throw InvalidState("current topic '" + state.current_topic + "' is not in the ontology");
  for (const auto& [topic, score] : state.prefs.scores()) {
    if (!graph.contains(topic)) throw InvalidState("preference for unknown topic '" + topic + "'");
    if (score < -1 || score > 1) throw InvalidState("preference score out of range");
  }
  for (const auto& [topic, visits] : state.coverage.visits())
    if (!graph.contains(topic)) throw InvalidState("coverage for unknown topic '" + topic + "'");
  if (state.memory.size() > ConversationMemory::kCapacity) throw InvalidState("memory too long");
  if (state.pending) {
    if (state.pending->reply.empty()) throw InvalidState("pending turn has no reply");
    if (state.pending->detected_topic && !graph.contains(*state.pending->detected_topic))
      throw InvalidState("pending turn names an unknown topic");
  }
}

std::vector<std::string> topic_request_candidates(const TopicGraph& graph, std::string_view current,
                                                  std::size_t limit) {
  std::vector<std::string> out{std::string(current)};
  if (limit == 0) return out;
  auto related = candidate_topics(graph, current, limit - 1);
  out.insert(out.end(), related.begin(), related.end());
  return out;
}

TurnTimeline compute_timeline(double filler_s, double first_response_s, double reply_s,
                              double second_response_s, double continuation_s) {
  TurnTimeline t;
  t.filler_end = filler_s;
  t.reply_start = std::max(filler_s, first_response_s);
  t.reply_end = t.reply_start + reply_s;
  // The second request leaves as soon as the client starts the reply.
  t.continuation_start = std::max(t.reply_end, t.reply_start + second_response_s);
  t.continuation_end = t.continuation_start + continuation_s;
  return t;
}

DialogueManager::DialogueManager(const TopicGraph& graph, const NuanceSet& nuances,
                                 const PromptBuilder& prompts, DialogueConfig config)
    : graph_(&graph), nuances_(&nuances), prompts_(&prompts), config_(std::move(config)) {
  if (!(config_.speech_rate_wpm > 0.0)) throw ConfigError("speech rate must be positive");
}

DialogueState DialogueManager::initial_state() const {
  DialogueState s;
  s.current_topic = graph_->root();
  std::vector<NuanceValues> values;
  for (auto kind : kAllNuances) values.push_back((*nuances_)[kind].values);
  s.nuances = initial_nuance_state(std::move(values));
  return s;
}

double DialogueManager::utterance_seconds(std::string_view text) const {
  return static_cast<double>(count_words(text)) * 60.0 / config_.speech_rate_wpm;
}

std::string DialogueManager::choose_filler(DialogueState& state, const FillerPool& pool,
                                           Rng& rng) const {
  FillerPool view = pool;
  view.last_used = state.last_filler;
  auto filler = pick_filler(view, rng);
  state.last_filler = view.last_used;
  return filler;
}

TurnPhaseOneResult DialogueManager::handle_first_request(const DialogueState& input,
                                                         std::string_view user_sentence,
                                                         std::string filler, ChatBackend& backend,
                                                         Rng& rng) const {
  validate_state(input, *graph_);
  if (user_sentence.empty()) throw EmptySentence();
  DialogueState state = input;
  state.pending.reset();

  PendingTurn pending;
  pending.user_sentence = std::string(user_sentence);
  pending.filler = std::move(filler);
  pending.first_step = step_all(state.nuances, *nuances_, false, rng, false);

  const auto candidates =
      topic_request_candidates(*graph_, state.current_topic, config_.traversal.candidate_limit);
  const bool ask_sentiment = state.last_sentence_type == SentenceType::yes_no_question;

  std::vector<Issued> issued;
  issued.push_back({prompts_->build_topic_prompt(user_sentence, candidates), {}, {}, {}});
  if (ask_sentiment) issued.push_back({prompts_->build_sentiment_prompt(user_sentence), {}, {}, {}});
  issued.push_back({prompts_->build_reply_prompt(state.nuances, state.memory, user_sentence,
                                                 graph_->at(state.current_topic).label),
                    {},
                    {},
                    {}});

  const auto phase_start = Clock::now();
  {
    std::vector<std::future<void>> inflight;
    for (auto& req : issued)
      inflight.push_back(std::async(std::launch::async, [&req, &backend, this] {
        run_request(req, backend, config_.routing);
      }));
    for (auto& f : inflight) f.get();
  }
  const double wall_ms = elapsed_ms(phase_start);

  double slowest = 0.0;
  for (auto& req : issued) {
    pending.requests.push_back(req.telemetry);
    slowest = std::max(slowest, req.telemetry.latency_ms);
  }
  pending.first_response_ms = backend.simulated_clock() ? slowest : wall_ms;

  const Issued& reply_req = issued.back();
  auto fail = [&](TurnFailed::Cause cause, const std::string& what) {
    TurnRecord rec = record_from_pending(input, pending, {});
    rec.ok = false;
    rec.error = what;
    rec.failed_phase = "first";
    rec.steps.clear();
    return TurnFailed(cause, what, std::move(rec));
  };
  if (reply_req.error) throw fail(classify(reply_req.error), message_of(reply_req.error));

  Parsed<ToneReply> tone_reply;
  try {
    tone_reply = parse_tone_reply(reply_req.result->text);
  } catch (const EmptyReply& e) {
    throw fail(TurnFailed::Cause::malformed, e.what());
  }
  if (tone_reply.warning) pending.warnings.push_back("reply: " + *tone_reply.warning);
  pending.reply = tone_reply.value.reply;
  pending.detected_tone = tone_reply.value.tone;

  // Topic and sentiment degrade to "none" and "neutral" on failure.
  const Issued& topic_req = issued.front();
  if (topic_req.error) {
    pending.warnings.push_back("topic: " + message_of(topic_req.error));
  } else {
    auto parsed = parse_topic(topic_req.result->text, candidates);
    if (parsed.warning) pending.warnings.push_back("topic: " + *parsed.warning);
    pending.detected_topic = parsed.value;
  }

  if (ask_sentiment) {
    const Issued& sentiment_req = issued[1];
    Sentiment s = Sentiment::neutral;
    if (sentiment_req.error) {
      pending.warnings.push_back("sentiment: " + message_of(sentiment_req.error));
    } else {
      auto parsed = parse_sentiment(sentiment_req.result->text);
      if (parsed.warning) pending.warnings.push_back("sentiment: " + *parsed.warning);
      s = parsed.value;
    }
    pending.sentiment = s;
    state.prefs = update_preference(*graph_, state.prefs, state.current_topic, s);
  }

  if (pending.detected_tone != DetectedTone::none) {
    auto& tone = state.nuances.flags_of(NuanceKind::tone);
    tone = apply_tone_override(tone, pending.detected_tone);
    pending.tone_overridden = true;
  }

  TurnPhaseOneResult result;
  result.reply = pending.reply;
  result.detected_tone = pending.detected_tone;
  result.detected_topic = pending.detected_topic;
  result.detected_sentiment = pending.sentiment;
  result.requests = pending.requests;
  state.pending = std::move(pending);
  result.state = std::move(state);
  return result;
}

TurnPhaseTwoResult DialogueManager::handle_continuation_request(const DialogueState& input,
                                                                ChatBackend& backend, Rng& rng,
                                                                std::string_view session) const {
  if (!input.pending) throw PhaseOneMissing();
  validate_state(input, *graph_);
  DialogueState state = input;
  const PendingTurn pending = *state.pending;
  state.pending.reset();

  TurnRecord rec = record_from_pending(input, pending, session);

  // An override replaces the tone's Markov update for this step.
  StepRecord second = step_all(state.nuances, *nuances_, true, rng, pending.tone_overridden);
  const auto plan = next_topic(*graph_, state.coverage, state.prefs, state.current_topic,
                               pending.detected_topic, config_.traversal);
  if (is_question(plan.type)) second.used[index_of(NuanceKind::speech_act)] = kDirectiveIndex;

  Issued req{prompts_->build_continuation_prompt(state.nuances, state.memory, plan, *graph_,
                                                 pending.user_sentence, pending.reply),
             {},
             {},
             {}};
  const auto start = Clock::now();
  run_request(req, backend, config_.routing);
  const double wall_ms = elapsed_ms(start);
  rec.requests.push_back(req.telemetry);
  rec.plan = plan;

  auto fail = [&](TurnFailed::Cause cause, const std::string& what) {
    rec.ok = false;
    rec.error = what;
    rec.failed_phase = "continuation";
    rec.steps.push_back(second);
    return TurnFailed(cause, what, rec);
  };
  if (req.error) throw fail(classify(req.error), message_of(req.error));
  const std::string continuation{[&] {
    std::string_view t = req.result->text;
    while (!t.empty() && (t.front() == ' ' || t.front() == '\n' || t.front() == '\t' || t.front() == '\r'))
      t.remove_prefix(1);
    while (!t.empty() && (t.back() == ' ' || t.back() == '\n' || t.back() == '\t' || t.back() == '\r'))
      t.remove_suffix(1);
    return std::string(t);
  }()};
  if (continuation.empty()) throw fail(TurnFailed::Cause::malformed, "continuation is empty");

  state.current_topic = plan.topic;
  state.coverage.record_visit(*graph_, plan.topic);
  state.last_sentence_type = plan.type;
  state.memory.append(pending.reply + " " + continuation, pending.user_sentence);
  ++state.turn;

  const double second_ms = backend.simulated_clock() ? req.telemetry.latency_ms : wall_ms;
  rec.continuation = continuation;
  rec.steps.push_back(second);
  rec.filler_duration_s = utterance_seconds(pending.filler);
  rec.reply_duration_s = utterance_seconds(pending.reply);
  rec.continuation_duration_s = utterance_seconds(continuation);
  rec.second_response_s = second_ms / 1000.0;
  rec.timeline = compute_timeline(rec.filler_duration_s, rec.first_response_s, rec.reply_duration_s,
                                  rec.second_response_s, rec.continuation_duration_s);

  TurnPhaseTwoResult result;
  result.continuation = continuation;
  result.sentence_type = plan.type;
  result.continuation_latency_ms = req.telemetry.latency_ms;
  result.record = std::move(rec);
  result.state = std::move(state);
  return result;
}

TurnOutcome DialogueManager::run_turn(const DialogueState& input, std::string_view user_sentence,
                                      ChatBackend& backend, const FillerPool& pool, Rng& rng,
                                      std::string_view session) const {
  DialogueState working = input;
  TurnOutcome out;
  out.filler = choose_filler(working, pool, rng);
  try {
    auto one = handle_first_request(working, user_sentence, out.filler, backend, rng);
    out.reply = one.reply;
    auto two = handle_continuation_request(one.state, backend, rng, session);
    out.continuation = two.continuation;
    out.state = std::move(two.state);
    out.record = std::move(two.record);
  } catch (const TurnFailed& e) {
    out.state = input;
    out.record = e.record();
    out.record.session = std::string(session);
    out.record.turn = input.turn;
    out.record.filler = out.filler;
    out.record.user_sentence = std::string(user_sentence);
    out.reply.clear();
    out.continuation.clear();
  }
  return out;
}

}  // namespace nuanced
