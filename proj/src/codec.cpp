#include "nuanced/codec.hpp"

#include <fstream>
#include <sstream>

#include "nuanced/errors.hpp"

namespace nuanced {

using nlohmann::json;

namespace {

template <class T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

std::optional<std::string> opt_string(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<std::string>();
}

json steps_json(const StepRecord& s) {
  json sampled, used;
  for (auto kind : kAllNuances) {
    sampled[std::string(to_string(kind))] = s.sampled[index_of(kind)];
    used[std::string(to_string(kind))] = s.used[index_of(kind)];
  }
  return {{"sampled", sampled}, {"used", used}};
}

StepRecord step_from_json(const json& j) {
  StepRecord s;
  for (auto kind : kAllNuances) {
    const std::string name{to_string(kind)};
    s.sampled[index_of(kind)] = j.at("sampled").at(name).get<std::size_t>();
    s.used[index_of(kind)] = j.at("used").at(name).get<std::size_t>();
  }
  return s;
}

DetectedTone tone_from_json(const json& j) {
  auto t = tone_from_name(j.get<std::string>());
  if (!t) throw StateFormatError("unknown tone label");
  return *t;
}

std::optional<Sentiment> sentiment_from_json(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  auto s = sentiment_from_string(j[key].get<std::string>());
  if (!s) throw StateFormatError("unknown sentiment label");
  return s;
}

RequestTelemetry telemetry_from_json(const json& j) {
  RequestTelemetry t;
  auto kind = request_kind_from_string(j.at("kind").get<std::string>());
  if (!kind) throw StateFormatError("unknown request kind");
  t.kind = *kind;
  t.model = j.value("model", std::string{});
  t.ok = j.value("ok", true);
  t.error = opt_string(j, "error");
  t.prompt_tokens = j.value("prompt_tokens", std::size_t{0});
  t.completion_tokens = j.value("completion_tokens", std::size_t{0});
  t.latency_ms = j.value("latency_ms", 0.0);
  t.system_tokens = j.value("system_tokens", std::size_t{0});
  t.tone_detection_tokens = j.value("tone_detection_tokens", std::size_t{0});
  if (j.contains("nuance_tokens"))
    for (auto kind : kAllNuances)
      t.nuance_tokens[index_of(kind)] =
          j["nuance_tokens"].value(std::string(to_string(kind)), std::size_t{0});
  return t;
}

json pending_json(const PendingTurn& p) {
  json requests = json::array();
  for (const auto& r : p.requests) requests.push_back(to_json(r));
  return {{"user_sentence", p.user_sentence},
          {"filler", p.filler},
          {"reply", p.reply},
          {"detected_topic", opt(p.detected_topic)},
          {"sentiment", p.sentiment ? json(to_string(*p.sentiment)) : json(nullptr)},
          {"detected_tone", tone_name(p.detected_tone)},
          {"tone_overridden", p.tone_overridden},
          {"first_step", steps_json(p.first_step)},
          {"requests", requests},
          {"first_response_ms", p.first_response_ms},
          {"warnings", p.warnings}};
}

PendingTurn pending_from_json(const json& j) {
  PendingTurn p;
  p.user_sentence = j.at("user_sentence").get<std::string>();
  p.filler = j.at("filler").get<std::string>();
  p.reply = j.at("reply").get<std::string>();
  p.detected_topic = opt_string(j, "detected_topic");
  p.sentiment = sentiment_from_json(j, "sentiment");
  p.detected_tone = tone_from_json(j.at("detected_tone"));
  p.tone_overridden = j.at("tone_overridden").get<bool>();
  p.first_step = step_from_json(j.at("first_step"));
  for (const auto& r : j.at("requests")) p.requests.push_back(telemetry_from_json(r));
  p.first_response_ms = j.at("first_response_ms").get<double>();
  p.warnings = j.at("warnings").get<std::vector<std::string>>();
  return p;
}

}  // namespace

json to_json(const RequestTelemetry& t) {
  json nuance_tokens;
  for (auto kind : kAllNuances) nuance_tokens[std::string(to_string(kind))] = t.nuance_tokens[index_of(kind)];
  return {{"kind", to_string(t.kind)},
          {"model", t.model},
          {"ok", t.ok},
          {"error", opt(t.error)},
          {"prompt_tokens", t.prompt_tokens},
          {"completion_tokens", t.completion_tokens},
          {"latency_ms", t.latency_ms},
          {"system_tokens", t.system_tokens},
          {"tone_detection_tokens", t.tone_detection_tokens},
          {"nuance_tokens", nuance_tokens}};
}

// ── dialogue state ──────────────────────────────────────────────

json to_json(const DialogueState& s) {
  json nuances;
  for (auto kind : kAllNuances) {
    const auto& v = s.nuances.values_of(kind);
    nuances[std::string(to_string(kind))] = {
        {"fields", v.fields}, {"values", v.labels}, {"flags", s.nuances.flags_of(kind).bits()}};
  }
  json memory = json::array();
  for (const auto& t : s.memory.turns()) memory.push_back({{"user", t.user}, {"dialogue", t.dialogue}});

  return {{"version", DialogueState::kVersion},
          {"current_topic", s.current_topic},
          {"coverage", s.coverage.visits()},
          {"preferences", s.prefs.scores()},
          {"memory", memory},
          {"nuances", nuances},
          {"last_sentence_type",
           s.last_sentence_type ? json(to_string(*s.last_sentence_type)) : json(nullptr)},
          {"turn", s.turn},
          {"last_filler", opt(s.last_filler)},
          {"pending", s.pending ? pending_json(*s.pending) : json(nullptr)}};
}

DialogueState dialogue_state_from_json(const json& j) {
  try {
    if (!j.is_object()) throw StateFormatError("dialogue state must be an object");
    if (j.at("version").get<int>() != DialogueState::kVersion)
      throw StateFormatError("unsupported dialogue state version");
    DialogueState s;
    s.current_topic = j.at("current_topic").get<std::string>();
    for (const auto& [topic, count] : j.at("coverage").items()) s.coverage.set(topic, count.get<std::uint32_t>());

    for (const auto& [topic, score] : j.at("preferences").get<std::map<std::string, int>>()) {
      if (score < -1 || score > 1) throw StateFormatError("preference score out of range");
      s.prefs.assign(topic, score);
    }

    const auto& memory = j.at("memory");
    if (!memory.is_array() || memory.size() > ConversationMemory::kCapacity)
      throw StateFormatError("memory must be an array of at most five turns");
    for (const auto& t : memory)
      s.memory.append(t.at("dialogue").get<std::string>(), t.at("user").get<std::string>());

    const auto& nuances = j.at("nuances");
    for (auto kind : kAllNuances) {
      const auto& n = nuances.at(std::string(to_string(kind)));
      NuanceValues v{kind, n.at("fields").get<std::vector<std::string>>(),
                     n.at("values").get<std::vector<std::string>>()};
      const auto bits = n.at("flags").get<std::vector<int>>();
      if (bits.size() != v.flag_count()) throw StateFormatError("flag vector length mismatch");
      s.nuances.flags.push_back(FlagVector::from_bits(kind, bits));
      s.nuances.values.push_back(std::move(v));
    }
    validate(s.nuances);

    if (!j.at("last_sentence_type").is_null()) {
      auto t = sentence_type_from_string(j["last_sentence_type"].get<std::string>());
      if (!t) throw StateFormatError("unknown sentence type");
      s.last_sentence_type = t;
    }
    s.turn = j.at("turn").get<std::uint64_t>();
    if (!j.at("last_filler").is_null()) s.last_filler = j["last_filler"].get<std::size_t>();
    if (!j.at("pending").is_null()) s.pending = pending_from_json(j["pending"]);
    return s;
  } catch (const StateFormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw StateFormatError(std::string("malformed dialogue state: ") + e.what());
  }
}

// ── turn records ────────────────────────────────────────────────

json to_json(const TurnRecord& r) {
  json steps = json::array();
  for (const auto& s : r.steps) steps.push_back(steps_json(s));
  json requests = json::array();
  for (const auto& t : r.requests) requests.push_back(to_json(t));
  json plan = nullptr;
  if (r.plan) plan = {{"topic", r.plan->topic}, {"sentence_type", to_string(r.plan->type)}, {"jump", r.plan->jump}};
  return {{"record", "turn"},
          {"session", r.session},
          {"turn", r.turn},
          {"ok", r.ok},
          {"error", opt(r.error)},
          {"failed_phase", opt(r.failed_phase)},
          {"user_sentence", r.user_sentence},
          {"filler", r.filler},
          {"reply", r.reply},
          {"continuation", r.continuation},
          {"detected_tone", tone_name(r.detected_tone)},
          {"tone_overridden", r.tone_overridden},
          {"detected_topic", opt(r.detected_topic)},
          {"sentiment", r.sentiment ? json(to_string(*r.sentiment)) : json(nullptr)},
          {"topic_before", r.topic_before},
          {"plan", plan},
          {"steps", steps},
          {"requests", requests},
          {"durations_s",
           {{"filler", r.filler_duration_s},
            {"reply", r.reply_duration_s},
            {"continuation", r.continuation_duration_s}}},
          {"responses_s", {{"first", r.first_response_s}, {"second", r.second_response_s}}},
          {"timeline_s",
           {{"t1", r.timeline.filler_end},
            {"t2", r.timeline.reply_start},
            {"t3", r.timeline.reply_end},
            {"t4", r.timeline.continuation_start},
            {"end", r.timeline.continuation_end}}},
          {"warnings", r.warnings}};
}

TurnRecord turn_record_from_json(const json& j) {
  try {
    TurnRecord r;
    r.session = j.at("session").get<std::string>();
    r.turn = j.at("turn").get<std::uint64_t>();
    r.ok = j.at("ok").get<bool>();
    r.error = opt_string(j, "error");
    r.failed_phase = opt_string(j, "failed_phase");
    r.user_sentence = j.at("user_sentence").get<std::string>();
    r.filler = j.at("filler").get<std::string>();
    r.reply = j.at("reply").get<std::string>();
    r.continuation = j.at("continuation").get<std::string>();
    r.detected_tone = tone_from_json(j.at("detected_tone"));
    r.tone_overridden = j.at("tone_overridden").get<bool>();
    r.detected_topic = opt_string(j, "detected_topic");
    r.sentiment = sentiment_from_json(j, "sentiment");
    r.topic_before = j.at("topic_before").get<std::string>();
    if (!j.at("plan").is_null()) {
      const auto& p = j["plan"];
      auto type = sentence_type_from_string(p.at("sentence_type").get<std::string>());
      if (!type) throw StateFormatError("unknown sentence type");
      r.plan = TopicPlan{p.at("topic").get<std::string>(), *type, p.at("jump").get<bool>()};
    }
    for (const auto& s : j.at("steps")) r.steps.push_back(step_from_json(s));
    for (const auto& t : j.at("requests")) r.requests.push_back(telemetry_from_json(t));
    const auto& d = j.at("durations_s");
    r.filler_duration_s = d.at("filler").get<double>();
    r.reply_duration_s = d.at("reply").get<double>();
    r.continuation_duration_s = d.at("continuation").get<double>();
    r.first_response_s = j.at("responses_s").at("first").get<double>();
    r.second_response_s = j.at("responses_s").at("second").get<double>();
    const auto& t = j.at("timeline_s");
    r.timeline = {t.at("t1").get<double>(), t.at("t2").get<double>(), t.at("t3").get<double>(),
                  t.at("t4").get<double>(), t.at("end").get<double>()};
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    return r;
  } catch (const StateFormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw StateFormatError(std::string("malformed turn record: ") + e.what());
  }
}

std::vector<TurnRecord> read_turn_log(std::string_view text) {
  std::vector<TurnRecord> out;
  std::istringstream in{std::string(text)};
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw StateFormatError("log line " + std::to_string(lineno) + ": " + e.what());
    }
    if (j.value("record", std::string{}) != "turn") continue;
    out.push_back(turn_record_from_json(j));
  }
  return out;
}

std::vector<TurnRecord> read_turn_log_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open log " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return read_turn_log(ss.str());
}

}  // namespace nuanced
