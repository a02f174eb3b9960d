#include <doctest.h>

#include "nuanced/codec.hpp"
#include "nuanced/errors.hpp"

using namespace nuanced;
using nlohmann::json;

namespace {

const TopicGraph& graph() {
  static const TopicGraph g = demo_topic_graph();
  return g;
}

std::string random_text(Rng& rng) {
  static const std::vector<std::string> pieces{"ciao", " ", "Genova", "\"", "\\", "\n", "è", "🙂", "{}", "TONE:", "a"};
  std::string s;
  const auto n = uniform_index(rng, 12);
  for (std::uint64_t i = 0; i < n; ++i) s += pieces[uniform_index(rng, pieces.size())];
  return s;
}

const std::string& random_topic(Rng& rng) { return graph().topics()[uniform_index(rng, graph().size())].id; }

RequestTelemetry random_telemetry(Rng& rng) {
  RequestTelemetry t;
  t.kind = kAllRequests[uniform_index(rng, 4)];
  t.model = random_text(rng);
  t.ok = uniform_index(rng, 2);
  if (!t.ok) t.error = random_text(rng);
  t.prompt_tokens = uniform_index(rng, 5000);
  t.completion_tokens = uniform_index(rng, 200);
  t.latency_ms = uniform01(rng) * 20000.0;
  t.system_tokens = uniform_index(rng, 800);
  t.tone_detection_tokens = uniform_index(rng, 200);
  for (auto& n : t.nuance_tokens) n = uniform_index(rng, 50);
  return t;
}

StepRecord random_step(Rng& rng, const NuanceState& n) {
  StepRecord s;
  for (auto k : kAllNuances) {
    s.sampled[index_of(k)] = uniform_index(rng, n.flags_of(k).size());
    s.used[index_of(k)] = uniform_index(rng, n.flags_of(k).size());
  }
  return s;
}

DialogueState random_state(Rng& rng) {
  DialogueState s;
  s.current_topic = random_topic(rng);
  for (std::uint64_t i = 0, n = uniform_index(rng, 6); i < n; ++i)
    s.coverage.set(random_topic(rng), static_cast<std::uint32_t>(uniform_index(rng, 10)));
  for (std::uint64_t i = 0, n = uniform_index(rng, 6); i < n; ++i)
    s.prefs.set(graph(), random_topic(rng), static_cast<int>(uniform_index(rng, 3)) - 1);
  for (std::uint64_t i = 0, n = uniform_index(rng, 8); i < n; ++i) s.memory.append(random_text(rng), random_text(rng));

  std::vector<NuanceValues> values;
  for (auto k : kAllNuances) values.push_back(default_values(k));
  if (uniform_index(rng, 2)) values[index_of(NuanceKind::place)] = {NuanceKind::place, {"environment", "city"}, {"garden", "Savona"}};
  s.nuances = initial_nuance_state(values);
  for (auto k : kAllNuances) {
    const auto size = s.nuances.flags_of(k).size();
    s.nuances.flags_of(k) = FlagVector(k, size, uniform_index(rng, size));
  }
  if (uniform_index(rng, 3)) s.last_sentence_type = static_cast<SentenceType>(uniform_index(rng, 5));
  s.turn = uniform_index(rng, 1000);
  if (uniform_index(rng, 2)) s.last_filler = uniform_index(rng, 24);

  if (uniform_index(rng, 2)) {
    PendingTurn p;
    p.user_sentence = random_text(rng) + "x";
    p.filler = random_text(rng);
    p.reply = random_text(rng) + "y";
    if (uniform_index(rng, 2)) p.detected_topic = random_topic(rng);
    if (uniform_index(rng, 2)) p.sentiment = static_cast<Sentiment>(uniform_index(rng, 3));
    p.detected_tone = static_cast<DetectedTone>(uniform_index(rng, 3));
    p.tone_overridden = p.detected_tone != DetectedTone::none;
    p.first_step = random_step(rng, s.nuances);
    for (std::uint64_t i = 0, n = uniform_index(rng, 4); i < n; ++i) p.requests.push_back(random_telemetry(rng));
    p.first_response_ms = uniform01(rng) * 9000.0;
    for (std::uint64_t i = 0, n = uniform_index(rng, 3); i < n; ++i) p.warnings.push_back(random_text(rng));
    s.pending = std::move(p);
  }
  return s;
}

}  // namespace

TEST_CASE("dialogue state round-trips through its text form") {
  Rng rng(77);
  for (int i = 0; i < 1000; ++i) {
    const auto state = random_state(rng);
    const auto text = to_json(state).dump();
    const auto back = dialogue_state_from_json(json::parse(text));
    REQUIRE(back == state);
    CHECK_NOTHROW(validate_state(back, graph()));
    CHECK(to_json(back).dump() == text);
  }
}

TEST_CASE("state decoding rejects malformed documents") {
  Rng rng(1);
  auto good = to_json(random_state(rng));
  CHECK(good["version"] == DialogueState::kVersion);

  auto bad = good;
  bad["version"] = 99;
  CHECK_THROWS_AS(dialogue_state_from_json(bad), StateFormatError);
  bad = good;
  bad.erase("version");
  CHECK_THROWS_AS(dialogue_state_from_json(bad), StateFormatError);
  bad = good;
  bad["nuances"] = "garbage";
  CHECK_THROWS_AS(dialogue_state_from_json(bad), StateFormatError);
  bad = good;
  bad["nuances"]["tone"]["flags"] = json::array({1, 1, 0, 0, 0, 0, 0, 0, 0});
  CHECK_THROWS_AS(dialogue_state_from_json(bad), StateFormatError);
  bad = good;
  bad["preferences"] = {{"music", 7}};
  CHECK_THROWS_AS(dialogue_state_from_json(bad), StateFormatError);
  bad = good;
  bad["last_sentence_type"] = "rhetorical";
  CHECK_THROWS_AS(dialogue_state_from_json(bad), StateFormatError);
  CHECK_THROWS_AS(dialogue_state_from_json(json::array()), StateFormatError);
  CHECK_THROWS_AS(dialogue_state_from_json(nullptr), StateFormatError);
}

TEST_CASE("state decoding survives random mutations") {
  Rng rng(5);
  for (int i = 0; i < 2000; ++i) {
    auto doc = to_json(random_state(rng));
    auto flat = doc.flatten();
    auto it = flat.begin();
    std::advance(it, static_cast<std::ptrdiff_t>(uniform_index(rng, flat.size())));
    switch (uniform_index(rng, 4)) {
      case 0: *it = nullptr; break;
      case 1: *it = "x"; break;
      case 2: *it = -1; break;
      default: *it = true; break;
    }
    try {
      (void)dialogue_state_from_json(flat.unflatten());
    } catch (const StateFormatError&) {
    }
  }
}

TEST_CASE("turn records round-trip") {
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    auto state = random_state(rng);
    TurnRecord r;
    r.session = "s" + std::to_string(i);
    r.turn = uniform_index(rng, 300);
    r.ok = uniform_index(rng, 2);
    if (!r.ok) {
      r.error = random_text(rng);
      r.failed_phase = uniform_index(rng, 2) ? "first" : "continuation";
    }
    r.user_sentence = random_text(rng);
    r.filler = random_text(rng);
    r.reply = random_text(rng);
    r.continuation = random_text(rng);
    r.detected_tone = static_cast<DetectedTone>(uniform_index(rng, 3));
    r.tone_overridden = uniform_index(rng, 2);
    if (uniform_index(rng, 2)) r.detected_topic = random_topic(rng);
    if (uniform_index(rng, 2)) r.sentiment = static_cast<Sentiment>(uniform_index(rng, 3));
    r.topic_before = random_topic(rng);
    if (uniform_index(rng, 2))
      r.plan = TopicPlan{random_topic(rng), static_cast<SentenceType>(uniform_index(rng, 5)), uniform_index(rng, 2) == 1};
    for (std::uint64_t k = 0, n = uniform_index(rng, 3); k < n; ++k) r.steps.push_back(random_step(rng, state.nuances));
    for (std::uint64_t k = 0, n = uniform_index(rng, 5); k < n; ++k) r.requests.push_back(random_telemetry(rng));
    r.filler_duration_s = uniform01(rng);
    r.reply_duration_s = uniform01(rng) * 5;
    r.continuation_duration_s = uniform01(rng) * 5;
    r.first_response_s = uniform01(rng) * 4;
    r.second_response_s = uniform01(rng) * 4;
    r.timeline = compute_timeline(r.filler_duration_s, r.first_response_s, r.reply_duration_s, r.second_response_s,
                                  r.continuation_duration_s);
    r.warnings = {random_text(rng)};

    const auto line = to_json(r).dump();
    REQUIRE(turn_record_from_json(json::parse(line)) == r);
  }
}

TEST_CASE("log reader skips blank lines and fragments") {
  TurnRecord r;
  r.session = "a";
  r.turn = 3;
  const std::string text = "\n" + json{{"record", "first_phase"}, {"turn", 3}}.dump() + "\n" + to_json(r).dump() +
                           "\n\n" + to_json(r).dump() + "\n";
  auto log = read_turn_log(text);
  REQUIRE(log.size() == 2);
  CHECK(log[0] == r);
  CHECK_THROWS(read_turn_log("{not json}\n"));
  CHECK_THROWS(read_turn_log_file("/nonexistent/log.jsonl"));
}
