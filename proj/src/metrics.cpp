#include "nuanced/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <httplib.h>

#include "nuanced/codec.hpp"
#include "nuanced/errors.hpp"

namespace nuanced {

using nlohmann::json;

namespace {

constexpr std::array<DetectedTone, 3> kToneOrder = {DetectedTone::humorous, DetectedTone::aggressive,
                                                    DetectedTone::none};

std::size_t tone_slot(DetectedTone t) { return static_cast<std::size_t>(t); }

double normal01(Rng& rng) {
  // Box-Muller on the portable uniform source.
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string full(double v) { return fmt("%.17g", v); }
std::string pct1(double v) { return fmt("%.1f", v) + "%"; }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string join_csv(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += csv_field(fields[i]);
  }
  return out + "\n";
}

std::string nuance_title(NuanceKind kind) {
  switch (kind) {
    case NuanceKind::diversity: return "Diversity nuance";
    case NuanceKind::time: return "Time nuance";
    case NuanceKind::place: return "Place nuance";
    case NuanceKind::tone: return "Tone nuance";
    case NuanceKind::speech_act: return "Speech act nuance";
  }
  return {};
}

std::string steady_symbol(NuanceKind kind) {
  switch (kind) {
    case NuanceKind::diversity: return "ê_d";
    case NuanceKind::time: return "ê_t";
    case NuanceKind::place: return "ê_p";
    case NuanceKind::tone: return "ê_n";
    case NuanceKind::speech_act: return "ê_s";
  }
  return {};
}

std::vector<std::string> slot_labels(const NuanceValues& v) {
  const bool named_by_label = v.kind == NuanceKind::tone || v.kind == NuanceKind::speech_act;
  std::vector<std::string> out = named_by_label ? v.labels : v.fields;
  out.push_back(v.kind == NuanceKind::tone ? "neutral" : "free");
  return out;
}

void finalize(NuanceUsage& u) {
  u.max_abs_deviation = 0.0;
  for (const auto& r : u.rows)
    u.max_abs_deviation = std::max(u.max_abs_deviation, std::abs(r.overall_pct / 100.0 - r.steady));
}

// Fixed-width text table.
std::string plain_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (width.size() <= i) width.push_back(0);
      // Column widths count code points so labels like ê line up.
      std::size_t cps = 0;
      for (unsigned char c : r[i]) cps += (c & 0xC0) != 0x80;
      width[i] = std::max(width[i], cps);
    }
  std::string out;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& r = rows[k];
    for (std::size_t i = 0; i < r.size(); ++i) {
      std::size_t cps = 0;
      for (unsigned char c : r[i]) cps += (c & 0xC0) != 0x80;
      out += r[i];
      if (i + 1 < r.size()) out += std::string(width[i] - cps + 2, ' ');
    }
    out += "\n";
    if (k == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      out += std::string(total - 2, '-') + "\n";
    }
  }
  return out;
}

std::string markdown_table(const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out += "|";
    for (const auto& c : rows[k]) out += " " + c + " |";
    out += "\n";
    if (k == 0) {
      out += "|";
      for (std::size_t i = 0; i < rows[k].size(); ++i) out += i == 0 ? "---|" : "---:|";
      out += "\n";
    }
  }
  return out;
}

std::string table(TableFormat f, const std::string& title, const std::vector<std::vector<std::string>>& rows) {
  if (f == TableFormat::markdown) return "### " + title + "\n\n" + markdown_table(rows) + "\n";
  return title + "\n\n" + plain_table(rows) + "\n";
}

std::string request_title(RequestKind k) {
  switch (k) {
    case RequestKind::topic: return "Topic request";
    case RequestKind::sentiment: return "Sentiment request";
    case RequestKind::reply: return "Reply request";
    case RequestKind::continuation: return "Continuation request";
  }
  return {};
}

}  // namespace

// ── experiments ─────────────────────────────────────────────────

ScriptedExperiment ScriptedExperiment::parse(std::string_view text) {
  ScriptedExperiment exp;
  std::istringstream in{std::string(text)};
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "script line " + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ConfigError(where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("sentence") || !j["sentence"].is_string())
      throw ConfigError(where + ": sentence is required");
    ScriptLine l;
    l.sentence = j["sentence"].get<std::string>();
    if (l.sentence.empty()) throw ConfigError(where + ": sentence is empty");
    if (!j.contains("intended_tone") || !j["intended_tone"].is_string())
      throw ConfigError(where + ": intended_tone is required");
    const auto tone = tone_from_name(j["intended_tone"].get<std::string>());
    if (!tone) throw ConfigError(where + ": intended_tone must be humorous, aggressive or neutral");
    l.intended = *tone;
    if (j.contains("topic") && j["topic"].is_string()) l.topic = j["topic"].get<std::string>();
    if (j.contains("sentiment") && j["sentiment"].is_string()) {
      l.sentiment = sentiment_from_string(j["sentiment"].get<std::string>());
      if (!l.sentiment) throw ConfigError(where + ": unknown sentiment");
    }
    exp.lines.push_back(std::move(l));
  }
  return exp;
}

ScriptedExperiment ScriptedExperiment::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open script " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

LatencyMoments published_latency(RequestKind kind) {
  switch (kind) {
    case RequestKind::sentiment: return {1.49, 0.89, 0.58, 7.06};
    case RequestKind::topic: return {1.50, 0.90, 0.57, 4.64};
    case RequestKind::reply: return {3.17, 1.59, 1.24, 16.15};
    case RequestKind::continuation: return {2.39, 1.59, 0.81, 12.02};
  }
  return {};
}

ToneMatrix published_tone_confusion() {
  return {{{0.69, 0.02, 0.29}, {0.44, 0.15, 0.41}, {0.01, 0.00, 0.99}}};
}

std::vector<double> sample_latencies(const LatencyMoments& m, std::size_t n, Rng& rng) {
  // Shifted lognormal above min_s, truncated at max_s.
  const double shift_mean = m.mean_s - m.min_s;
  const double s2 = std::log1p((m.sd_s * m.sd_s) / (shift_mean * shift_mean));
  const double mu = std::log(shift_mean) - s2 / 2.0;
  const double sigma = std::sqrt(s2);
  std::vector<double> xs;
  xs.reserve(n);
  while (xs.size() < n) {
    const double x = m.min_s + std::exp(mu + sigma * normal01(rng));
    if (x <= m.max_s) xs.push_back(x);
  }
  if (n < 2) return xs;
  for (int pass = 0; pass < 100; ++pass) {
    const auto d = describe(xs);
    if (d.sd <= 0.0) break;
    if (std::abs(d.mean - m.mean_s) < 1e-9 * m.mean_s && std::abs(d.sd - m.sd_s) < 1e-9 * m.sd_s) break;
    for (auto& x : xs) x = std::clamp(m.mean_s + (x - d.mean) * (m.sd_s / d.sd), m.min_s, m.max_s);
  }
  return xs;
}

std::vector<DetectedTone> assign_detected_tones(const ScriptedExperiment& exp, ToneModel model,
                                                std::uint64_t seed) {
  std::vector<DetectedTone> out(exp.lines.size());
  for (std::size_t i = 0; i < exp.lines.size(); ++i) out[i] = exp.lines[i].intended;
  if (model == ToneModel::echo) return out;

  const auto rates = published_tone_confusion();
  Rng rng = derive_rng(seed, "tone-model", 0, 0);
  for (auto intended : kToneOrder) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < exp.lines.size(); ++i)
      if (exp.lines[i].intended == intended) idx.push_back(i);
    const std::size_t n = idx.size();
    if (n == 0) continue;
    const auto& row = rates[tone_slot(intended)];
    // Largest-remainder apportionment of n over the row.
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> rem{};
    std::size_t given = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double exact = row[c] * static_cast<double>(n);
      counts[c] = static_cast<std::size_t>(std::floor(exact + 1e-9));
      rem[c] = exact - static_cast<double>(counts[c]);
      given += counts[c];
    }
    while (given < n) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < 3; ++c)
        if (rem[c] > rem[best]) best = c;
      ++counts[best];
      rem[best] = -1.0;
      ++given;
    }
    std::vector<DetectedTone> labels;
    for (std::size_t c = 0; c < 3; ++c) labels.insert(labels.end(), counts[c], kToneOrder[c]);
    for (std::size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[uniform_index(rng, i)]);
    for (std::size_t k = 0; k < n; ++k) out[idx[k]] = labels[k];
  }
  return out;
}

MockScript generate_mock_script(const ScriptedExperiment& exp, const MockGenerationOptions& opt) {
  static const std::vector<std::string> replies = {
      "That is a lovely thing to share, and it makes me think about how small moments shape our days.",
      "I understand what you mean, and I appreciate that you told me about it so openly.",
      "What a picture you paint with your words, I can almost imagine being there with you.",
      "It sounds like this matters to you, and I am glad we can talk about it together today.",
      "You always find an interesting way to look at things, and I enjoy hearing your point of view.",
  };
  static const std::vector<std::string> continuations = {
      "Would you like to tell me more about it?",
      "What do you remember most fondly about it?",
      "I think we could talk about this a little longer.",
      "Let us keep talking about this, shall we?",
      "Tell me, what was the best part for you?",
  };

  const std::size_t n = exp.lines.size();
  const auto tones = assign_detected_tones(exp, opt.tone_model, opt.seed);
  std::map<RequestKind, std::vector<double>> lat;
  for (auto kind : kAllRequests) {
    if (opt.sample_latency) {
      Rng rng = derive_rng(opt.seed, "latency", static_cast<std::uint64_t>(kind), 0);
      auto xs = sample_latencies(published_latency(kind), n, rng);
      for (auto& x : xs) x = std::round(x * 1e6) / 1e3;  // ms with µs resolution
      lat[kind] = std::move(xs);
    } else {
      lat[kind] = std::vector<double>(n, opt.constant_latency_ms);
    }
  }

  MockScript script;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = exp.lines[i];
    script.entries.push_back({RequestKind::topic, l.sentence, l.topic.value_or("NONE"),
                              lat[RequestKind::topic][i], false, std::nullopt});
    script.entries.push_back({RequestKind::reply, l.sentence,
                              "TONE: " + std::string(tone_name(tones[i])) + "\n" + replies[i % replies.size()],
                              lat[RequestKind::reply][i], false, std::nullopt});
    script.entries.push_back({RequestKind::continuation, std::nullopt, continuations[i % continuations.size()],
                              lat[RequestKind::continuation][i], false, std::nullopt});
  }
  // Sentiment is not asked every turn, so its entries repeat and are keyed by
  // sentence, longest first so that a sentence contained in another never
  // steals the longer one's answer.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return exp.lines[a].sentence.size() > exp.lines[b].sentence.size();
  });
  for (auto i : order) {
    const auto& l = exp.lines[i];
    script.entries.push_back({RequestKind::sentiment, l.sentence,
                              std::string(to_string(l.sentiment.value_or(Sentiment::neutral))),
                              lat[RequestKind::sentiment][i], true, std::nullopt});
  }
  for (auto& e : MockScript::defaults().entries) script.entries.push_back(e);
  return script;
}

// ── replay ──────────────────────────────────────────────────────

HubTransport in_process_transport(Hub& hub) {
  return [&hub](const std::string& path, const json& body) -> std::pair<int, json> {
    try {
      if (path == "/v1/dialogue/first") return {200, hub.first(body)};
      if (path == "/v1/dialogue/continuation") return {200, hub.continuation(body)};
      return {404, {{"error", "not_found"}}};
    } catch (const HubError& e) {
      return {e.status(), e.body()};
    }
  };
}

HubTransport http_transport(const std::string& base_url) {
  auto client = std::make_shared<httplib::Client>(base_url);
  client->set_read_timeout(120, 0);
  client->set_connection_timeout(10, 0);
  return [client](const std::string& path, const json& body) -> std::pair<int, json> {
    auto res = client->Post(path, body.dump(), "application/json");
    if (!res)
      return {0, {{"error", "unreachable"}, {"message", httplib::to_string(res.error())}}};
    json parsed;
    try {
      parsed = json::parse(res->body);
    } catch (const json::parse_error&) {
      parsed = {{"error", "bad_body"}, {"message", res->body}};
    }
    return {res->status, parsed};
  };
}

std::vector<TurnRecord> replay(const ScriptedExperiment& exp, const HubTransport& transport,
                               const std::string& session) {
  std::vector<TurnRecord> records;
  json state = nullptr;
  auto failed = [&](const json& body, const std::string& phase, const std::string& sentence) {
    if (body.contains("detail") && body["detail"].contains("record"))
      return turn_record_from_json(body["detail"]["record"]);
    TurnRecord r;
    r.session = session;
    r.turn = state.is_null() ? 0 : state.value("turn", std::uint64_t{0});
    r.ok = false;
    r.error = body.value("message", body.value("error", std::string("request failed")));
    r.failed_phase = phase;
    r.user_sentence = sentence;
    return r;
  };

  for (const auto& line : exp.lines) {
    auto [s1, b1] = transport("/v1/dialogue/first",
                              {{"session_id", session}, {"sentence", line.sentence}, {"state", state}});
    if (s1 != 200) {
      records.push_back(failed(b1, "first", line.sentence));
      continue;
    }
    auto [s2, b2] = transport("/v1/dialogue/continuation", {{"session_id", session}, {"state", b1["state"]}});
    if (s2 != 200) {
      records.push_back(failed(b2, "continuation", line.sentence));
      continue;
    }
    records.push_back(turn_record_from_json(b2["record"]));
    state = b2["state"];
  }
  return records;
}

std::string render_log(const std::vector<TurnRecord>& records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  return out;
}

// ── analyses ────────────────────────────────────────────────────

const NuanceUsage& UsageReport::of(NuanceKind kind) const {
  for (const auto& n : nuances)
    if (n.kind == kind) return n;
  throw std::out_of_range("usage report has no such nuance");
}

UsageReport usage_report(const std::vector<TurnRecord>& log, const NuanceSet& set) {
  std::vector<const TurnRecord*> ok;
  for (const auto& r : log)
    if (r.ok && r.steps.size() == 2) ok.push_back(&r);
  if (ok.empty()) throw EmptyLog();

  UsageReport report;
  for (auto kind : kAllNuances) {
    const auto& model = set[kind];
    const auto labels = slot_labels(model.values);
    const auto steady = steady_state(model.reply).probs;
    NuanceUsage u;
    u.kind = kind;
    u.rows.resize(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      u.rows[i].label = labels[i];
      u.rows[i].steady = steady[i];
    }
    for (const auto* r : ok) {
      ++u.rows.at(r->steps[0].used[index_of(kind)]).reply_count;
      ++u.rows.at(r->steps[1].used[index_of(kind)]).continuation_count;
    }
    u.reply_updates = u.continuation_updates = ok.size();
    for (auto& row : u.rows) {
      row.reply_pct = 100.0 * static_cast<double>(row.reply_count) / static_cast<double>(u.reply_updates);
      row.continuation_pct =
          100.0 * static_cast<double>(row.continuation_count) / static_cast<double>(u.continuation_updates);
      row.overall_pct = (row.reply_pct + row.continuation_pct) / 2.0;
    }
    finalize(u);
    report.nuances.push_back(std::move(u));
  }
  return report;
}

ToneConfusion tone_confusion(const std::vector<TurnRecord>& log, const ScriptedExperiment& script) {
  if (log.empty()) throw EmptyLog();
  if (log.size() != script.lines.size()) throw LengthMismatch(log.size(), script.lines.size());
  ToneConfusion c;
  for (std::size_t i = 0; i < log.size(); ++i) {
    if (log[i].failed_phase == std::optional<std::string>("first")) continue;
    ++c.counts[tone_slot(script.lines[i].intended)][tone_slot(log[i].detected_tone)];
  }
  for (std::size_t r = 0; r < 3; ++r) {
    const auto total = c.counts[r][0] + c.counts[r][1] + c.counts[r][2];
    for (std::size_t k = 0; k < 3; ++k)
      c.percent[r][k] = total ? 100.0 * static_cast<double>(c.counts[r][k]) / static_cast<double>(total) : 0.0;
  }
  return c;
}

Moments describe(const std::vector<double>& xs) {
  Moments m;
  m.n = xs.size();
  if (xs.empty()) return m;
  m.min = *std::min_element(xs.begin(), xs.end());
  m.max = *std::max_element(xs.begin(), xs.end());
  double sum = 0.0;
  for (double x : xs) sum += x;
  m.mean = sum / static_cast<double>(m.n);
  if (m.n > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.sd = std::sqrt(ss / static_cast<double>(m.n - 1));
  }
  // Guard the min <= mean <= max invariant against rounding.
  m.mean = std::clamp(m.mean, m.min, m.max);
  return m;
}

LatencyReport latency_report(const std::vector<TurnRecord>& log) {
  if (log.empty()) throw EmptyLog();
  std::map<RequestKind, std::vector<double>> per_kind;
  std::vector<double> first, second;
  for (const auto& r : log) {
    for (const auto& t : r.requests)
      if (t.ok) per_kind[t.kind].push_back(t.latency_ms / 1000.0);
    if (r.ok) {
      first.push_back(std::max(0.0, r.timeline.first_gap()));
      second.push_back(std::max(0.0, r.timeline.second_gap()));
    }
  }
  LatencyReport rep;
  for (auto& [kind, xs] : per_kind) rep.per_kind[kind] = describe(xs);
  auto gap = [](const std::vector<double>& xs) {
    GapStats g;
    g.moments = describe(xs);
    g.band_low = g.moments.mean - 3.0 * g.moments.sd;
    g.band_high = g.moments.mean + 3.0 * g.moments.sd;
    return g;
  };
  rep.first_gap = gap(first);
  rep.second_gap = gap(second);
  return rep;
}

TopicStats topic_stats(const std::vector<TurnRecord>& log) {
  TopicStats s;
  for (const auto& r : log) {
    if (!r.ok) continue;
    ++s.turns;
    if (r.detected_topic) ++s.topic_detected;
    if (r.plan && r.plan->jump) ++s.topic_jumps;
    if (r.sentiment) {
      ++s.sentiment_requests;
      ++s.sentiments[*r.sentiment];
    }
    if (r.plan) ++s.sentence_types[r.plan->type];
  }
  return s;
}

DiversityCostReport diversity_cost_report(const std::vector<TurnRecord>& log) {
  DiversityCostReport rep;
  for (const auto& r : log)
    for (const auto& t : r.requests) {
      if (!t.ok || (t.kind != RequestKind::reply && t.kind != RequestKind::continuation)) continue;
      auto& k = rep.per_kind[t.kind];
      ++k.requests;
      const double total = static_cast<double>(std::max<std::size_t>(t.prompt_tokens, 1));
      k.prompt_tokens += static_cast<double>(t.prompt_tokens);
      for (auto kind : kAllNuances) {
        const double tok = static_cast<double>(t.nuance_tokens[index_of(kind)]);
        k.nuances[kind].tokens += tok;
        k.nuances[kind].fraction += 100.0 * tok / total;
      }
      k.tone_detection.tokens += static_cast<double>(t.tone_detection_tokens);
      k.tone_detection.fraction += 100.0 * static_cast<double>(t.tone_detection_tokens) / total;
    }
  for (auto& [kind, k] : rep.per_kind) {
    const double n = static_cast<double>(k.requests);
    k.prompt_tokens /= n;
    for (auto& [_, s] : k.nuances) {
      s.tokens /= n;
      s.fraction /= n;
    }
    k.tone_detection.tokens /= n;
    k.tone_detection.fraction /= n;
  }
  return rep;
}

// ── rendering ───────────────────────────────────────────────────

std::optional<TableFormat> table_format_from_string(std::string_view name) {
  if (name == "plain") return TableFormat::plain;
  if (name == "csv") return TableFormat::csv;
  if (name == "markdown") return TableFormat::markdown;
  return std::nullopt;
}

std::string emit_tables(const Reports& reports, TableFormat f) {
  std::string out;
  const bool csv = f == TableFormat::csv;

  if (reports.usage) {
    if (csv)
      out += "table,nuance,value,reply_count,reply_pct,continuation_count,continuation_pct,overall_pct,steady_state\n";
    for (const auto& u : reports.usage->nuances) {
      if (csv) {
        for (const auto& r : u.rows)
          out += join_csv({"usage", std::string(to_string(u.kind)), r.label, std::to_string(r.reply_count),
                           full(r.reply_pct), std::to_string(r.continuation_count), full(r.continuation_pct),
                           full(r.overall_pct), full(r.steady)});
        continue;
      }
      std::vector<std::vector<std::string>> rows{
          {nuance_title(u.kind), "Reply", "Continuation", "Overall", steady_symbol(u.kind)}};
      for (const auto& r : u.rows)
        rows.push_back({r.label, pct1(r.reply_pct), pct1(r.continuation_pct), pct1(r.overall_pct),
                        fmt("%.3f", r.steady)});
      out += table(f, "Usage of " + std::string(to_string(u.kind)) + " (max deviation " +
                          fmt("%.3f", u.max_abs_deviation) + ")",
                   rows);
    }
    if (csv) out += "\n";
  }

  if (reports.tone) {
    const auto& c = *reports.tone;
    static const std::array<std::string, 3> names = {"humorous", "aggressive", "neutral"};
    if (csv) {
      out += "table,intended,detected,count,percent\n";
      for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t k = 0; k < 3; ++k)
          out += join_csv({"tone", names[r], names[k], std::to_string(c.counts[r][k]), full(c.percent[r][k])});
      out += "\n";
    } else {
      std::vector<std::vector<std::string>> rows{{"Client sentence tone", "Humorous", "Aggressive", "Neutral"}};
      static const std::array<std::string, 3> titles = {"Humorous", "Aggressive", "Neutral"};
      for (std::size_t r = 0; r < 3; ++r)
        rows.push_back({titles[r], pct1(c.percent[r][0]), pct1(c.percent[r][1]), pct1(c.percent[r][2])});
      out += table(f, "Detected tones", rows);
    }
  }

  if (reports.latency) {
    const auto& l = *reports.latency;
    static const std::array<RequestKind, 4> order = {RequestKind::sentiment, RequestKind::topic,
                                                     RequestKind::reply, RequestKind::continuation};
    if (csv) {
      out += "table,series,n,mean_s,sd_s,min_s,max_s,band_low_s,band_high_s\n";
      for (auto k : order) {
        auto it = l.per_kind.find(k);
        if (it == l.per_kind.end()) continue;
        const auto& m = it->second;
        out += join_csv({"latency", std::string(to_string(k)), std::to_string(m.n), full(m.mean), full(m.sd),
                         full(m.min), full(m.max), "", ""});
      }
      for (const auto& [name, g] : {std::pair{"t2-t1", l.first_gap}, std::pair{"t4-t3", l.second_gap}})
        out += join_csv({"latency", name, std::to_string(g.moments.n), full(g.moments.mean), full(g.moments.sd),
                         full(g.moments.min), full(g.moments.max), full(g.band_low), full(g.band_high)});
      out += "\n";
    } else {
      std::vector<std::vector<std::string>> rows{{"Request", "Avg. resp. time (σ) [s]", "Min [s]", "Max [s]"}};
      for (auto k : order) {
        auto it = l.per_kind.find(k);
        if (it == l.per_kind.end()) continue;
        const auto& m = it->second;
        rows.push_back({request_title(k), fmt("%.2f", m.mean) + " (" + fmt("%.2f", m.sd) + ")",
                        fmt("%.2f", m.min), fmt("%.2f", m.max)});
      }
      out += table(f, "Response times", rows);
      std::vector<std::vector<std::string>> gaps{{"Gap", "Mean [s]", "σ [s]", "3σ band [s]", "Max [s]"}};
      for (const auto& [name, g] : {std::pair{"t2-t1", l.first_gap}, std::pair{"t4-t3", l.second_gap}})
        gaps.push_back({name, fmt("%.2f", g.moments.mean), fmt("%.2f", g.moments.sd),
                        "[" + fmt("%.2f", g.band_low) + ", " + fmt("%.2f", g.band_high) + "]",
                        fmt("%.2f", g.moments.max)});
      out += table(f, "Silence gaps", gaps);
    }
  }

  if (reports.topics) {
    const auto& t = *reports.topics;
    std::vector<std::pair<std::string, std::string>> items{
        {"turns", std::to_string(t.turns)},
        {"topic_detected", std::to_string(t.topic_detected)},
        {"topic_detection_pct", csv ? full(t.detection_rate()) : pct1(t.detection_rate())},
        {"topic_jumps", std::to_string(t.topic_jumps)},
        {"topic_jump_pct", csv ? full(t.jump_rate()) : pct1(t.jump_rate())},
        {"sentiment_requests", std::to_string(t.sentiment_requests)}};
    for (const auto& [s, n] : t.sentiments) items.push_back({"sentiment_" + std::string(to_string(s)), std::to_string(n)});
    for (const auto& [s, n] : t.sentence_types)
      items.push_back({"sentence_type_" + std::string(to_string(s)), std::to_string(n)});
    if (csv) {
      out += "table,metric,value\n";
      for (const auto& [k, v] : items) out += join_csv({"topics", k, v});
      out += "\n";
    } else {
      std::vector<std::vector<std::string>> rows{{"Metric", "Value"}};
      for (const auto& [k, v] : items) rows.push_back({k, v});
      out += table(f, "Topics and sentiment", rows);
    }
  }

  if (reports.cost) {
    if (csv) out += "table,request,section,tokens,fraction_pct\n";
    for (const auto& [kind, k] : reports.cost->per_kind) {
      std::vector<std::pair<std::string, SectionUsage>> sections;
      for (auto n : kAllNuances) sections.push_back({std::string(to_string(n)), k.nuances.at(n)});
      sections.push_back({"tone_detection", k.tone_detection});
      if (csv) {
        for (const auto& [name, s] : sections)
          out += join_csv({"cost", std::string(to_string(kind)), name, full(s.tokens), full(s.fraction)});
        continue;
      }
      std::vector<std::vector<std::string>> rows{{"Section", "Tokens", "Share"}};
      for (const auto& [name, s] : sections) rows.push_back({name, fmt("%.1f", s.tokens), pct1(s.fraction)});
      rows.push_back({"prompt", fmt("%.1f", k.prompt_tokens), pct1(100.0)});
      out += table(f, "Diversity cost of the " + std::string(to_string(kind)) + " request", rows);
    }
    if (csv) out += "\n";
  }
  return out;
}

UsageReport parse_usage_csv(std::string_view text) {
  UsageReport rep;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto f = csv_split(line);
    if (f.size() != 9 || f[0] != "usage") continue;
    const auto kind = nuance_from_string(f[1]);
    if (!kind) throw ConfigError("usage csv names an unknown nuance: " + f[1]);
    if (rep.nuances.empty() || rep.nuances.back().kind != *kind) {
      rep.nuances.push_back({});
      rep.nuances.back().kind = *kind;
    }
    UsageRow r;
    r.label = f[2];
    r.reply_count = std::stoull(f[3]);
    r.reply_pct = std::strtod(f[4].c_str(), nullptr);
    r.continuation_count = std::stoull(f[5]);
    r.continuation_pct = std::strtod(f[6].c_str(), nullptr);
    r.overall_pct = std::strtod(f[7].c_str(), nullptr);
    r.steady = std::strtod(f[8].c_str(), nullptr);
    auto& u = rep.nuances.back();
    u.reply_updates += r.reply_count;
    u.continuation_updates += r.continuation_count;
    u.rows.push_back(std::move(r));
  }
  for (auto& u : rep.nuances) finalize(u);
  return rep;
}

std::string emit_turn_series_csv(const std::vector<TurnRecord>& log, const NuanceSet& set) {
  const auto tone_names = slot_labels(set[NuanceKind::tone].values);
  std::string out = "turn,ok,detected_tone,tone_reply,tone_continuation,first_gap_s,second_gap_s\n";
  for (const auto& r : log) {
    const bool full_turn = r.ok && r.steps.size() == 2;
    out += join_csv({std::to_string(r.turn), r.ok ? "1" : "0", std::string(tone_name(r.detected_tone)),
                     full_turn ? tone_names.at(r.steps[0].used[index_of(NuanceKind::tone)]) : "",
                     full_turn ? tone_names.at(r.steps[1].used[index_of(NuanceKind::tone)]) : "",
                     full_turn ? full(std::max(0.0, r.timeline.first_gap())) : "",
                     full_turn ? full(std::max(0.0, r.timeline.second_gap())) : ""});
  }
  return out;
}

}  // namespace nuanced
