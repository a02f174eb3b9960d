#pragma once

// Scripted experiments, their replay against a Hub, and the offline
// analyses of the resulting turn logs.

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "nuanced/dialogue.hpp"
#include "nuanced/hub.hpp"
#include "nuanced/llm.hpp"
#include "nuanced/nuance_set.hpp"

namespace nuanced {

// ── experiments ─────────────────────────────────────────────────

struct ScriptLine {
  std::string sentence;
  DetectedTone intended = DetectedTone::none;
  std::optional<std::string> topic;        // what a topic model would answer
  std::optional<Sentiment> sentiment;      // what a sentiment model would answer
  bool operator==(const ScriptLine&) const = default;
};

struct ScriptedExperiment {
  std::vector<ScriptLine> lines;

  /// Line-delimited `{sentence, intended_tone, topic?, sentiment?}`.
  static ScriptedExperiment parse(std::string_view text);
  static ScriptedExperiment load_file(const std::string& path);
};

struct LatencyMoments {
  double mean_s = 0.0;
  double sd_s = 0.0;
  double min_s = 0.0;
  double max_s = 0.0;
};

/// Published per-request response-time moments.
LatencyMoments published_latency(RequestKind kind);

/// Rows are intended tones, columns detected tones, both ordered
/// humorous, aggressive, neutral; entries are fractions.
using ToneMatrix = std::array<std::array<double, 3>, 3>;
ToneMatrix published_tone_confusion();

/// `n` draws from a normal truncated to [min, max], then affinely adjusted
/// so the sample mean and sample standard deviation equal the targets
/// (values are clamped back into range afterwards).
std::vector<double> sample_latencies(const LatencyMoments& moments, std::size_t n, Rng& rng);

enum class ToneModel { echo, confusion };

struct MockGenerationOptions {
  ToneModel tone_model = ToneModel::echo;
  /// Draw per-request latencies from the published moments; otherwise every
  /// request takes `constant_latency_ms`.
  bool sample_latency = true;
  double constant_latency_ms = 0.0;
  std::uint64_t seed = 0;
};

/// A mock script answering every request of the experiment: the reply's
/// tone line follows `tone_model`, topic and sentiment answers come from the
/// script annotations.
MockScript generate_mock_script(const ScriptedExperiment& experiment,
                                const MockGenerationOptions& options);

/// Detected tone assigned to each line under `model`. The confusion model
/// distributes each intended-tone group over detected tones in the
/// published proportions (largest remainder), in a seeded order.
std::vector<DetectedTone> assign_detected_tones(const ScriptedExperiment& experiment, ToneModel model,
                                                std::uint64_t seed);

// ── replay ──────────────────────────────────────────────────────

/// Sends a JSON envelope to an endpoint path and returns (status, body).
using HubTransport = std::function<std::pair<int, nlohmann::json>(const std::string& path,
                                                                  const nlohmann::json& body)>;

HubTransport in_process_transport(Hub& hub);
/// `base_url` like "http://127.0.0.1:8080".
HubTransport http_transport(const std::string& base_url);

/// Drives one session through every sentence in order. A failed turn is
/// recorded and the client keeps its pre-turn state.
std::vector<TurnRecord> replay(const ScriptedExperiment& experiment, const HubTransport& transport,
                               const std::string& session = "replay");

/// One JSON line per record.
std::string render_log(const std::vector<TurnRecord>& records);

// ── analyses ────────────────────────────────────────────────────

struct UsageRow {
  std::string label;
  std::size_t reply_count = 0;
  std::size_t continuation_count = 0;
  double reply_pct = 0.0;
  double continuation_pct = 0.0;
  double overall_pct = 0.0;  // mean of the two phase percentages
  double steady = 0.0;
  bool operator==(const UsageRow&) const = default;
};

struct NuanceUsage {
  NuanceKind kind = NuanceKind::diversity;
  std::vector<UsageRow> rows;
  std::size_t reply_updates = 0;
  std::size_t continuation_updates = 0;
  double max_abs_deviation = 0.0;  // max |overall / 100 - steady|
  bool operator==(const NuanceUsage&) const = default;
};

struct UsageReport {
  std::vector<NuanceUsage> nuances;  // in kAllNuances order
  const NuanceUsage& of(NuanceKind kind) const;
  bool operator==(const UsageReport&) const = default;
};

/// Counts the flag indices used at each of the two per-turn updates of
/// successful records. Throws EmptyLog.
UsageReport usage_report(const std::vector<TurnRecord>& log, const NuanceSet& nuances);

struct ToneConfusion {
  std::array<std::array<std::size_t, 3>, 3> counts{};
  ToneMatrix percent{};
  bool operator==(const ToneConfusion&) const = default;
};

/// Cross-tabulates intended against detected tone for every turn whose
/// first phase completed. Throws EmptyLog or LengthMismatch.
ToneConfusion tone_confusion(const std::vector<TurnRecord>& log, const ScriptedExperiment& script);

struct Moments {
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation
  double min = 0.0;
  double max = 0.0;
  bool operator==(const Moments&) const = default;
};

Moments describe(const std::vector<double>& values);

struct GapStats {
  Moments moments;
  double band_low = 0.0;   // mean - 3 sd
  double band_high = 0.0;  // mean + 3 sd
  bool operator==(const GapStats&) const = default;
};

struct LatencyReport {
  std::map<RequestKind, Moments> per_kind;  // seconds, successful requests only
  GapStats first_gap;                       // t2 - t1
  GapStats second_gap;                      // t4 - t3
  bool operator==(const LatencyReport&) const = default;
};

/// Throws EmptyLog.
LatencyReport latency_report(const std::vector<TurnRecord>& log);

struct TopicStats {
  std::size_t turns = 0;
  std::size_t topic_detected = 0;   // first phase named a topic
  std::size_t topic_jumps = 0;      // plan moved to the detected topic
  std::size_t sentiment_requests = 0;
  std::map<Sentiment, std::size_t> sentiments;
  std::map<SentenceType, std::size_t> sentence_types;
  double detection_rate() const { return turns ? 100.0 * topic_detected / turns : 0.0; }
  double jump_rate() const { return turns ? 100.0 * topic_jumps / turns : 0.0; }
};

TopicStats topic_stats(const std::vector<TurnRecord>& log);

struct SectionUsage {
  double tokens = 0.0;    // mean per request
  double fraction = 0.0;  // mean share of the prompt, in percent
};

struct DiversityCostReport {
  struct PerKind {
    std::size_t requests = 0;
    double prompt_tokens = 0.0;
    std::map<NuanceKind, SectionUsage> nuances;
    SectionUsage tone_detection;
  };
  std::map<RequestKind, PerKind> per_kind;  // reply and continuation
};

DiversityCostReport diversity_cost_report(const std::vector<TurnRecord>& log);

// ── rendering ───────────────────────────────────────────────────

enum class TableFormat { plain, csv, markdown };
std::optional<TableFormat> table_format_from_string(std::string_view name);

struct Reports {
  std::optional<UsageReport> usage;
  std::optional<ToneConfusion> tone;
  std::optional<LatencyReport> latency;
  std::optional<TopicStats> topics;
  std::optional<DiversityCostReport> cost;
};

/// Deterministic rendering; csv keeps full floating-point precision.
std::string emit_tables(const Reports& reports, TableFormat format);

/// Reads back the usage section of a csv document produced by emit_tables.
UsageReport parse_usage_csv(std::string_view csv);

/// Per-turn series for external plotting: gaps and the tone flag used at
/// each update.
std::string emit_turn_series_csv(const std::vector<TurnRecord>& log, const NuanceSet& nuances);

}  // namespace nuanced
