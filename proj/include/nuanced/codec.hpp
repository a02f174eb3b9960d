#pragma once

// JSON forms of the dialogue state (carried by the client) and of turn
// records (one line per turn in session logs).

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "nuanced/dialogue.hpp"

namespace nuanced {

nlohmann::json to_json(const DialogueState& state);
/// Throws StateFormatError on any structural problem, including an
/// unsupported version.
DialogueState dialogue_state_from_json(const nlohmann::json& doc);

nlohmann::json to_json(const TurnRecord& record);
TurnRecord turn_record_from_json(const nlohmann::json& doc);

/// Parses a line-delimited log, skipping blank lines and fragments that are
/// not turn records (e.g. first-phase telemetry).
std::vector<TurnRecord> read_turn_log(std::string_view text);
std::vector<TurnRecord> read_turn_log_file(const std::string& path);

nlohmann::json to_json(const RequestTelemetry& t);

}  // namespace nuanced
