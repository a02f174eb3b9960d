#include "nuanced/hub.hpp"

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <httplib.h>

#include "nuanced/codec.hpp"
#include "nuanced/errors.hpp"

namespace nuanced {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

NuanceModel nuance_model_from_json(NuanceKind kind, const json& j) {
  if (!j.is_object()) throw ConfigError("nuance '" + std::string(to_string(kind)) + "' must be an object");
  NuanceValues values = default_values(kind);
  if (j.contains("values")) {
    values.labels = get_or<std::vector<std::string>>(j, "values", {});
    values.fields = get_or<std::vector<std::string>>(j, "fields", {});
    if (kind == NuanceKind::tone || kind == NuanceKind::speech_act) values.fields = values.labels;
  }
  validate(values);

  auto matrix = [&](const char* columns_key, const char* steady_key) -> std::optional<TransitionMatrix> {
    if (j.contains(columns_key))
      return TransitionMatrix::from_columns(kind, get_or<std::vector<std::vector<double>>>(j, columns_key, {}));
    if (j.contains(steady_key)) {
      const auto steady = get_or<std::vector<double>>(j, steady_key, {});
      if (steady.size() != values.flag_count())
        throw DimensionMismatch(values.flag_count(), steady.size());
      return TransitionMatrix::rank_one(kind, steady);
    }
    return std::nullopt;
  };

  auto reply = matrix("columns", "steady_state");
  if (!reply) {
    if (j.contains("values"))
      throw ConfigError("nuance '" + std::string(to_string(kind)) +
                        "' overrides its values but gives no matrix");
    reply = TransitionMatrix::rank_one(kind, published_steady_state(kind));
  }
  auto continuation = matrix("continuation_columns", "continuation_steady_state");
  return NuanceModel{std::move(values), std::move(*reply), std::move(continuation)};
}

void apply_routing(ModelRouting& routing, const json& j) {
  if (!j.is_object()) throw ConfigError("routing must be an object");
  routing = ModelRouting::defaults(get_or<std::string>(j, "cheap_model", "gpt-3.5-turbo"),
                                   get_or<std::string>(j, "capable_model", "gpt-4-turbo"));
  for (auto kind : kAllRequests) {
    const std::string name{to_string(kind)};
    if (!j.contains(name)) continue;
    auto& s = routing.per_kind[kind];
    const auto& k = j[name];
    s.model = get_or<std::string>(k, "model", s.model);
    s.temperature = get_or<double>(k, "temperature", s.temperature);
    s.max_tokens = get_or<int>(k, "max_tokens", s.max_tokens);
    if (s.max_tokens <= 0) throw ConfigError("max_tokens must be positive");
  }
}

std::string read_file(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(std::string("cannot open ") + what + " " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> read_fillers(const std::string& path) {
  std::vector<std::string> out;
  std::istringstream in(read_file(path, "filler file"));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(line);
  }
  if (out.empty()) throw ConfigError("filler file " + path + " has no sentences");
  return out;
}

int status_for(TurnFailed::Cause cause) {
  return cause == TurnFailed::Cause::timeout ? 504 : 502;
}

std::string code_for(TurnFailed::Cause cause) {
  switch (cause) {
    case TurnFailed::Cause::timeout: return "backend_timeout";
    case TurnFailed::Cause::unreachable: return "backend_unreachable";
    case TurnFailed::Cause::malformed: return "backend_malformed";
    case TurnFailed::Cause::other: break;
  }
  return "backend_error";
}

json request_list(const std::vector<RequestTelemetry>& requests) {
  json out = json::array();
  for (const auto& r : requests) out.push_back(to_json(r));
  return out;
}

std::string session_of(const json& envelope) {
  if (!envelope.is_object()) throw HubError(400, "bad_envelope", "envelope must be a JSON object");
  if (!envelope.contains("session_id") || !envelope["session_id"].is_string())
    throw HubError(400, "bad_envelope", "session_id is required");
  auto session = envelope["session_id"].get<std::string>();
  if (!valid_session_id(session))
    throw HubError(400, "bad_session_id", "session_id must be 1-128 characters of [A-Za-z0-9_.-]");
  return session;
}

}  // namespace

// ── config ──────────────────────────────────────────────────────

ServiceConfig parse_service_config(const json& doc, const fs::path& base_dir) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  ServiceConfig c;
  c.listen = get_or<std::string>(doc, "listen", c.listen);
  c.seed = get_or<std::uint64_t>(doc, "seed", c.seed);

  if (doc.contains("backend")) {
    const auto& b = doc["backend"];
    if (!b.is_object()) throw ConfigError("backend must be an object");
    const auto kind = get_or<std::string>(b, "kind", "mock");
    if (kind == "mock") {
      c.backend.kind = BackendSpec::Kind::mock;
      if (b.contains("script")) {
        c.backend.mock = MockScript::load_file(resolve(base_dir, b["script"].get<std::string>()));
        if (get_or<bool>(b, "fallback_defaults", true))
          for (auto& e : MockScript::defaults().entries) c.backend.mock.entries.push_back(e);
      }
      c.backend.mock_options.real_time = get_or<bool>(b, "real_time", false);
      c.backend.mock_options.deadline_ms = get_or<double>(b, "deadline_ms", 20000.0);
    } else if (kind == "http") {
      c.backend.kind = BackendSpec::Kind::http;
      c.backend.http.endpoint = get_or<std::string>(b, "endpoint", c.backend.http.endpoint);
      c.backend.http.timeout_s = get_or<double>(b, "timeout_s", c.backend.http.timeout_s);
      c.backend.http.transport_retries = get_or<int>(b, "retries", c.backend.http.transport_retries);
      c.api_key_env = get_or<std::string>(b, "api_key_env", c.api_key_env);
    } else {
      throw ConfigError("backend kind must be 'mock' or 'http'");
    }
  }
  if (const char* key = std::getenv(c.api_key_env.c_str())) c.backend.http.api_key = key;

  if (doc.contains("routing")) apply_routing(c.dialogue.routing, doc["routing"]);

  if (doc.contains("nuances")) {
    const auto& n = doc["nuances"];
    if (!n.is_object()) throw ConfigError("nuances must be an object");
    for (const auto& [name, _] : n.items())
      if (!nuance_from_string(name)) throw ConfigError("unknown nuance '" + name + "'");
    std::array<NuanceModel, 5> models{
        nuance_model_from_json(NuanceKind::diversity, n.value("diversity", json::object())),
        nuance_model_from_json(NuanceKind::time, n.value("time", json::object())),
        nuance_model_from_json(NuanceKind::place, n.value("place", json::object())),
        nuance_model_from_json(NuanceKind::tone, n.value("tone", json::object())),
        nuance_model_from_json(NuanceKind::speech_act, n.value("speech_act", json::object()))};
    c.nuances = NuanceSet(std::move(models));
  }

  if (doc.contains("ontology")) c.ontology_path = resolve(base_dir, doc["ontology"].get<std::string>());
  if (doc.contains("templates")) c.templates_dir = resolve(base_dir, doc["templates"].get<std::string>());
  if (doc.contains("fillers")) c.fillers_path = resolve(base_dir, doc["fillers"].get<std::string>());
  if (doc.contains("log_dir")) c.log_dir = resolve(base_dir, doc["log_dir"].get<std::string>());

  c.dialogue.speech_rate_wpm = get_or<double>(doc, "speech_rate_wpm", c.dialogue.speech_rate_wpm);
  if (!(c.dialogue.speech_rate_wpm > 0)) throw ConfigError("speech_rate_wpm must be positive");
  if (doc.contains("traversal")) {
    const auto& t = doc["traversal"];
    c.dialogue.traversal.exhaustion_threshold =
        get_or<std::uint32_t>(t, "exhaustion_threshold", c.dialogue.traversal.exhaustion_threshold);
    c.dialogue.traversal.candidate_limit =
        get_or<std::size_t>(t, "candidate_limit", c.dialogue.traversal.candidate_limit);
    if (c.dialogue.traversal.exhaustion_threshold == 0 || c.dialogue.traversal.candidate_limit == 0)
      throw ConfigError("traversal thresholds must be positive");
  }
  return c;
}

ServiceConfig load_service_config(const std::string& path) {
  const auto text = read_file(path, "config");
  json doc;
  try {
    doc = json::parse(text, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return parse_service_config(doc, fs::absolute(path).parent_path());
}

// ── hub ─────────────────────────────────────────────────────────

json HubError::body() const {
  json b{{"error", code_}, {"message", what()}};
  if (!detail_.is_null()) b["detail"] = detail_;
  return b;
}

bool valid_session_id(std::string_view id) {
  if (id.empty() || id.size() > 128) return false;
  for (unsigned char c : id)
    if (!(std::isalnum(c) || c == '_' || c == '.' || c == '-')) return false;
  return id != "." && id != "..";
}

Hub::Hub(ServiceConfig config, std::unique_ptr<ChatBackend> backend)
    : config_(std::move(config)), backend_(std::move(backend)) {
  if (!backend_) throw ConfigError("hub needs a backend");
  if (config_.ontology_path) {
    if (!fs::exists(*config_.ontology_path))
      throw ConfigError("ontology file not found: " + *config_.ontology_path);
    graph_ = std::make_unique<TopicGraph>(load_topic_graph_file(*config_.ontology_path));
  } else {
    graph_ = std::make_unique<TopicGraph>(demo_topic_graph());
  }
  PromptTemplates templates = PromptTemplates::defaults();
  if (config_.templates_dir) {
    if (!fs::is_directory(*config_.templates_dir))
      throw ConfigError("templates directory not found: " + *config_.templates_dir);
    templates = PromptTemplates::load_dir(*config_.templates_dir);
  }
  prompts_ = std::make_unique<PromptBuilder>(std::move(templates));
  fillers_.sentences =
      config_.fillers_path ? read_fillers(*config_.fillers_path) : default_filler_sentences();
  manager_ = std::make_unique<DialogueManager>(*graph_, config_.nuances, *prompts_, config_.dialogue);
  if (config_.log_dir) {
    std::error_code ec;
    fs::create_directories(*config_.log_dir, ec);
    if (ec) throw ConfigError("cannot create log directory " + *config_.log_dir + ": " + ec.message());
  }
}

Hub::~Hub() = default;

std::optional<fs::path> Hub::log_path(std::string_view session) const {
  if (!config_.log_dir) return std::nullopt;
  return fs::path(*config_.log_dir) / (std::string(session) + ".jsonl");
}

std::shared_ptr<std::mutex> Hub::session_lock(const std::string& session) {
  std::lock_guard lock(sessions_mutex_);
  auto& slot = sessions_[session];
  if (!slot) slot = std::make_shared<std::mutex>();
  return slot;
}

void Hub::append_log(const std::string& session, const json& line) {
  const auto path = log_path(session);
  if (!path) return;
  std::ofstream out(*path, std::ios::app | std::ios::binary);
  if (!out) throw HubError(500, "log_write_failed", "cannot append to " + path->string());
  out << line.dump() << '\n';
}

DialogueState Hub::decode_state(const json& envelope) const {
  if (!envelope.contains("state") || envelope["state"].is_null()) return manager_->initial_state();
  DialogueState state;
  try {
    state = dialogue_state_from_json(envelope["state"]);
    validate_state(state, *graph_);
  } catch (const Error& e) {
    throw HubError(400, "bad_state", e.what());
  }
  for (auto kind : kAllNuances)
    if (!(state.nuances.values_of(kind) == config_.nuances[kind].values))
      throw HubError(400, "bad_state",
                     "state values for nuance '" + std::string(to_string(kind)) +
                         "' do not match the service configuration");
  return state;
}

json Hub::first(const json& envelope) {
  const auto session = session_of(envelope);
  if (!envelope.contains("sentence") || !envelope["sentence"].is_string())
    throw HubError(400, "bad_envelope", "sentence is required");
  const auto sentence = envelope["sentence"].get<std::string>();
  if (sentence.find_first_not_of(" \t\r\n") == std::string::npos)
    throw HubError(400, "empty_sentence", "sentence is empty");

  const auto guard = session_lock(session);
  std::lock_guard lock(*guard);
  DialogueState state = decode_state(envelope);

  Rng rng = derive_rng(config_.seed, session, state.turn, 0);
  const auto filler = manager_->choose_filler(state, fillers_, rng);
  TurnPhaseOneResult one;
  try {
    one = manager_->handle_first_request(state, sentence, filler, *backend_, rng);
  } catch (const TurnFailed& e) {
    TurnRecord rec = e.record();
    rec.session = session;
    rec.turn = state.turn;
    rec.user_sentence = sentence;
    rec.filler = filler;
    const auto rec_json = to_json(rec);
    append_log(session, rec_json);
    throw HubError(status_for(e.cause()), code_for(e.cause()), e.what(), {{"record", rec_json}});
  } catch (const EmptySentence& e) {
    throw HubError(400, "empty_sentence", e.what());
  }

  const auto requests = request_list(one.requests);
  const auto& pending = *one.state.pending;
  append_log(session, {{"record", "first_phase"},
                       {"session", session},
                       {"turn", state.turn},
                       {"user_sentence", sentence},
                       {"filler", filler},
                       {"reply", one.reply},
                       {"detected_tone", tone_name(one.detected_tone)},
                       {"requests", requests}});
  return {{"session_id", session},
          {"turn", state.turn},
          {"filler", filler},
          {"reply", one.reply},
          {"detected_tone", tone_name(one.detected_tone)},
          {"tone_overridden", pending.tone_overridden},
          {"detected_topic", one.detected_topic ? json(*one.detected_topic) : json(nullptr)},
          {"sentiment", one.detected_sentiment ? json(to_string(*one.detected_sentiment)) : json(nullptr)},
          {"state", to_json(one.state)},
          {"telemetry", {{"requests", requests}, {"first_response_ms", pending.first_response_ms}}}};
}

json Hub::continuation(const json& envelope) {
  const auto session = session_of(envelope);
  if (!envelope.contains("state") || envelope["state"].is_null())
    throw HubError(409, "phase_one_missing", "continuation needs the state returned by the first request");

  const auto guard = session_lock(session);
  std::lock_guard lock(*guard);
  const DialogueState state = decode_state(envelope);
  if (!state.pending)
    throw HubError(409, "phase_one_missing", "state carries no completed first request");

  Rng rng = derive_rng(config_.seed, session, state.turn, 1);
  TurnPhaseTwoResult two;
  try {
    two = manager_->handle_continuation_request(state, *backend_, rng, session);
  } catch (const TurnFailed& e) {
    const auto rec_json = to_json(e.record());
    append_log(session, rec_json);
    throw HubError(status_for(e.cause()), code_for(e.cause()), e.what(), {{"record", rec_json}});
  } catch (const PhaseOneMissing& e) {
    throw HubError(409, "phase_one_missing", e.what());
  }

  const auto rec_json = to_json(two.record);
  append_log(session, rec_json);
  return {{"session_id", session},
          {"turn", two.record.turn},
          {"continuation", two.continuation},
          {"sentence_type", to_string(two.sentence_type)},
          {"topic", two.state.current_topic},
          {"state", to_json(two.state)},
          {"telemetry",
           {{"requests", json::array({to_json(two.record.requests.back())})},
            {"second_response_ms", two.record.second_response_s * 1000.0}}},
          {"record", rec_json}};
}

json Hub::health(int& status) {
  const bool reachable = backend_->reachable();
  status = reachable ? 200 : 503;
  return {{"status", reachable ? "ok" : "degraded"},
          {"config", "valid"},
          {"backend",
           {{"kind", config_.backend.kind == BackendSpec::Kind::http ? "http" : "mock"},
            {"reachable", reachable}}},
          {"topics", graph_->size()},
          {"state_version", DialogueState::kVersion}};
}

// ── HTTP ────────────────────────────────────────────────────────

struct HubServer::Impl {
  Hub* hub;
  httplib::Server server;
};

namespace {

void reply_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <class Handler>
void dispatch(const httplib::Request& req, httplib::Response& res, Handler handler) {
  json envelope;
  try {
    envelope = json::parse(req.body);
  } catch (const json::parse_error& e) {
    reply_json(res, 400, HubError(400, "bad_json", e.what()).body());
    return;
  }
  try {
    reply_json(res, 200, handler(envelope));
  } catch (const HubError& e) {
    reply_json(res, e.status(), e.body());
  } catch (const std::exception& e) {
    reply_json(res, 500, HubError(500, "internal", e.what()).body());
  }
}

}  // namespace

HubServer::HubServer(Hub& hub) : impl_(std::make_unique<Impl>()) {
  impl_->hub = &hub;
  auto& s = impl_->server;
  s.set_payload_max_length(8 * 1024 * 1024);
  s.Post("/v1/dialogue/first", [this](const httplib::Request& req, httplib::Response& res) {
    dispatch(req, res, [this](const json& env) { return impl_->hub->first(env); });
  });
  s.Post("/v1/dialogue/continuation", [this](const httplib::Request& req, httplib::Response& res) {
    dispatch(req, res, [this](const json& env) { return impl_->hub->continuation(env); });
  });
  s.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
    int status = 200;
    auto body = impl_->hub->health(status);
    reply_json(res, status, body);
  });
}

HubServer::~HubServer() { stop(); }

bool HubServer::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

int HubServer::bind_any(const std::string& host) { return impl_->server.bind_to_any_port(host); }

bool HubServer::serve() { return impl_->server.listen_after_bind(); }

void HubServer::stop() {
  if (impl_) impl_->server.stop();
}

void HubServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

std::pair<std::string, int> parse_listen_address(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == address.size())
    throw ConfigError("listen address must be host:port");
  int port = 0;
  try {
    std::size_t used = 0;
    port = std::stoi(address.substr(colon + 1), &used);
    if (used != address.size() - colon - 1) throw std::invalid_argument("port");
  } catch (const std::exception&) {
    throw ConfigError("listen address has a bad port: " + address);
  }
  if (port < 0 || port > 65535) throw ConfigError("listen port out of range");
  return {address.substr(0, colon), port};
}

}  // namespace nuanced
