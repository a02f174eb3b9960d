#pragma once

// The Hub: two stateless dialogue endpoints over client-held state, the
// service configuration and append-only session logs.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "nuanced/dialogue.hpp"
#include "nuanced/knowledge_base.hpp"
#include "nuanced/llm.hpp"
#include "nuanced/nuance_set.hpp"
#include "nuanced/prompt.hpp"

namespace nuanced {

struct ServiceConfig {
  BackendSpec backend;
  std::string api_key_env = "OPENAI_API_KEY";
  NuanceSet nuances = default_nuance_set();
  std::optional<std::string> ontology_path;   // bundled demo ontology when absent
  std::optional<std::string> templates_dir;   // compiled-in templates when absent
  std::optional<std::string> fillers_path;    // one sentence per line
  std::optional<std::string> log_dir;         // no session logs when absent
  DialogueConfig dialogue;
  std::string listen = "127.0.0.1:8080";
  std::uint64_t seed = 0;
};

/// Relative paths resolve against `base_dir`. Throws ConfigError, or the
/// nuance errors when a matrix does not validate.
ServiceConfig parse_service_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
/// Reads a JSON document that may contain comments.
ServiceConfig load_service_config(const std::string& path);

/// Carries the HTTP status an endpoint failure maps to.
class HubError : public Error {
 public:
  HubError(int status, std::string code, const std::string& what,
           nlohmann::json detail = nullptr)
      : Error(what), status_(status), code_(std::move(code)), detail_(std::move(detail)) {}
  int status() const noexcept { return status_; }
  const std::string& code() const noexcept { return code_; }
  const nlohmann::json& detail() const noexcept { return detail_; }
  nlohmann::json body() const;

 private:
  int status_;
  std::string code_;
  nlohmann::json detail_;
};

bool valid_session_id(std::string_view id);

class Hub {
 public:
  /// Loads the ontology, templates and fillers; throws ConfigError or
  /// OntologyError when any referenced file is missing or invalid.
  Hub(ServiceConfig config, std::unique_ptr<ChatBackend> backend);
  ~Hub();

  /// Envelope `{session_id, sentence, state?}`. An absent or null state
  /// starts a fresh conversation. Throws HubError.
  nlohmann::json first(const nlohmann::json& envelope);
  /// Envelope `{session_id, state}`; the state must carry the first-phase marker.
  nlohmann::json continuation(const nlohmann::json& envelope);
  /// Sets `status` to 200 when healthy, 503 when degraded.
  nlohmann::json health(int& status);

  DialogueState initial_state() const { return manager_->initial_state(); }
  const DialogueManager& manager() const noexcept { return *manager_; }
  const ServiceConfig& config() const noexcept { return config_; }
  ChatBackend& backend() noexcept { return *backend_; }
  /// Path of a session's log, when logging is enabled.
  std::optional<std::filesystem::path> log_path(std::string_view session) const;

 private:
  std::shared_ptr<std::mutex> session_lock(const std::string& session);
  void append_log(const std::string& session, const nlohmann::json& line);
  DialogueState decode_state(const nlohmann::json& envelope) const;

  ServiceConfig config_;
  std::unique_ptr<ChatBackend> backend_;
  std::unique_ptr<TopicGraph> graph_;
  std::unique_ptr<PromptBuilder> prompts_;
  std::unique_ptr<DialogueManager> manager_;
  FillerPool fillers_;

  std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<std::mutex>> sessions_;
};

/// HTTP front end for a Hub.
class HubServer {
 public:
  explicit HubServer(Hub& hub);
  ~HubServer();

  /// Blocks until stop(). Returns false when the address cannot be bound.
  bool listen(const std::string& host, int port);
  /// Binds an ephemeral port and returns it, or -1.
  int bind_any(const std::string& host);
  /// Serves on a port previously bound with bind_any; blocks until stop().
  bool serve();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Splits "host:port"; throws ConfigError.
std::pair<std::string, int> parse_listen_address(const std::string& address);

}  // namespace nuanced
