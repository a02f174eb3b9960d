// Serves the dialogue endpoints over HTTP.

#include <atomic>
#include <chrono>
#include <csignal>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "nuanced/errors.hpp"
#include "nuanced/hub.hpp"

namespace {
std::atomic<bool> g_stop{false};
void on_signal(int) { g_stop = true; }
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nuanced_hub: dialogue hub service"};
  std::string config_path, listen, backend;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "service config (JSON with comments)")->check(CLI::ExistingFile);
  app.add_option("--listen", listen, "listen address host:port (overrides config)");
  app.add_option("--backend", backend, "chat backend (overrides config)")
      ->check(CLI::IsMember({"mock", "http"}));
  app.add_option("--seed", seed, "seed for every random draw (overrides config)");
  CLI11_PARSE(app, argc, argv);

  try {
    nuanced::ServiceConfig config =
        config_path.empty() ? nuanced::parse_service_config(nlohmann::json::object(), ".")
                            : nuanced::load_service_config(config_path);
    if (!listen.empty()) config.listen = listen;
    if (seed) config.seed = *seed;
    if (backend == "mock") config.backend.kind = nuanced::BackendSpec::Kind::mock;
    if (backend == "http") config.backend.kind = nuanced::BackendSpec::Kind::http;
    if (config.backend.kind == nuanced::BackendSpec::Kind::http && config.backend.http.api_key.empty())
      std::cerr << "warning: " << config.api_key_env << " is not set; upstream calls will be rejected\n";

    const auto [host, port] = nuanced::parse_listen_address(config.listen);
    nuanced::Hub hub(config, nuanced::make_backend(config.backend));
    nuanced::HubServer server(hub);

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::thread watcher([&server] {
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
    });

    std::cerr << "listening on " << host << ":" << port << "\n";
    const bool ok = server.listen(host, port);
    const bool requested = g_stop.exchange(true);
    watcher.join();
    if (!ok && !requested) {
      std::cerr << "cannot listen on " << config.listen << "\n";
      return 1;
    }
    return 0;
  } catch (const nuanced::Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
}
