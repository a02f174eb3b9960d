// Replays scripted experiments and analyses turn logs.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "nuanced/codec.hpp"
#include "nuanced/errors.hpp"
#include "nuanced/hub.hpp"
#include "nuanced/metrics.hpp"

namespace {

nuanced::ServiceConfig config_from(const std::string& path) {
  return path.empty() ? nuanced::parse_service_config(nlohmann::json::object(), ".")
                      : nuanced::load_service_config(path);
}

void write_out(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw nuanced::ConfigError("cannot write " + path);
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"harness: replay scripted experiments and analyse turn logs"};
  app.require_subcommand(1);

  auto* rep = app.add_subcommand("replay", "drive one session through a scripted experiment");
  std::string script_path, backend = "mock", out_path, config_path, target, tone_model = "echo",
                           session = "replay", mock_out;
  std::uint64_t seed = 0;
  std::optional<double> constant_latency;
  rep->add_option("--script", script_path, "experiment (JSON lines)")->required()->check(CLI::ExistingFile);
  rep->add_option("--backend", backend, "chat backend")->check(CLI::IsMember({"mock", "http"}));
  rep->add_option("--seed", seed, "seed for the service and the generated mock");
  rep->add_option("--out", out_path, "turn log to write")->required();
  rep->add_option("--config", config_path, "service config")->check(CLI::ExistingFile);
  rep->add_option("--target", target, "replay against a running service, e.g. http://127.0.0.1:8080");
  rep->add_option("--tone-model", tone_model, "tone detection of the generated mock")
      ->check(CLI::IsMember({"echo", "confusion"}));
  rep->add_option("--constant-latency-ms", constant_latency, "fixed mock latency instead of sampled ones");
  rep->add_option("--session", session, "session id");
  rep->add_option("--mock-out", mock_out, "also write the generated mock script");

  auto* ana = app.add_subcommand("analyze", "render reports from a turn log");
  std::string log_path, report = "all", format = "plain", ana_script, ana_config, ana_out;
  ana->add_option("--log", log_path, "turn log")->required()->check(CLI::ExistingFile);
  ana->add_option("--report", report, "report to render")
      ->check(CLI::IsMember({"usage", "tone", "latency", "topics", "cost", "series", "all"}));
  ana->add_option("--format", format, "output format")->check(CLI::IsMember({"plain", "csv", "markdown"}));
  ana->add_option("--script", ana_script, "experiment, needed for the tone report")->check(CLI::ExistingFile);
  ana->add_option("--config", ana_config, "service config whose nuances were used")->check(CLI::ExistingFile);
  ana->add_option("--out", ana_out, "output file (stdout by default)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*rep) {
      const auto experiment = nuanced::ScriptedExperiment::load_file(script_path);
      std::vector<nuanced::TurnRecord> records;
      if (!target.empty()) {
        records = nuanced::replay(experiment, nuanced::http_transport(target), session);
      } else {
        auto config = config_from(config_path);
        config.seed = seed;
        config.log_dir.reset();
        std::unique_ptr<nuanced::ChatBackend> chat;
        if (backend == "mock") {
          nuanced::MockGenerationOptions opt;
          opt.tone_model = tone_model == "confusion" ? nuanced::ToneModel::confusion : nuanced::ToneModel::echo;
          opt.seed = seed;
          if (constant_latency) {
            opt.sample_latency = false;
            opt.constant_latency_ms = *constant_latency;
          }
          auto mock = nuanced::generate_mock_script(experiment, opt);
          if (!mock_out.empty()) write_out(mock_out, mock.to_json().dump(2) + "\n");
          config.backend.kind = nuanced::BackendSpec::Kind::mock;
          chat = std::make_unique<nuanced::MockBackend>(std::move(mock), config.backend.mock_options);
        } else {
          config.backend.kind = nuanced::BackendSpec::Kind::http;
          chat = nuanced::make_backend(config.backend);
        }
        nuanced::Hub hub(config, std::move(chat));
        records = nuanced::replay(experiment, nuanced::in_process_transport(hub), session);
      }
      write_out(out_path, nuanced::render_log(records));
      std::size_t failed = 0;
      for (const auto& r : records) failed += !r.ok;
      std::cerr << records.size() << " turns replayed, " << failed << " failed\n";
      return 0;
    }

    const auto log = nuanced::read_turn_log_file(log_path);
    const auto config = config_from(ana_config);
    const auto fmt = *nuanced::table_format_from_string(format);
    if (report == "series") {
      write_out(ana_out, nuanced::emit_turn_series_csv(log, config.nuances));
      return 0;
    }
    nuanced::Reports reports;
    const bool all = report == "all";
    if (all || report == "usage") reports.usage = nuanced::usage_report(log, config.nuances);
    if (report == "tone" || (all && !ana_script.empty())) {
      if (ana_script.empty()) throw nuanced::ConfigError("the tone report needs --script");
      reports.tone = nuanced::tone_confusion(log, nuanced::ScriptedExperiment::load_file(ana_script));
    }
    if (all || report == "latency") reports.latency = nuanced::latency_report(log);
    if (all || report == "topics") reports.topics = nuanced::topic_stats(log);
    if (all || report == "cost") reports.cost = nuanced::diversity_cost_report(log);
    write_out(ana_out, nuanced::emit_tables(reports, fmt));
    return 0;
  } catch (const nuanced::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
