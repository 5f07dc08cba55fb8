#include "racestack/sim/cli.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "racestack/sim/bridge.hpp"
#include "racestack/sim/latency.hpp"
#include "racestack/sim/scenario.hpp"

namespace racestack::sim {

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;
constexpr int kRuntime = 3;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SimError(SimErrc::ScenarioInvalid, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep))
    if (!cur.empty()) parts.push_back(cur);
  return parts;
}

int exit_code_for(const SimError& e) {
  switch (e.code()) {
    case SimErrc::PortInUse: return kRuntime;
    case SimErrc::AssertionFailed: return kFailed;
    default: return kUsage;
  }
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_csv(tsl::LogReader& reader, std::ostream& out, bool schemas_only) {
  std::uint64_t current = 0;
  bool have_current = false;
  for (;;) {
    std::optional<tsl::Record> rec;
    try {
      rec = reader.next();
    } catch (const tsl::TslError& e) {
      if (e.code() == tsl::TslErrc::UnknownSchema) continue;
      throw;
    }
    if (!rec) break;
    if (rec->kind == tsl::RecordKind::Schema && schemas_only) {
      const auto& s = *rec->schema;
      char id[24];
      std::snprintf(id, sizeof id, "%016" PRIx64, s.schema_id);
      out << id;
      for (const auto& n : s.names) out << ',' << n;
      out << '\n';
    }
    if (rec->kind != tsl::RecordKind::Frame || schemas_only) continue;
    const auto& f = rec->frame;
    if (!have_current || f.schema_id != current) {
      out << "stamp_ns";
      for (const auto& n : f.schema->names) out << ',' << n;
      out << '\n';
      current = f.schema_id;
      have_current = true;
    }
    out << f.stamp.count();
    for (double v : f.values) out << ',' << format_double(v);
    out << '\n';
  }
}

int tslcat_main(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Decode a signal log to CSV"};
  std::string path;
  bool schemas = false;
  app.add_option("log", path, "log file")->required();
  app.add_flag("--schemas", schemas, "list announced schemas instead of frames");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }
  try {
    auto reader = tsl::LogReader::open(path);
    write_csv(reader, out, schemas);
    return kOk;
  } catch (const tsl::TslError& e) {
    err << "tslcat: " << e.what() << '\n';
    return e.code() == tsl::TslErrc::IoFailure ? kUsage : kFailed;
  }
}

int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Autonomy stack simulation harness"};
  app.require_subcommand(1);

  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> param_files;
  std::string trace_path, log_path;
  auto* run = app.add_subcommand("run", "run a scenario and print its summary");
  run->add_option("scenario", scenario, "bundled name or JSON path")->required();
  run->add_option("--seed", seed, "override the scenario seed");
  run->add_option("--params", param_files, "parameter override JSON (repeatable)");
  run->add_option("--trace", trace_path, "write the event trace here");
  run->add_option("--log", log_path, "write the signal log here");

  unsigned short port = 8765;
  std::optional<std::int64_t> duration_ms;
  auto* serve = app.add_subcommand("serve", "run a scenario in real time behind the console bridge");
  serve->add_option("scenario", scenario, "bundled name or JSON path")->required();
  serve->add_option("--port", port, "WebSocket port (0 picks one)");
  serve->add_option("--duration-ms", duration_ms, "override the scenario duration");
  serve->add_option("--seed", seed, "override the scenario seed");
  serve->add_option("--params", param_files, "parameter override JSON (repeatable)");

  std::string analyze_path;
  std::string chain;
  double period_ms = 10.0;
  auto* analyze = app.add_subcommand("analyze", "chain latency report from a recorded log");
  analyze->add_option("log", analyze_path, "log file")->required();
  analyze->add_option("--chain", chain, "comma-separated topics")->required();
  analyze->add_option("--period", period_ms, "reference period in ms");

  auto* list = app.add_subcommand("list", "list bundled scenarios");

  std::string cat_log;
  bool cat_schemas = false;
  auto* cat = app.add_subcommand("tslcat", "decode a signal log to CSV");
  cat->add_option("log", cat_log, "log file")->required();
  cat->add_flag("--schemas", cat_schemas, "list schemas only");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  SessionOptions opts;
  opts.seed = seed;
  try {
    for (const auto& f : param_files) opts.param_documents.push_back(read_text(f));
    if (*list) {
      for (const auto& n : bundled_scenario_names()) out << n << '\n';
      return kOk;
    }
    if (*cat) {
      auto reader = tsl::LogReader::open(cat_log);
      write_csv(reader, out, cat_schemas);
      return kOk;
    }
    if (*analyze) {
      if (!(period_ms > 0.0)) throw SimError(SimErrc::ScenarioInvalid, "--period must be positive");
      const auto bytes = tsl::read_file(analyze_path);
      const auto report = analyze_log(bytes, split(chain, ','), from_ms(period_ms));
      out << report.to_json().dump(2) << '\n';
      return kOk;
    }
    auto spec = load_scenario(scenario);
    if (*run) {
      if (!log_path.empty()) opts.log_path = log_path;
      opts.trace = !trace_path.empty();
      const auto result = run_scenario(spec, opts);
      if (!trace_path.empty()) {
        std::ofstream t(trace_path, std::ios::binary);
        t << result.trace;
        if (!t) throw tsl::TslError(tsl::TslErrc::IoFailure, "cannot write " + trace_path);
      }
      out << result.summary().dump(2) << '\n';
      return result.passed ? kOk : kFailed;
    }
    // serve
    if (duration_ms) {
      if (*duration_ms <= 0) throw SimError(SimErrc::ScenarioInvalid, "--duration-ms must be positive");
      spec.duration = std::chrono::milliseconds(*duration_ms);
    }
    opts.trace = false;
    BridgeServer server(port);
    Session session(std::move(spec), opts);
    session.bus().set_pacing(bus::Pacing::WallClock);
    Bridge bridge(session, server);
    err << "racestack: serving " << session.spec().name << " on ws://127.0.0.1:" << server.port() << '\n';
    session.run();
    const auto result = session.finish();
    out << result.summary().dump(2) << '\n';
    return result.passed ? kOk : kFailed;
  } catch (const SimError& e) {
    err << "racestack: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const tsl::TslError& e) {
    err << "racestack: " << e.what() << '\n';
    return e.code() == tsl::TslErrc::IoFailure ? kRuntime : kFailed;
  } catch (const params::ParamError& e) {
    err << "racestack: " << e.what() << '\n';
    return kUsage;
  }
}

}  // namespace racestack::sim
