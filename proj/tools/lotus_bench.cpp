#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "lotus/bench.hpp"
#include "lotus/error.hpp"

int main(int argc, char** argv) {
  using lotus::bench::Scenario;

  CLI::App app{"lotus-bench: workload driver for the filter/transform/extract scenarios"};
  std::vector<std::string> scenario_names;
  lotus::bench::ScenarioConfig base;
  std::string broker = "127.0.0.1:5789";
  std::string mgmt;
  std::string output;
  int interval_ms = static_cast<int>(base.publish_interval.count());
  int quiescence_ms = static_cast<int>(base.quiescence.count());

  app.add_option("--scenario", scenario_names, "baseline|filter|transform|extract|all (repeatable)")
      ->required()
      ->check(CLI::IsMember({"baseline", "filter", "transform", "extract", "all"}));
  app.add_option("--publishers", base.publishers)->capture_default_str();
  app.add_option("--subscribers", base.subscribers)->capture_default_str();
  app.add_option("--messages", base.messages_per_publisher, "messages per publisher")->capture_default_str();
  app.add_option("--seed", base.seed)->capture_default_str();
  app.add_option("--broker", broker, "client protocol address host:port")->capture_default_str();
  app.add_option("--mgmt", mgmt, "management API host:port (default: broker host, port 8790)");
  app.add_option("--output", output, "write the machine-readable report as CSV");
  app.add_option("--warmup", base.warmup_messages, "publications excluded from latency stats")->capture_default_str();
  app.add_option("--interval-ms", interval_ms, "per-publisher delay between publications")->capture_default_str();
  app.add_option("--quiescence-ms", quiescence_ms, "idle time that ends a run")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  auto split = [](const std::string& hostport, std::string& host, std::uint16_t& port) {
    auto colon = hostport.rfind(':');
    if (colon == std::string::npos) return false;
    host = hostport.substr(0, colon);
    try {
      port = static_cast<std::uint16_t>(std::stoul(hostport.substr(colon + 1)));
    } catch (...) {
      return false;
    }
    return true;
  };
  if (!split(broker, base.broker_host, base.broker_port)) {
    std::cerr << "--broker must be host:port\n";
    return 2;
  }
  base.mgmt_host = base.broker_host;
  if (!mgmt.empty() && !split(mgmt, base.mgmt_host, base.mgmt_port)) {
    std::cerr << "--mgmt must be host:port\n";
    return 2;
  }
  base.publish_interval = std::chrono::milliseconds(interval_ms);
  base.quiescence = std::chrono::milliseconds(quiescence_ms);

  std::vector<Scenario> scenarios;
  for (const auto& name : scenario_names) {
    if (name == "all") {
      scenarios = {Scenario::Baseline, Scenario::Filter, Scenario::Transform, Scenario::Extract};
      break;
    }
    scenarios.push_back(*lotus::bench::scenario_from_string(name));
  }

  std::vector<lotus::bench::RunReport> reports;
  try {
    for (auto s : scenarios) {
      auto cfg = base;
      cfg.scenario = s;
      std::cerr << "running " << lotus::bench::to_string(s) << "...\n";
      reports.push_back(lotus::bench::run_scenario(cfg));
    }
  } catch (const lotus::Error& e) {
    std::cerr << "bench failed: " << e.what() << "\n";
    return 3;
  }

  std::cout << lotus::bench::format_table(reports);
  if (!output.empty()) {
    std::ofstream out(output);
    lotus::bench::write_csv(out, reports);
  }
  for (const auto& r : reports) {
    if (!r.ok()) return 1;
  }
  return 0;
}
