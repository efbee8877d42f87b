#pragma once

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lotus/codec.hpp"
#include "lotus/function_runtime.hpp"

namespace lotus::bench {

enum class Scenario { Baseline, Filter, Transform, Extract };

std::string_view to_string(Scenario s) noexcept;
std::optional<Scenario> scenario_from_string(std::string_view text) noexcept;

/// Readings at or above this temperature are forwarded by the filter scenario.
inline constexpr double kFilterThreshold = 30.0;
/// Out of every block of 100 consecutive filter-scenario messages, exactly
/// this many read below the threshold.
inline constexpr int kBelowThresholdPerHundred = 79;
inline constexpr int kTransformRows = 10;
inline constexpr int kExtractFillerKeys = 100;
inline constexpr int kExtractValueWidth = 8;

struct ScenarioConfig {
  Scenario scenario = Scenario::Baseline;
  int publishers = 50;
  int subscribers = 50;
  int messages_per_publisher = 100;
  std::uint64_t seed = 42;
  std::string broker_host = "127.0.0.1";
  std::uint16_t broker_port = 5789;
  std::string mgmt_host = "127.0.0.1";
  std::uint16_t mgmt_port = 8790;
  int warmup_messages = 100;  // first N publications excluded from latency stats
  std::chrono::milliseconds publish_interval{50};
  std::chrono::milliseconds quiescence{2000};
  std::chrono::milliseconds quiescence_timeout{60000};
};

/// Throws Error{InvalidConfig}.
void validate(const ScenarioConfig& cfg);

struct WorkItem {
  int publisher = 0;
  std::uint64_t seq = 0;  // global position in the workload
  std::string topic;
  Bytes payload;
  friend bool operator==(const WorkItem&, const WorkItem&) = default;
};

/// Deterministic in (cfg, seed). Items are ordered round-robin over
/// publishers: seq = round * publishers + publisher.
std::vector<WorkItem> generate_workload(const ScenarioConfig& cfg);

/// Number of workload items the scenario's function forwards.
std::size_t expected_forwarded(const ScenarioConfig& cfg, std::span<const WorkItem> workload);

/// Filter used by the scenario's subscribers ("bench/<scenario>/+").
std::string subscription_filter(Scenario s);
/// Function installed by processed scenarios; nullopt for the baseline.
std::optional<FunctionSpec> scenario_function(Scenario s);

struct LatencyStats {
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
  double p95 = 0.0;  // nearest rank
  double p99 = 0.0;
};

/// Throws Error{EmptySamples}.
LatencyStats summarize(std::span<const double> samples_ms);

struct RunReport {
  ScenarioConfig config;
  std::size_t published = 0;
  std::size_t expected_forwarded = 0;
  std::size_t delivered_count = 0;
  std::vector<std::size_t> per_subscriber;
  std::uint64_t invocations = 0;
  std::uint64_t drops = 0;
  std::uint64_t failures = 0;
  std::uint64_t bytes_in = 0;         // origin payload bytes published
  std::uint64_t bytes_out = 0;        // payload bytes of distinct delivered publications
  std::uint64_t delivered_bytes = 0;  // payload bytes summed over every delivery
  double mean_payload_ratio = 0.0;    // delivered / origin payload size, per delivery
  LatencyStats latency;
  std::vector<std::string> violations;

  bool ok() const noexcept { return violations.empty(); }
};

/// Drives one scenario against a running broker and waits for quiescence.
/// Throws Error{BrokerUnreachable} or Error{QuiescenceTimeout}.
RunReport run_scenario(const ScenarioConfig& cfg);

/// Human-readable table; processed scenarios show their overhead against a
/// baseline row when one is present.
std::string format_table(std::span<const RunReport> reports);
void write_csv(std::ostream& out, std::span<const RunReport> reports);

}  // namespace lotus::bench
