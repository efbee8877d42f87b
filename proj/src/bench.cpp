#include "lotus/bench.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <httplib.h>
#include <fmt/format.h>

#include "lotus/broker.hpp"
#include "lotus/client.hpp"
#include "lotus/error.hpp"

namespace lotus::bench {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// All workload randomness comes from the raw 64-bit engine output, which the
// standard pins down exactly, so workloads are identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  std::uint64_t next() { return engine_(); }
  std::int64_t between(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(next() % static_cast<std::uint64_t>(hi - lo + 1));
  }

 private:
  std::mt19937_64 engine_;
};

const Location kSite{52.5200, 13.4050};
constexpr double kFenceRadiusMeters = 50'000.0;

std::vector<bool> hot_pattern(std::size_t total, Rng& rng) {
  std::vector<bool> hot(total, false);
  for (std::size_t block = 0; block < total; block += 100) {
    std::array<int, 100> order;
    std::iota(order.begin(), order.end(), 0);
    for (int i = 99; i > 0; --i) std::swap(order[i], order[rng.next() % static_cast<std::uint64_t>(i + 1)]);
    for (int i = 0; i < 100 - kBelowThresholdPerHundred; ++i) {
      std::size_t pos = block + static_cast<std::size_t>(order[i]);
      if (pos < total) hot[pos] = true;
    }
  }
  return hot;
}

Bytes filter_payload(std::uint64_t seq, bool hot, Rng& rng) {
  // Integer tenths keep every reading exactly on one side of the threshold.
  std::int64_t tenths = hot ? rng.between(300, 450) : rng.between(-100, 299);
  std::int64_t wind = rng.between(0, 250);
  ordered_json j = {{"seq", seq}, {"temperature", tenths / 10.0}, {"wind", wind / 10.0}};
  return j.dump();
}

Bytes transform_payload(std::uint64_t seq, Rng& rng) {
  ordered_json rows = ordered_json::array();
  for (int r = 0; r < kTransformRows; ++r) {
    rows.push_back({{"seq", seq},
                    {"row", r},
                    {"station", fmt::format("st-{:02}", rng.between(0, 99))},
                    {"temperature", rng.between(-100, 400) / 10.0},
                    {"humidity", rng.between(0, 1000) / 10.0}});
  }
  return rows.dump();
}

Bytes extract_payload(std::uint64_t seq, Rng& rng) {
  static constexpr char kAlphabet[] = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
  std::string out = fmt::format("{{\"k0\":\"{:08}\"", seq);
  for (int k = 1; k <= kExtractFillerKeys; ++k) {
    std::string value(kExtractValueWidth, ' ');
    for (auto& c : value) c = kAlphabet[rng.next() % (sizeof kAlphabet - 1)];
    out += fmt::format(",\"k{}\":\"{}\"", k, value);
  }
  out += "}";
  return out;
}

const std::string kTransformHeader = "humidity,row,seq,station,temperature";

struct Received {
  std::optional<std::uint64_t> seq;
  std::string problem;
};

std::optional<std::uint64_t> parse_uint(std::string_view text) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || p != text.data() + text.size()) return std::nullopt;
  return v;
}

// Recovers the origin sequence number of a delivered payload and checks that
// the payload is what the scenario's function should have produced.
Received inspect(Scenario scenario, const Bytes& payload, std::span<const WorkItem> workload) {
  Received r;
  if (scenario == Scenario::Transform) {
    std::vector<std::string> lines;
    std::stringstream in(payload);
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    if (lines.size() != kTransformRows + 1 || lines[0] != kTransformHeader || payload.back() != '\n') {
      r.problem = "transform output is not a " + std::to_string(kTransformRows) + "-row CSV";
      return r;
    }
    // seq is the third column and never needs quoting.
    std::string_view row = lines[1];
    auto first = row.find(',');
    auto second = row.find(',', first + 1);
    auto third = row.find(',', second + 1);
    r.seq = parse_uint(row.substr(second + 1, third - second - 1));
    if (!r.seq) r.problem = "transform output has no seq column";
    return r;
  }

  json doc = json::parse(payload, nullptr, false);
  if (!doc.is_object()) {
    r.problem = "delivered payload is not a JSON object";
    return r;
  }
  if (scenario == Scenario::Extract) {
    auto it = doc.find("k0");
    if (doc.size() != 1 || it == doc.end() || !it->is_string()) {
      r.problem = "extract output is not {\"k0\": ...}";
      return r;
    }
    r.seq = parse_uint(it->get_ref<const std::string&>());
  } else {
    auto it = doc.find("seq");
    if (it != doc.end() && it->is_number_unsigned()) r.seq = it->get<std::uint64_t>();
  }
  if (!r.seq || *r.seq >= workload.size()) {
    r.seq.reset();
    r.problem = "delivered payload carries no valid sequence number";
    return r;
  }
  if (scenario != Scenario::Extract && payload != workload[*r.seq].payload) {
    r.problem = "forwarded payload differs from the origin";
  }
  if (scenario == Scenario::Filter && doc.value("temperature", -1e9) < kFilterThreshold) {
    r.problem = "filter forwarded a reading below the threshold";
  }
  return r;
}

json fetch_stats(const ScenarioConfig& cfg) {
  httplib::Client http(cfg.mgmt_host, cfg.mgmt_port);
  http.set_connection_timeout(std::chrono::seconds(5));
  auto res = http.Get("/stats");
  if (!res || res->status != 200) {
    throw Error(ErrorCode::BrokerUnreachable,
                fmt::format("management API {}:{} did not answer GET /stats", cfg.mgmt_host, cfg.mgmt_port));
  }
  json body = json::parse(res->body, nullptr, false);
  if (!body.is_object() || !body.contains("totals")) {
    throw Error(ErrorCode::BrokerUnreachable, "malformed /stats response");
  }
  return body["totals"];
}

std::uint64_t counter(const json& totals, const char* key) { return totals.value(key, std::uint64_t{0}); }

}  // namespace

std::string_view to_string(Scenario s) noexcept {
  switch (s) {
    case Scenario::Baseline: return "baseline";
    case Scenario::Filter: return "filter";
    case Scenario::Transform: return "transform";
    case Scenario::Extract: return "extract";
  }
  return "unknown";
}

std::optional<Scenario> scenario_from_string(std::string_view text) noexcept {
  for (auto s : {Scenario::Baseline, Scenario::Filter, Scenario::Transform, Scenario::Extract}) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

void validate(const ScenarioConfig& cfg) {
  if (cfg.publishers <= 0 || cfg.subscribers <= 0 || cfg.messages_per_publisher <= 0) {
    throw Error(ErrorCode::InvalidConfig, "publishers, subscribers and messages must be positive");
  }
  if (cfg.warmup_messages < 0) throw Error(ErrorCode::InvalidConfig, "warmup must not be negative");
  if (static_cast<std::int64_t>(cfg.publishers) * cfg.messages_per_publisher > 99'999'999) {
    throw Error(ErrorCode::InvalidConfig, "workload exceeds 99,999,999 messages");
  }
  if (cfg.quiescence.count() <= 0 || cfg.quiescence_timeout < cfg.quiescence) {
    throw Error(ErrorCode::InvalidConfig, "quiescence window must be positive and below the timeout");
  }
}

std::vector<WorkItem> generate_workload(const ScenarioConfig& cfg) {
  validate(cfg);
  const std::size_t total = static_cast<std::size_t>(cfg.publishers) * cfg.messages_per_publisher;
  Rng rng(cfg.seed);
  std::vector<bool> hot;
  if (cfg.scenario == Scenario::Filter || cfg.scenario == Scenario::Baseline) hot = hot_pattern(total, rng);

  std::vector<WorkItem> out;
  out.reserve(total);
  for (std::size_t seq = 0; seq < total; ++seq) {
    int publisher = static_cast<int>(seq % static_cast<std::size_t>(cfg.publishers));
    WorkItem item{publisher, seq, fmt::format("bench/{}/p{}", to_string(cfg.scenario), publisher), {}};
    switch (cfg.scenario) {
      case Scenario::Baseline:
      case Scenario::Filter: item.payload = filter_payload(seq, hot[seq], rng); break;
      case Scenario::Transform: item.payload = transform_payload(seq, rng); break;
      case Scenario::Extract: item.payload = extract_payload(seq, rng); break;
    }
    out.push_back(std::move(item));
  }
  return out;
}

std::size_t expected_forwarded(const ScenarioConfig& cfg, std::span<const WorkItem> workload) {
  if (cfg.scenario != Scenario::Filter) return workload.size();
  ThresholdConfig threshold{"temperature", Comparison::GreaterEqual, kFilterThreshold};
  return static_cast<std::size_t>(std::count_if(workload.begin(), workload.end(), [&](const WorkItem& w) {
    return std::holds_alternative<Forward>(builtin::threshold_filter(w.payload, threshold));
  }));
}

std::string subscription_filter(Scenario s) { return fmt::format("bench/{}/+", to_string(s)); }

std::optional<FunctionSpec> scenario_function(Scenario s) {
  FunctionSpec spec;
  spec.name = fmt::format("bench-{}", to_string(s));
  switch (s) {
    case Scenario::Baseline: return std::nullopt;
    case Scenario::Filter:
      spec.executor = BuiltinExecutor{ThresholdConfig{"temperature", Comparison::GreaterEqual, kFilterThreshold}};
      break;
    case Scenario::Transform: spec.executor = BuiltinExecutor{JsonToCsvConfig{}}; break;
    case Scenario::Extract: spec.executor = BuiltinExecutor{ExtractKeysConfig{{"k0"}}}; break;
  }
  return spec;
}

static std::optional<Bytes> expected_output(Scenario scenario, const Bytes& payload) {
  auto spec = scenario_function(scenario);
  if (!spec) return payload;
  Outcome o = std::visit(
      [&](const auto& c) -> Outcome {
        using C = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<C, ThresholdConfig>) return builtin::threshold_filter(payload, c);
        else if constexpr (std::is_same_v<C, JsonToCsvConfig>) return builtin::json_to_csv(payload);
        else if constexpr (std::is_same_v<C, ExtractKeysConfig>) return builtin::extract_keys(payload, c);
        else return builtin::identity(payload);
      },
      std::get<BuiltinExecutor>(spec->executor));
  if (const auto* f = std::get_if<Forward>(&o)) return f->payload;
  return std::nullopt;
}

LatencyStats summarize(std::span<const double> samples_ms) {
  if (samples_ms.empty()) throw Error(ErrorCode::EmptySamples, "no latency samples");
  std::vector<double> sorted(samples_ms.begin(), samples_ms.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  auto nearest_rank = [&](double p) {
    auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(n)));
    return sorted[std::clamp<std::size_t>(rank, 1, n) - 1];
  };
  LatencyStats s;
  s.count = n;
  s.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(n);
  s.median = n % 2 ? sorted[n / 2] : (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0;
  s.p95 = nearest_rank(95.0);
  s.p99 = nearest_rank(99.0);
  return s;
}

RunReport run_scenario(const ScenarioConfig& cfg) {
  validate(cfg);
  const std::vector<WorkItem> workload = generate_workload(cfg);
  RunReport report;
  report.config = cfg;
  report.published = workload.size();
  report.expected_forwarded = expected_forwarded(cfg, workload);
  report.per_subscriber.assign(static_cast<std::size_t>(cfg.subscribers), 0);
  for (const auto& w : workload) report.bytes_in += w.payload.size();

  const json before = fetch_stats(cfg);

  // What the scenario's function should deliver for each item. Each output
  // is checked once here, so a delivery only needs a lookup to be matched to
  // its origin and verified.
  std::set<std::string> problems;
  std::vector<std::optional<Bytes>> expected(workload.size());
  std::unordered_map<std::string_view, std::uint64_t> by_output;
  for (std::size_t seq = 0; seq < workload.size(); ++seq) {
    expected[seq] = expected_output(cfg.scenario, workload[seq].payload);
    if (!expected[seq]) continue;
    Received r = inspect(cfg.scenario, *expected[seq], workload);
    if (!r.problem.empty()) problems.insert(r.problem);
    if (r.seq != seq) problems.insert("function output does not identify its origin");
    by_output.emplace(*expected[seq], seq);
  }

  std::vector<std::atomic<std::int64_t>> sent_at(workload.size());
  std::vector<std::atomic<bool>> seen(workload.size());
  std::atomic<std::int64_t> last_activity{monotonic_now_ns()};
  std::mutex mutex;
  std::vector<double> samples;
  double ratio_sum = 0.0;

  auto handler_for = [&](std::size_t subscriber) {
    return [&, subscriber](const wire::Delivery& d, std::int64_t received_ns) {
      last_activity.store(received_ns);
      auto it = by_output.find(d.payload);
      std::lock_guard lock(mutex);
      ++report.per_subscriber[subscriber];
      ++report.delivered_count;
      report.delivered_bytes += d.payload.size();
      if (it == by_output.end()) {
        problems.insert("delivered payload matches no expected function output");
        return;
      }
      const std::uint64_t seq = it->second;
      if (!seen[seq].exchange(true)) report.bytes_out += d.payload.size();
      ratio_sum += static_cast<double>(d.payload.size()) / static_cast<double>(workload[seq].payload.size());
      std::int64_t sent = sent_at[seq].load();
      if (sent > 0 && seq >= static_cast<std::uint64_t>(cfg.warmup_messages)) {
        samples.push_back(static_cast<double>(received_ns - sent) / 1e6);
      }
    };
  };

  const Geofence fence = Geofence::circle(kSite, kFenceRadiusMeters);
  const std::optional<FunctionSpec> function = scenario_function(cfg.scenario);
  {
    std::vector<std::unique_ptr<Client>> subscribers;
    for (int s = 0; s < cfg.subscribers; ++s) {
      auto client = std::make_unique<Client>(cfg.broker_host, cfg.broker_port, handler_for(static_cast<std::size_t>(s)));
      client->connect(fmt::format("bench-{}-sub-{}", to_string(cfg.scenario), s), kSite);
      if (function) {
        client->function_subscribe(subscription_filter(cfg.scenario), fence, *function);
      } else {
        client->subscribe(subscription_filter(cfg.scenario), fence);
      }
      subscribers.push_back(std::move(client));
    }

    std::vector<std::unique_ptr<Client>> publishers;
    for (int p = 0; p < cfg.publishers; ++p) {
      auto client = std::make_unique<Client>(cfg.broker_host, cfg.broker_port);
      client->connect(fmt::format("bench-{}-pub-{}", to_string(cfg.scenario), p), kSite);
      publishers.push_back(std::move(client));
    }

    const auto start = std::chrono::steady_clock::now() + std::chrono::milliseconds(50);
    std::vector<std::thread> threads;
    for (int p = 0; p < cfg.publishers; ++p) {
      threads.emplace_back([&, p] {
        // Publishers are staggered evenly across one interval.
        auto at = start + cfg.publish_interval * p / cfg.publishers;
        for (std::size_t seq = static_cast<std::size_t>(p); seq < workload.size();
             seq += static_cast<std::size_t>(cfg.publishers)) {
          std::this_thread::sleep_until(at);
          sent_at[seq].store(monotonic_now_ns());
          publishers[static_cast<std::size_t>(p)]->publish(workload[seq].topic, workload[seq].payload, fence);
          at += cfg.publish_interval;
        }
      });
    }
    for (auto& t : threads) t.join();
    last_activity.store(std::max(last_activity.load(), monotonic_now_ns()));

    const auto wait_start = std::chrono::steady_clock::now();
    while (true) {
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
      auto idle = std::chrono::nanoseconds(monotonic_now_ns() - last_activity.load());
      if (idle >= cfg.quiescence) break;
      if (std::chrono::steady_clock::now() - wait_start > cfg.quiescence_timeout) {
        throw Error(ErrorCode::QuiescenceTimeout, "deliveries still arriving after the quiescence timeout");
      }
    }
  }

  const json after = fetch_stats(cfg);
  report.invocations = counter(after, "invocations") - counter(before, "invocations");
  report.drops = counter(after, "dropped") - counter(before, "dropped");
  report.failures = counter(after, "failures") - counter(before, "failures");

  std::lock_guard lock(mutex);
  if (report.delivered_count > 0) report.mean_payload_ratio = ratio_sum / static_cast<double>(report.delivered_count);
  if (!samples.empty()) report.latency = summarize(samples);
  report.violations.assign(problems.begin(), problems.end());

  for (std::size_t s = 0; s < report.per_subscriber.size(); ++s) {
    if (report.per_subscriber[s] != report.expected_forwarded) {
      report.violations.push_back(fmt::format("subscriber {} received {} messages, expected {}", s,
                                              report.per_subscriber[s], report.expected_forwarded));
      break;
    }
  }
  const std::size_t expected_total = report.expected_forwarded * static_cast<std::size_t>(cfg.subscribers);
  if (report.delivered_count != expected_total) {
    report.violations.push_back(
        fmt::format("delivered_count {} != subscribers x forwarded = {}", report.delivered_count, expected_total));
  }
  const std::uint64_t expected_invocations = function ? report.published : 0;
  if (report.invocations != expected_invocations) {
    report.violations.push_back(
        fmt::format("invocations {} != expected {}", report.invocations, expected_invocations));
  }
  if ((cfg.scenario == Scenario::Filter || cfg.scenario == Scenario::Extract) && report.bytes_out > report.bytes_in) {
    report.violations.push_back("bytes_out exceeds bytes_in");
  }
  if (report.failures != 0) report.violations.push_back(fmt::format("{} function failures", report.failures));
  return report;
}

std::string format_table(std::span<const RunReport> reports) {
  const RunReport* baseline = nullptr;
  for (const auto& r : reports) {
    if (r.config.scenario == Scenario::Baseline) baseline = &r;
  }
  std::string out = fmt::format("{:<10} {:>9} {:>9} {:>9} {:>9} {:>10} {:>11} {:>7} {:>11} {:>11} {:>8} {:>14}\n",
                                "scenario", "mean ms", "median", "p95", "p99", "delivered", "invocations", "drops",
                                "bytes_in", "bytes_out", "ratio", "vs baseline");
  for (const auto& r : reports) {
    std::string overhead = "-";
    if (baseline && &r != baseline && baseline->latency.mean > 0) {
      overhead = fmt::format("+{:.2f}ms x{:.2f}", r.latency.mean - baseline->latency.mean,
                             r.latency.mean / baseline->latency.mean);
    }
    out += fmt::format("{:<10} {:>9.3f} {:>9.3f} {:>9.3f} {:>9.3f} {:>10} {:>11} {:>7} {:>11} {:>11} {:>8.4f} {:>14}\n",
                       to_string(r.config.scenario), r.latency.mean, r.latency.median, r.latency.p95, r.latency.p99,
                       r.delivered_count, r.invocations, r.drops, r.bytes_in, r.bytes_out, r.mean_payload_ratio,
                       overhead);
  }
  for (const auto& r : reports) {
    for (const auto& v : r.violations) out += fmt::format("VIOLATION [{}]: {}\n", to_string(r.config.scenario), v);
  }
  return out;
}

void write_csv(std::ostream& out, std::span<const RunReport> reports) {
  out << "scenario,publishers,subscribers,messages_per_publisher,seed,published,expected_forwarded,"
         "delivered_count,invocations,drops,failures,bytes_in,bytes_out,delivered_bytes,mean_payload_ratio,"
         "latency_samples,latency_mean_ms,latency_median_ms,latency_p95_ms,latency_p99_ms,ok\n";
  for (const auto& r : reports) {
    const auto& c = r.config;
    out << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.6f},{},{:.4f},{:.4f},{:.4f},{:.4f},{}\n",
                       to_string(c.scenario), c.publishers, c.subscribers, c.messages_per_publisher, c.seed,
                       r.published, r.expected_forwarded, r.delivered_count, r.invocations, r.drops, r.failures,
                       r.bytes_in, r.bytes_out, r.delivered_bytes, r.mean_payload_ratio, r.latency.count,
                       r.latency.mean, r.latency.median, r.latency.p95, r.latency.p99, r.ok() ? "true" : "false");
  }
}

}  // namespace lotus::bench
