#pragma once

#include <sys/types.h>

#include <chrono>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "lotus/function_runtime.hpp"

namespace lotus::detail {

/// Owns one warm child process and multiplexes invocations over its
/// stdin/stdout. The child is spawned on first use and again after it exits.
class ProcessHost {
 public:
  ProcessHost(ProcessExecutor executor, std::size_t max_payload);
  ~ProcessHost();
  ProcessHost(const ProcessHost&) = delete;
  ProcessHost& operator=(const ProcessHost&) = delete;

  Outcome call(const Invocation& inv, std::chrono::milliseconds timeout);

 private:
  struct Channel;

  std::shared_ptr<Channel> ensure_running_locked(std::string& error);
  void reader_loop(std::shared_ptr<Channel> channel);
  void handle_line(const std::string& line);
  void fail_all_locked(FailureReason reason, const std::string& detail);

  ProcessExecutor executor_;
  std::size_t max_payload_;

  std::mutex mutex_;
  std::shared_ptr<Channel> current_;
  std::thread reader_;
  std::map<std::uint64_t, std::promise<Outcome>> pending_;
  std::uint64_t next_id_ = 1;

  std::mutex write_mutex_;
};

}  // namespace lotus::detail
