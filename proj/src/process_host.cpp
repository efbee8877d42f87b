#include "process_host.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>
#include <vector>

extern char** environ;

namespace lotus::detail {
namespace {

using Clock = std::chrono::steady_clock;

bool send_all(int fd, std::string_view data, Clock::time_point deadline) {
  while (!data.empty()) {
    ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL | MSG_DONTWAIT);
    if (n > 0) {
      data.remove_prefix(static_cast<std::size_t>(n));
      continue;
    }
    if (n < 0 && errno == EINTR) continue;
    if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
      auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
      if (left <= 0) return false;
      pollfd p{fd, POLLOUT, 0};
      ::poll(&p, 1, static_cast<int>(left));
      continue;
    }
    return false;
  }
  return true;
}

}  // namespace

struct ProcessHost::Channel {
  int fd = -1;
  pid_t pid = -1;

  ~Channel() {
    if (fd >= 0) ::close(fd);
    if (pid > 0) {
      ::kill(pid, SIGKILL);
      int status = 0;
      while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
      }
    }
  }
};

ProcessHost::ProcessHost(ProcessExecutor executor, std::size_t max_payload)
    : executor_(std::move(executor)), max_payload_(max_payload) {}

ProcessHost::~ProcessHost() {
  std::shared_ptr<Channel> channel;
  {
    std::lock_guard lock(mutex_);
    channel = current_;
    fail_all_locked(FailureReason::Crash, "function removed");
  }
  if (channel) {
    ::shutdown(channel->fd, SHUT_RDWR);
    ::kill(channel->pid, SIGKILL);
  }
  if (reader_.joinable()) reader_.join();
}

std::shared_ptr<ProcessHost::Channel> ProcessHost::ensure_running_locked(std::string& error) {
  if (current_) return current_;
  // The previous reader, if any, already left its critical section.
  if (reader_.joinable()) reader_.join();

  int sv[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0) {
    error = std::string("socketpair: ") + std::strerror(errno);
    return nullptr;
  }

  std::vector<std::string> env_storage;
  for (char** e = environ; *e; ++e) {
    std::string_view entry(*e);
    auto key = entry.substr(0, entry.find('='));
    if (!executor_.env.contains(std::string(key))) env_storage.emplace_back(entry);
  }
  for (const auto& [k, v] : executor_.env) env_storage.push_back(k + "=" + v);
  std::vector<char*> envp;
  for (auto& s : env_storage) envp.push_back(s.data());
  envp.push_back(nullptr);
  std::vector<std::string> args = executor_.command;
  std::vector<char*> argv;
  for (auto& s : args) argv.push_back(s.data());
  argv.push_back(nullptr);

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, sv[1], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, sv[1], STDOUT_FILENO);
  pid_t pid = -1;
  int rc = ::posix_spawnp(&pid, argv[0], &actions, nullptr, argv.data(), envp.data());
  posix_spawn_file_actions_destroy(&actions);
  ::close(sv[1]);
  if (rc != 0) {
    ::close(sv[0]);
    error = "spawn " + executor_.command.front() + ": " + std::strerror(rc);
    return nullptr;
  }

  auto channel = std::make_shared<Channel>();
  channel->fd = sv[0];
  channel->pid = pid;
  current_ = channel;
  reader_ = std::thread(&ProcessHost::reader_loop, this, channel);
  return channel;
}

void ProcessHost::fail_all_locked(FailureReason reason, const std::string& detail) {
  for (auto& [id, promise] : pending_) promise.set_value(Failure{reason, detail});
  pending_.clear();
}

void ProcessHost::reader_loop(std::shared_ptr<Channel> channel) {
  std::string buffer;
  char chunk[64 * 1024];
  while (true) {
    ssize_t n = ::recv(channel->fd, chunk, sizeof chunk, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    buffer.append(chunk, static_cast<std::size_t>(n));
    std::size_t start = 0;
    for (auto pos = buffer.find('\n', start); pos != std::string::npos; pos = buffer.find('\n', start)) {
      handle_line(buffer.substr(start, pos - start));
      start = pos + 1;
    }
    buffer.erase(0, start);
  }
  std::lock_guard lock(mutex_);
  fail_all_locked(FailureReason::Crash, "function process exited");
  if (current_ == channel) current_.reset();
}

void ProcessHost::handle_line(const std::string& line) {
  auto reply = nlohmann::json::parse(line, nullptr, false);
  std::lock_guard lock(mutex_);
  if (pending_.empty()) return;

  std::uint64_t id = 0;
  bool id_ok = reply.is_object() && reply.contains("id") && reply["id"].is_string();
  if (id_ok) {
    const auto& text = reply["id"].get_ref<const std::string&>();
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), id);
    id_ok = ec == std::errc{} && p == text.data() + text.size();
  }
  if (!id_ok) {
    auto oldest = pending_.begin();
    oldest->second.set_value(Failure{FailureReason::MalformedResponse, "unparsable response line"});
    pending_.erase(oldest);
    return;
  }
  auto it = pending_.find(id);
  if (it == pending_.end()) return;  // late reply to a timed-out request

  Outcome outcome = Failure{FailureReason::MalformedResponse, "bad action"};
  auto action = reply.find("action");
  if (action != reply.end() && *action == "drop") {
    outcome = Drop{};
  } else if (action != reply.end() && *action == "forward") {
    auto body = reply.find("payload_b64");
    std::optional<Bytes> payload;
    if (body != reply.end() && body->is_string()) payload = base64_decode(body->get_ref<const std::string&>());
    if (!payload) {
      outcome = Failure{FailureReason::MalformedResponse, "forward without valid payload_b64"};
    } else if (payload->size() > max_payload_) {
      outcome = Failure{FailureReason::MalformedResponse, "forwarded payload exceeds cap"};
    } else {
      outcome = Forward{std::move(*payload)};
    }
  }
  it->second.set_value(std::move(outcome));
  pending_.erase(it);
}

Outcome ProcessHost::call(const Invocation& inv, std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  std::shared_ptr<Channel> channel;
  std::uint64_t id = 0;
  std::future<Outcome> result;
  {
    std::lock_guard lock(mutex_);
    std::string error;
    channel = ensure_running_locked(error);
    if (!channel) return Failure{FailureReason::Crash, error};
    id = next_id_++;
    result = pending_[id].get_future();
  }

  nlohmann::json request = {
      {"id", std::to_string(id)},
      {"topic", inv.topic},
      {"payload_b64", base64_encode(inv.payload)},
      {"lat", inv.publisher_location.lat()},
      {"lon", inv.publisher_location.lon()},
      {"ts", inv.published_at},
  };
  std::string line = request.dump() + "\n";
  bool sent;
  {
    std::lock_guard lock(write_mutex_);
    sent = send_all(channel->fd, line, deadline);
  }
  if (!sent) {
    std::lock_guard lock(mutex_);
    if (auto it = pending_.find(id); it != pending_.end()) {
      pending_.erase(it);
      bool expired = Clock::now() >= deadline;
      return Failure{expired ? FailureReason::Timeout : FailureReason::Crash, "request write failed"};
    }
  }

  if (result.wait_until(deadline) == std::future_status::ready) return result.get();
  {
    std::lock_guard lock(mutex_);
    if (auto it = pending_.find(id); it != pending_.end()) {
      pending_.erase(it);
      return Failure{FailureReason::Timeout, "no response within " + std::to_string(timeout.count()) + " ms"};
    }
  }
  return result.get();
}

}  // namespace lotus::detail
