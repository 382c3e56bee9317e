#pragma once

#include <chrono>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

#include "sof/cloudhub/hub.hpp"

namespace sof::cloudhub {

using Clock = std::function<Timestamp()>;

inline Timestamp wall_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

/// Owns a Hub for concurrent callers. Every command runs under one lock, in
/// arrival order; training runs on a worker thread outside the lock and rejoins
/// through `complete_job`.
class HubService {
 public:
  explicit HubService(Hub hub, Clock clock = wall_clock_ms) : hub_(std::move(hub)), clock_(std::move(clock)) {}
  HubService(const HubService&) = delete;
  HubService& operator=(const HubService&) = delete;
  ~HubService() { stop(); }

  /// Runs `f(hub, now)` serialized with every other command.
  template <class F>
  decltype(auto) command(F&& f) {
    struct Notify {
      std::condition_variable& cv;
      ~Notify() { cv.notify_all(); }
    } notify{changed_};
    std::lock_guard lock(mutex_);
    return std::forward<F>(f)(hub_, clock_());
  }

  template <class F>
  decltype(auto) read(F&& f) const {
    std::lock_guard lock(mutex_);
    return std::forward<F>(f)(static_cast<const Hub&>(hub_));
  }

  void start_worker() {
    std::lock_guard lock(mutex_);
    if (worker_.joinable()) return;
    stopping_ = false;
    worker_ = std::thread([this] { work(); });
  }

  void stop() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    changed_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  [[nodiscard]] bool stopping() const {
    std::lock_guard lock(mutex_);
    return stopping_;
  }

  /// Events with id > `after`, waiting up to `timeout` for the first one.
  std::vector<HubEvent> wait_events(std::uint64_t after, std::chrono::milliseconds timeout) {
    std::unique_lock lock(mutex_);
    const auto newer = [&] { return !hub_.events().empty() && hub_.events().back().id > after; };
    changed_.wait_for(lock, timeout, [&] { return stopping_ || newer(); });
    std::vector<HubEvent> out;
    for (const auto& e : hub_.events()) {
      if (e.id > after) out.push_back(e);
    }
    return out;
  }

  /// Id of the newest event so far (0 when none).
  [[nodiscard]] std::uint64_t last_event_id() const {
    std::lock_guard lock(mutex_);
    return hub_.events().empty() ? 0 : hub_.events().back().id;
  }

  /// Blocks until no job is queued or running, or the timeout passes.
  bool wait_idle(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mutex_);
    return changed_.wait_for(lock, timeout, [&] { return !hub_.has_queued_job() && !hub_.has_running_job(); });
  }

 private:
  void work() {
    std::unique_lock lock(mutex_);
    for (;;) {
      changed_.wait(lock, [&] { return stopping_ || (hub_.has_queued_job() && !hub_.has_running_job()); });
      if (stopping_) return;
      auto w = hub_.begin_next_job(clock_());
      if (!w) continue;
      lock.unlock();
      const auto out = compute_job(*w);
      lock.lock();
      hub_.complete_job(w->job_id, out, clock_());
      changed_.notify_all();
    }
  }

  Hub hub_;
  Clock clock_;
  mutable std::mutex mutex_;
  std::condition_variable changed_;
  std::thread worker_;
  bool stopping_ = false;
};

}  // namespace sof::cloudhub
