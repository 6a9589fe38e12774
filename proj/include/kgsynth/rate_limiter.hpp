#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <mutex>
#include <vector>

namespace kgsynth {

using Nanos = std::chrono::nanoseconds;

class Clock {
 public:
  virtual ~Clock() = default;
  // Monotonic time.
  virtual Nanos now() const = 0;
  virtual void sleep_for(Nanos d) = 0;
  // Seconds since the epoch, used for record timestamps.
  virtual double wall_seconds() const = 0;
};

class SystemClock final : public Clock {
 public:
  Nanos now() const override;
  void sleep_for(Nanos d) override;
  double wall_seconds() const override;
};

// Sleeping advances the clock instantly. Shared by all threads: the clock
// never runs backwards, and a sleep ends no earlier than (call time + d).
class SimulatedClock final : public Clock {
 public:
  explicit SimulatedClock(Nanos start = Nanos{0}) : now_(start) {}
  Nanos now() const override;
  void sleep_for(Nanos d) override;
  double wall_seconds() const override;
  void advance(Nanos d);

 private:
  mutable std::mutex mu_;
  Nanos now_;
};

struct RateLimits {
  std::uint32_t requests_per_window = 20;
  std::uint64_t tokens_per_window = 150'000;
  Nanos window = std::chrono::minutes(1);

  void validate() const;
};

// Sliding-window log of admitted requests. acquire() blocks (on the given
// clock) until one more request of `tokens` fits both budgets over the last
// window.
class RateLimiter {
 public:
  struct Admission {
    std::uint64_t id = 0;
    Nanos at{0};
    std::uint64_t tokens = 0;
  };

  RateLimiter(RateLimits limits, Clock& clock);

  Admission acquire(std::uint64_t tokens);
  // Replaces the reserved token count with the endpoint-reported one, if the
  // admission is still inside the window.
  void settle(const Admission& admission, std::uint64_t actual_tokens);

  const RateLimits& limits() const { return limits_; }
  // Every admission so far, final token counts included.
  std::vector<Admission> history() const;

 private:
  void prune(Nanos now);

  RateLimits limits_;
  Clock& clock_;
  mutable std::mutex mu_;
  std::deque<Admission> window_;
  std::uint64_t window_tokens_ = 0;
  std::vector<Admission> history_;
  std::uint64_t next_id_ = 0;
};

}  // namespace kgsynth
