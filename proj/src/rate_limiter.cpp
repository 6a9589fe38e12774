#include "kgsynth/rate_limiter.hpp"

#include <algorithm>
#include <thread>

#include "kgsynth/error.hpp"

namespace kgsynth {

Nanos SystemClock::now() const {
  return std::chrono::duration_cast<Nanos>(
      std::chrono::steady_clock::now().time_since_epoch());
}

void SystemClock::sleep_for(Nanos d) {
  if (d > Nanos{0}) std::this_thread::sleep_for(d);
}

double SystemClock::wall_seconds() const {
  return std::chrono::duration<double>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

Nanos SimulatedClock::now() const {
  std::lock_guard lock(mu_);
  return now_;
}

void SimulatedClock::sleep_for(Nanos d) { advance(d); }

void SimulatedClock::advance(Nanos d) {
  if (d <= Nanos{0}) return;
  std::lock_guard lock(mu_);
  now_ += d;
}

double SimulatedClock::wall_seconds() const {
  return std::chrono::duration<double>(now()).count();
}

void RateLimits::validate() const {
  if (requests_per_window == 0) {
    throw ValidationError("request budget must be positive");
  }
  if (tokens_per_window == 0) {
    throw ValidationError("token budget must be positive");
  }
  if (window <= Nanos{0}) throw ValidationError("window must be positive");
}

RateLimiter::RateLimiter(RateLimits limits, Clock& clock)
    : limits_(limits), clock_(clock) {
  limits_.validate();
}

void RateLimiter::prune(Nanos now) {
  while (!window_.empty() && window_.front().at + limits_.window <= now) {
    window_tokens_ -= window_.front().tokens;
    window_.pop_front();
  }
}

RateLimiter::Admission RateLimiter::acquire(std::uint64_t tokens) {
  if (tokens > limits_.tokens_per_window) {
    throw ValidationError("request of " + std::to_string(tokens) +
                          " tokens exceeds the per-window token budget");
  }
  std::unique_lock lock(mu_);
  for (;;) {
    const Nanos now = clock_.now();
    prune(now);
    if (window_.size() < limits_.requests_per_window &&
        window_tokens_ + tokens <= limits_.tokens_per_window) {
      Admission a{next_id_++, now, tokens};
      window_.push_back(a);
      window_tokens_ += tokens;
      history_.push_back(a);
      return a;
    }
    // Wait until the oldest admission leaves the window, then re-check.
    const Nanos wait = window_.front().at + limits_.window - now;
    lock.unlock();
    clock_.sleep_for(std::max(wait, Nanos{1}));
    lock.lock();
  }
}

void RateLimiter::settle(const Admission& admission,
                         std::uint64_t actual_tokens) {
  std::lock_guard lock(mu_);
  for (auto& a : window_) {
    if (a.id == admission.id) {
      window_tokens_ = window_tokens_ - a.tokens + actual_tokens;
      a.tokens = actual_tokens;
      break;
    }
  }
  if (admission.id < history_.size()) {
    history_[admission.id].tokens = actual_tokens;
  }
}

std::vector<RateLimiter::Admission> RateLimiter::history() const {
  std::lock_guard lock(mu_);
  return history_;
}

}  // namespace kgsynth
