#pragma once

#include <atomic>
#include <cstdint>

namespace sso {

// Injected time source. All validity and timeout decisions read time through
// this interface so tests and the simulator can control it.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::int64_t now_ms() const = 0;
  std::int64_t now_seconds() const { return now_ms() / 1000; }
};

class SystemClock final : public Clock {
 public:
  std::int64_t now_ms() const override;
};

class ManualClock final : public Clock {
 public:
  explicit ManualClock(std::int64_t start_ms = 0) : now_(start_ms) {}
  std::int64_t now_ms() const override { return now_.load(); }
  void set_ms(std::int64_t t) { now_.store(t); }
  void advance_ms(std::int64_t d) { now_.fetch_add(d); }

 private:
  std::atomic<std::int64_t> now_;
};

// Fixed offset over another clock. Ages certificates in tests without
// waiting.
class OffsetClock final : public Clock {
 public:
  OffsetClock(const Clock& base, std::int64_t offset_ms)
      : base_(base), offset_(offset_ms) {}
  std::int64_t now_ms() const override { return base_.now_ms() + offset_; }

 private:
  const Clock& base_;
  std::int64_t offset_;
};

}  // namespace sso
