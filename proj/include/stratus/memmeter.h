#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <vector>

namespace stratus {

// Process-wide accounting of buffers allocated through tracked_buffer().
// current() is live bytes, peak() the high-water mark since reset_peak().
class MemoryMeter {
 public:
  static MemoryMeter& instance();

  void add(std::int64_t bytes);
  void sub(std::int64_t bytes);
  std::int64_t current() const { return current_.load(); }
  std::int64_t peak() const { return peak_.load(); }
  void reset_peak();

 private:
  std::atomic<std::int64_t> current_{0};
  std::atomic<std::int64_t> peak_{0};
};

using DataPtr = std::shared_ptr<std::vector<double>>;
using ConstDataPtr = std::shared_ptr<const std::vector<double>>;

DataPtr tracked_buffer(std::size_t n);
ConstDataPtr tracked_from(std::vector<double>&& v);

}  // namespace stratus
