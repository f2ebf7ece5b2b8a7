#include "stratus/memmeter.h"

namespace stratus {

MemoryMeter& MemoryMeter::instance() {
  static MemoryMeter m;
  return m;
}

void MemoryMeter::add(std::int64_t bytes) {
  std::int64_t cur = current_.fetch_add(bytes) + bytes;
  std::int64_t prev = peak_.load();
  while (cur > prev && !peak_.compare_exchange_weak(prev, cur)) {
  }
}

void MemoryMeter::sub(std::int64_t bytes) { current_.fetch_sub(bytes); }

void MemoryMeter::reset_peak() { peak_.store(current_.load()); }

namespace {
template <typename V>
std::shared_ptr<V> wrap_tracked(V* p) {
  auto bytes = static_cast<std::int64_t>(p->size() * sizeof(double));
  MemoryMeter::instance().add(bytes);
  return std::shared_ptr<V>(p, [bytes](V* q) {
    MemoryMeter::instance().sub(bytes);
    delete q;
  });
}
}  // namespace

DataPtr tracked_buffer(std::size_t n) {
  return wrap_tracked(new std::vector<double>(n, 0.0));
}

ConstDataPtr tracked_from(std::vector<double>&& v) {
  return wrap_tracked<const std::vector<double>>(
      new std::vector<double>(std::move(v)));
}

}  // namespace stratus
