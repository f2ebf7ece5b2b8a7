#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "stratus/error.h"
#include "stratus/memmeter.h"
#include "stratus/rng.h"

namespace stratus {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

enum class Precision { f64, f32 };

// Runtime switches for the numeric core. Defaults: 64-bit compute,
// finite-value checks on, serial kernels (deterministic reduction order).
void set_compute_precision(Precision p);
Precision compute_precision();
void set_debug_checks(bool on);
bool debug_checks();
void set_parallel_kernels(bool on);
bool parallel_kernels();

// Immutable dense row-major array of doubles. Copies share storage.
// node()/tape_id() tie a tensor to a recording tape; -1 means untracked.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from_values(Shape shape, std::vector<double> v);
  static Tensor scalar(double v);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::int64_t ndim() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t dim(std::int64_t i) const;
  std::int64_t numel() const;
  const double* data() const;
  const std::vector<double>& values() const;
  double value_at(std::int64_t flat) const;
  double at(std::initializer_list<std::int64_t> idx) const;
  double scalar_value() const;

  bool requires_grad() const { return node_ >= 0; }
  std::int64_t node() const { return node_; }
  std::uint64_t tape_id() const { return tape_id_; }
  Tensor detached() const;

  // Internal: used by the tape and by op wrappers when recording.
  void bind_node(std::int64_t node, std::uint64_t tape_id);
  // Internal: same storage under a new shape with equal element count.
  Tensor reshaped(Shape s) const;

 private:
  ConstDataPtr data_;
  Shape shape_;
  std::int64_t node_ = -1;
  std::uint64_t tape_id_ = 0;
};

namespace detail {
// Wraps a freshly computed buffer: applies the 32-bit rounding mode if
// enabled and runs the finite-value check before handing out a tensor.
Tensor make_output(Shape shape, std::vector<double>&& v, const char* op);
}  // namespace detail

}  // namespace stratus
