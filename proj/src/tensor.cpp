#include "stratus/tensor.h"

#include <cmath>
#include <sstream>

namespace stratus {

namespace {
Precision g_precision = Precision::f64;
bool g_debug_checks = true;
bool g_parallel = false;
}  // namespace

void set_compute_precision(Precision p) { g_precision = p; }
Precision compute_precision() { return g_precision; }
void set_debug_checks(bool on) { g_debug_checks = on; }
bool debug_checks() { return g_debug_checks; }
void set_parallel_kernels(bool on) { g_parallel = on; }
bool parallel_kernels() { return g_parallel; }

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

namespace {
void check_shape(const Shape& s) {
  for (auto d : s) {
    if (d <= 0)
      throw ShapeError("tensor: non-positive dimension in " + shape_str(s));
  }
}
}  // namespace

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double v) {
  check_shape(shape);
  std::vector<double> d(static_cast<std::size_t>(shape_numel(shape)), v);
  return from_values(std::move(shape), std::move(d));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> v) {
  check_shape(shape);
  if (shape_numel(shape) != static_cast<std::int64_t>(v.size()))
    throw ShapeError("tensor: " + std::to_string(v.size()) +
                     " values for shape " + shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = tracked_from(std::move(v));
  return t;
}

Tensor Tensor::scalar(double v) { return from_values({1}, {v}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  check_shape(shape);
  std::vector<double> d(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : d) x = stddev * rng.normal();
  return from_values(std::move(shape), std::move(d));
}

std::int64_t Tensor::dim(std::int64_t i) const {
  if (i < 0 || i >= ndim())
    throw ShapeError("tensor: axis " + std::to_string(i) + " out of range for " +
                     shape_str(shape_));
  return shape_[static_cast<std::size_t>(i)];
}

std::int64_t Tensor::numel() const {
  return data_ ? static_cast<std::int64_t>(data_->size()) : 0;
}

const double* Tensor::data() const {
  if (!data_) throw ContractError("tensor: undefined");
  return data_->data();
}

const std::vector<double>& Tensor::values() const {
  if (!data_) throw ContractError("tensor: undefined");
  return *data_;
}

double Tensor::value_at(std::int64_t flat) const {
  if (flat < 0 || flat >= numel())
    throw ShapeError("tensor: flat index " + std::to_string(flat) +
                     " out of range for " + shape_str(shape_));
  return (*data_)[static_cast<std::size_t>(flat)];
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
  if (static_cast<std::int64_t>(idx.size()) != ndim())
    throw ShapeError("tensor: rank mismatch in at()");
  std::int64_t flat = 0;
  std::size_t axis = 0;
  for (auto i : idx) {
    if (i < 0 || i >= shape_[axis])
      throw ShapeError("tensor: index out of range in at()");
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return (*data_)[static_cast<std::size_t>(flat)];
}

double Tensor::scalar_value() const {
  if (numel() != 1)
    throw ContractError("tensor: scalar_value on shape " + shape_str(shape_));
  return (*data_)[0];
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.node_ = -1;
  t.tape_id_ = 0;
  return t;
}

void Tensor::bind_node(std::int64_t node, std::uint64_t tape_id) {
  node_ = node;
  tape_id_ = tape_id;
}

Tensor Tensor::reshaped(Shape s) const {
  check_shape(s);
  if (shape_numel(s) != numel())
    throw ShapeError("reshape: " + shape_str(shape_) + " to " + shape_str(s));
  Tensor t = *this;
  t.shape_ = std::move(s);
  return t;
}

namespace detail {

Tensor make_output(Shape shape, std::vector<double>&& v, const char* op) {
  if (g_precision == Precision::f32) {
    for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
  }
  if (g_debug_checks) {
    for (double x : v) {
      if (!std::isfinite(x))
        throw ContractError(std::string(op) + ": non-finite value in output");
    }
  }
  return Tensor::from_values(std::move(shape), std::move(v));
}

}  // namespace detail

}  // namespace stratus
