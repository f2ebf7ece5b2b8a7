#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "stratus/tensor.h"

namespace stratus {

class Tape;

using BackwardFn = std::function<void(Tape&, const double* upstream)>;

// Append-only record of differentiable operations. Single writer; nodes are
// created in execution order so a reverse sweep is a topological order.
// Gradient slots are keyed by node id and accumulated sequentially.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  std::uint64_t id() const { return id_; }

  // Registers a leaf. Idempotent for a tensor already watched on this tape.
  std::int64_t watch(Tensor& t);

  // Records an interior node; fn receives the accumulated upstream gradient.
  std::int64_t record(std::int64_t numel, std::vector<std::int64_t> inputs,
                      BackwardFn fn);

  bool owns(const Tensor& t) const {
    return t.node() >= 0 && t.tape_id() == id_;
  }

  void accumulate(std::int64_t node, const double* g, std::int64_t n);

  // Reverse sweep from a scalar loss; each node's backward runs at most once.
  void backward(const Tensor& loss);

  // backward() plus collection of the watched-leaf gradients.
  std::map<std::int64_t, Tensor> backward_map(const Tensor& loss);

  bool has_grad(std::int64_t node) const;
  Tensor grad(const Tensor& t) const;

  std::size_t size() const { return nodes_.size(); }

  static Tape* active();

  struct Scope {
    explicit Scope(Tape& t);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

 private:
  struct Node {
    std::int64_t numel;
    std::vector<std::int64_t> inputs;
    BackwardFn backward;
    bool leaf;
  };

  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::vector<DataPtr> grads_;
  bool swept_ = false;
};

}  // namespace stratus
