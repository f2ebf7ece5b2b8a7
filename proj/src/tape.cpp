#include "stratus/tape.h"

#include <atomic>

namespace stratus {

namespace {
std::atomic<std::uint64_t> g_tape_counter{1};
thread_local Tape* g_active = nullptr;
}  // namespace

Tape::Tape() : id_(g_tape_counter.fetch_add(1)) {}

Tape::~Tape() {
  if (g_active == this) g_active = nullptr;
}

Tape* Tape::active() { return g_active; }

Tape::Scope::Scope(Tape& t) : prev_(g_active) { g_active = &t; }
Tape::Scope::~Scope() { g_active = prev_; }

std::int64_t Tape::watch(Tensor& t) {
  if (!t.defined()) throw ContractError("tape: watch on undefined tensor");
  if (t.node() >= 0) {
    if (t.tape_id() == id_) return t.node();
    throw ContractError("tape: tensor already tracked by another tape");
  }
  std::int64_t id = static_cast<std::int64_t>(nodes_.size());
  nodes_.push_back(Node{t.numel(), {}, nullptr, true});
  grads_.emplace_back(nullptr);
  t.bind_node(id, id_);
  return id;
}

std::int64_t Tape::record(std::int64_t numel,
                          std::vector<std::int64_t> inputs, BackwardFn fn) {
  std::int64_t id = static_cast<std::int64_t>(nodes_.size());
  nodes_.push_back(Node{numel, std::move(inputs), std::move(fn), false});
  grads_.emplace_back(nullptr);
  return id;
}

void Tape::accumulate(std::int64_t node, const double* g, std::int64_t n) {
  if (node < 0 || node >= static_cast<std::int64_t>(nodes_.size()))
    throw ContractError("tape: accumulate on unknown node");
  auto& slot = grads_[static_cast<std::size_t>(node)];
  if (!slot) slot = tracked_buffer(static_cast<std::size_t>(n));
  if (static_cast<std::int64_t>(slot->size()) != n)
    throw ShapeError("tape: gradient size mismatch");
  double* dst = slot->data();
  for (std::int64_t i = 0; i < n; ++i) dst[i] += g[i];
}

void Tape::backward(const Tensor& loss) {
  if (!owns(loss)) throw ContractError("tape: loss is not tracked by this tape");
  if (loss.numel() != 1)
    throw ContractError("tape: backward needs a scalar loss, got " +
                        shape_str(loss.shape()));
  if (swept_) throw ContractError("tape: backward ran already");
  swept_ = true;
  double one = 1.0;
  accumulate(loss.node(), &one, 1);
  for (std::int64_t i = loss.node(); i >= 0; --i) {
    auto& node = nodes_[static_cast<std::size_t>(i)];
    auto& g = grads_[static_cast<std::size_t>(i)];
    if (!g || !node.backward) continue;
    node.backward(*this, g->data());
  }
}

std::map<std::int64_t, Tensor> Tape::backward_map(const Tensor& loss) {
  backward(loss);
  std::map<std::int64_t, Tensor> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].leaf || !grads_[i]) continue;
    std::vector<double> v(*grads_[i]);
    out.emplace(static_cast<std::int64_t>(i),
                Tensor::from_values({nodes_[i].numel}, std::move(v)));
  }
  return out;
}

bool Tape::has_grad(std::int64_t node) const {
  return node >= 0 && node < static_cast<std::int64_t>(grads_.size()) &&
         grads_[static_cast<std::size_t>(node)] != nullptr;
}

Tensor Tape::grad(const Tensor& t) const {
  if (!owns(t)) throw ContractError("tape: grad of untracked tensor");
  // nodes recorded after backward() have no slot yet
  if (t.node() >= static_cast<std::int64_t>(grads_.size()))
    return Tensor::zeros(t.shape());
  const auto& slot = grads_[static_cast<std::size_t>(t.node())];
  if (!slot) return Tensor::zeros(t.shape());
  std::vector<double> v(*slot);
  return Tensor::from_values(t.shape(), std::move(v));
}

}  // namespace stratus
