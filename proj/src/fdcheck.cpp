#include "stratus/fdcheck.h"

#include <cmath>

#include "stratus/tape.h"

namespace stratus {

namespace {
Tensor perturbed(const Tensor& t, std::int64_t flat, double delta) {
  std::vector<double> v(t.values());
  v[static_cast<std::size_t>(flat)] += delta;
  return Tensor::from_values(t.shape(), std::move(v));
}
}  // namespace

double finite_difference_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& f,
    const std::vector<Tensor>& params, double step) {
  if (step <= 0.0) throw ContractError("finite_difference_check: step <= 0");
  std::vector<Tensor> grads;
  {
    Tape tape;
    Tape::Scope scope(tape);
    std::vector<Tensor> tracked = params;
    for (auto& p : tracked) tape.watch(p);
    Tensor loss = f(tracked);
    if (loss.numel() != 1)
      throw ContractError("finite_difference_check: loss must be scalar");
    tape.backward(loss);
    grads.reserve(tracked.size());
    for (auto& p : tracked) grads.push_back(tape.grad(p));
  }
  double max_rel = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::int64_t j = 0; j < params[i].numel(); ++j) {
      std::vector<Tensor> plus = params;
      std::vector<Tensor> minus = params;
      plus[i] = perturbed(params[i], j, step);
      minus[i] = perturbed(params[i], j, -step);
      double fp = f(plus).scalar_value();
      double fm = f(minus).scalar_value();
      double fd = (fp - fm) / (2.0 * step);
      double g = grads[i].value_at(j);
      double rel = std::fabs(fd - g) / std::max(std::fabs(g), 1e-8);
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

}  // namespace stratus
