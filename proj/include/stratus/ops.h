#pragma once

#include <memory>
#include <vector>

#include "stratus/tape.h"
#include "stratus/tensor.h"

namespace stratus {

// Differentiable ops. Results are recorded on the active tape whenever any
// input is tracked by it. Shapes are validated eagerly; errors name the
// offending shapes.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

// y[..., d] = x[..., d] + b[d]
Tensor add_bias(const Tensor& x, const Tensor& b);

// a[m,k] * b[k,n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);

// x[..., k], w[d, k], optional b[d] -> [..., d]; the usual xW^T + b.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = Tensor());

// Normalizes the last axis with population variance: gamma, beta are [d].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// Exact-CDF form: x * Phi(x).
Tensor gelu(const Tensor& x);

Tensor softmax_lastdim(const Tensor& x);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// Same storage, new shape (element count preserved); shares the tape node.
Tensor reshape(const Tensor& x, Shape shape);

// out[i] = x[idx[i]]; backward scatter-adds. idx values must be in range.
Tensor gather(const Tensor& x,
              std::shared_ptr<const std::vector<std::int64_t>> idx,
              Shape out_shape);

// Stacks equally shaped tensors along a new leading axis.
Tensor concat0(const std::vector<Tensor>& parts);
// Copies block i of the leading axis: [n, ...] -> [...].
Tensor slice0(const Tensor& x, std::int64_t i);
// n copies along a new leading axis; backward sums over copies.
Tensor tile0(const Tensor& x, std::int64_t n);
// [a, b, c] -> [b, a, c]
Tensor transpose01(const Tensor& x);

// NumPy-style broadcast of x to `shape` (axes equal or 1, right-aligned).
Tensor expand(const Tensor& x, Shape shape);

}  // namespace stratus
