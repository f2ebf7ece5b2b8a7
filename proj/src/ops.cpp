#include "stratus/ops.h"

#include <cmath>

#include "stratus/kernels.h"

namespace stratus {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

bool tracked(const Tape* tp, const Tensor& t) {
  return tp && t.node() >= 0 && t.tape_id() == tp->id();
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

std::int64_t last_dim(const Tensor& t) {
  if (t.ndim() < 1) throw ShapeError("expected at least 1-d tensor");
  return t.shape().back();
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::int64_t n = a.numel();
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* pa = a.data();
  const double* pb = b.data();
#pragma omp parallel for schedule(static) if (parallel_kernels() && n > 16384)
  for (std::int64_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];
  Tensor y = detail::make_output(a.shape(), std::move(out), "add");
  Tape* tp = Tape::active();
  if (tracked(tp, a) || tracked(tp, b)) {
    std::int64_t an = tracked(tp, a) ? a.node() : -1;
    std::int64_t bn = tracked(tp, b) ? b.node() : -1;
    y.bind_node(tp->record(n, {an, bn},
                           [an, bn, n](Tape& t, const double* g) {
                             if (an >= 0) t.accumulate(an, g, n);
                             if (bn >= 0) t.accumulate(bn, g, n);
                           }),
                tp->id());
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::int64_t n = a.numel();
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* pa = a.data();
  const double* pb = b.data();
#pragma omp parallel for schedule(static) if (parallel_kernels() && n > 16384)
  for (std::int64_t i = 0; i < n; ++i) out[i] = pa[i] - pb[i];
  Tensor y = detail::make_output(a.shape(), std::move(out), "sub");
  Tape* tp = Tape::active();
  if (tracked(tp, a) || tracked(tp, b)) {
    std::int64_t an = tracked(tp, a) ? a.node() : -1;
    std::int64_t bn = tracked(tp, b) ? b.node() : -1;
    y.bind_node(tp->record(n, {an, bn},
                           [an, bn, n](Tape& t, const double* g) {
                             if (an >= 0) t.accumulate(an, g, n);
                             if (bn >= 0) {
                               std::vector<double> ng(static_cast<std::size_t>(n));
                               for (std::int64_t i = 0; i < n; ++i) ng[i] = -g[i];
                               t.accumulate(bn, ng.data(), n);
                             }
                           }),
                tp->id());
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::int64_t n = a.numel();
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* pa = a.data();
  const double* pb = b.data();
#pragma omp parallel for schedule(static) if (parallel_kernels() && n > 16384)
  for (std::int64_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];
  Tensor y = detail::make_output(a.shape(), std::move(out), "mul");
  Tape* tp = Tape::active();
  if (tracked(tp, a) || tracked(tp, b)) {
    std::int64_t an = tracked(tp, a) ? a.node() : -1;
    std::int64_t bn = tracked(tp, b) ? b.node() : -1;
    Tensor as = a, bs = b;
    y.bind_node(tp->record(n, {an, bn},
                           [an, bn, as, bs, n](Tape& t, const double* g) {
                             std::vector<double> buf(static_cast<std::size_t>(n));
                             if (an >= 0) {
                               const double* pb2 = bs.data();
                               for (std::int64_t i = 0; i < n; ++i)
                                 buf[i] = g[i] * pb2[i];
                               t.accumulate(an, buf.data(), n);
                             }
                             if (bn >= 0) {
                               const double* pa2 = as.data();
                               for (std::int64_t i = 0; i < n; ++i)
                                 buf[i] = g[i] * pa2[i];
                               t.accumulate(bn, buf.data(), n);
                             }
                           }),
                tp->id());
  }
  return y;
}

Tensor scale(const Tensor& a, double c) {
  std::int64_t n = a.numel();
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* pa = a.data();
#pragma omp parallel for schedule(static) if (parallel_kernels() && n > 16384)
  for (std::int64_t i = 0; i < n; ++i) out[i] = pa[i] * c;
  Tensor y = detail::make_output(a.shape(), std::move(out), "scale");
  Tape* tp = Tape::active();
  if (tracked(tp, a)) {
    std::int64_t an = a.node();
    y.bind_node(tp->record(n, {an},
                           [an, c, n](Tape& t, const double* g) {
                             std::vector<double> buf(static_cast<std::size_t>(n));
                             for (std::int64_t i = 0; i < n; ++i)
                               buf[i] = g[i] * c;
                             t.accumulate(an, buf.data(), n);
                           }),
                tp->id());
  }
  return y;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  std::int64_t d = last_dim(x);
  if (b.ndim() != 1 || b.dim(0) != d)
    throw ShapeError("add_bias: bias " + shape_str(b.shape()) +
                     " against input " + shape_str(x.shape()));
  std::int64_t n = x.numel();
  std::int64_t rows = n / d;
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* px = x.data();
  const double* pb = b.data();
#pragma omp parallel for schedule(static) if (parallel_kernels() && rows > 64)
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < d; ++j)
      out[r * d + j] = px[r * d + j] + pb[j];
  Tensor y = detail::make_output(x.shape(), std::move(out), "add_bias");
  Tape* tp = Tape::active();
  if (tracked(tp, x) || tracked(tp, b)) {
    std::int64_t xn = tracked(tp, x) ? x.node() : -1;
    std::int64_t bn = tracked(tp, b) ? b.node() : -1;
    y.bind_node(tp->record(n, {xn, bn},
                           [xn, bn, rows, d, n](Tape& t, const double* g) {
                             if (xn >= 0) t.accumulate(xn, g, n);
                             if (bn >= 0) {
                               std::vector<double> db(static_cast<std::size_t>(d), 0.0);
                               for (std::int64_t r = 0; r < rows; ++r)
                                 for (std::int64_t j = 0; j < d; ++j)
                                   db[j] += g[r * d + j];
                               t.accumulate(bn, db.data(), d);
                             }
                           }),
                tp->id());
  }
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw ShapeError("matmul: need 2-d operands, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  std::int64_t m = a.dim(0), k = a.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dimensions disagree: " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::int64_t n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m * n));
  kernels::matmul(a.data(), b.data(), out.data(), m, k, n);
  Tensor y = detail::make_output({m, n}, std::move(out), "matmul");
  Tape* tp = Tape::active();
  if (tracked(tp, a) || tracked(tp, b)) {
    std::int64_t an = tracked(tp, a) ? a.node() : -1;
    std::int64_t bn = tracked(tp, b) ? b.node() : -1;
    Tensor as = a, bs = b;
    y.bind_node(
        tp->record(m * n, {an, bn},
                   [an, bn, as, bs, m, k, n](Tape& t, const double* g) {
                     if (an >= 0) {
                       std::vector<double> da(static_cast<std::size_t>(m * k));
                       kernels::matmul_nt(g, bs.data(), da.data(), m, n, k);
                       t.accumulate(an, da.data(), m * k);
                     }
                     if (bn >= 0) {
                       std::vector<double> db(static_cast<std::size_t>(k * n));
                       kernels::matmul_tn(as.data(), g, db.data(), m, k, n);
                       t.accumulate(bn, db.data(), k * n);
                     }
                   }),
        tp->id());
  }
  return y;
}

Tensor transpose2d(const Tensor& a) {
  if (a.ndim() != 2)
    throw ShapeError("transpose2d: need 2-d, got " + shape_str(a.shape()));
  std::int64_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m * n));
  const double* pa = a.data();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out[j * m + i] = pa[i * n + j];
  Tensor y = detail::make_output({n, m}, std::move(out), "transpose2d");
  Tape* tp = Tape::active();
  if (tracked(tp, a)) {
    std::int64_t an = a.node();
    y.bind_node(tp->record(m * n, {an},
                           [an, m, n](Tape& t, const double* g) {
                             std::vector<double> da(static_cast<std::size_t>(m * n));
                             for (std::int64_t j = 0; j < n; ++j)
                               for (std::int64_t i = 0; i < m; ++i)
                                 da[i * n + j] = g[j * m + i];
                             t.accumulate(an, da.data(), m * n);
                           }),
                tp->id());
  }
  return y;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.ndim() != 2)
    throw ShapeError("linear: weight must be 2-d, got " + shape_str(w.shape()));
  std::int64_t k = last_dim(x);
  std::int64_t d = w.dim(0);
  if (w.dim(1) != k)
    throw ShapeError("linear: input " + shape_str(x.shape()) +
                     " against weight " + shape_str(w.shape()));
  bool has_bias = b.defined();
  if (has_bias && (b.ndim() != 1 || b.dim(0) != d))
    throw ShapeError("linear: bias " + shape_str(b.shape()) +
                     " against weight " + shape_str(w.shape()));
  std::int64_t rows = x.numel() / k;
  std::vector<double> out(static_cast<std::size_t>(rows * d));
  // y = x w^T: reuse matmul_nt, which computes g b^T with matching layout
  kernels::matmul_nt(x.data(), w.data(), out.data(), rows, k, d);
  if (has_bias) {
    const double* pb = b.data();
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t j = 0; j < d; ++j) out[r * d + j] += pb[j];
  }
  Shape out_shape = x.shape();
  out_shape.back() = d;
  Tensor y = detail::make_output(std::move(out_shape), std::move(out), "linear");
  Tape* tp = Tape::active();
  bool tx = tracked(tp, x), tw = tracked(tp, w),
       tb = has_bias && tracked(tp, b);
  if (tx || tw || tb) {
    std::int64_t xn = tx ? x.node() : -1;
    std::int64_t wn = tw ? w.node() : -1;
    std::int64_t bn = tb ? b.node() : -1;
    Tensor xs = x, ws = w;
    y.bind_node(
        tp->record(rows * d, {xn, wn, bn},
                   [xn, wn, bn, xs, ws, rows, k, d](Tape& t, const double* g) {
                     if (xn >= 0) {
                       std::vector<double> dx(static_cast<std::size_t>(rows * k));
                       kernels::matmul(g, ws.data(), dx.data(), rows, d, k);
                       t.accumulate(xn, dx.data(), rows * k);
                     }
                     if (wn >= 0) {
                       std::vector<double> dw(static_cast<std::size_t>(d * k));
                       kernels::matmul_tn(g, xs.data(), dw.data(), rows, d, k);
                       t.accumulate(wn, dw.data(), d * k);
                     }
                     if (bn >= 0) {
                       std::vector<double> db(static_cast<std::size_t>(d), 0.0);
                       for (std::int64_t r = 0; r < rows; ++r)
                         for (std::int64_t j = 0; j < d; ++j)
                           db[j] += g[r * d + j];
                       t.accumulate(bn, db.data(), d);
                     }
                   }),
        tp->id());
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  if (eps < 0.0) throw ContractError("layer_norm: negative eps");
  std::int64_t d = last_dim(x);
  if (gamma.ndim() != 1 || gamma.dim(0) != d || beta.ndim() != 1 ||
      beta.dim(0) != d)
    throw ShapeError("layer_norm: gamma/beta " + shape_str(gamma.shape()) +
                     "/" + shape_str(beta.shape()) + " against input " +
                     shape_str(x.shape()));
  std::int64_t n = x.numel();
  std::int64_t rows = n / d;
  std::vector<double> out(static_cast<std::size_t>(n));
  auto mean = tracked_buffer(static_cast<std::size_t>(rows));
  auto rstd = tracked_buffer(static_cast<std::size_t>(rows));
  const double* px = x.data();
  const double* pg = gamma.data();
  const double* pb = beta.data();
  double* pm = mean->data();
  double* pr = rstd->data();
#pragma omp parallel for schedule(static) if (parallel_kernels() && rows > 16)
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double m = 0.0;
    for (std::int64_t j = 0; j < d; ++j) m += row[j];
    m /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      double c = row[j] - m;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double rs = 1.0 / std::sqrt(var + eps);
    pm[r] = m;
    pr[r] = rs;
    for (std::int64_t j = 0; j < d; ++j)
      out[r * d + j] = (row[j] - m) * rs * pg[j] + pb[j];
  }
  Tensor y = detail::make_output(x.shape(), std::move(out), "layer_norm");
  Tape* tp = Tape::active();
  bool tx = tracked(tp, x), tg = tracked(tp, gamma), tb = tracked(tp, beta);
  if (tx || tg || tb) {
    std::int64_t xn = tx ? x.node() : -1;
    std::int64_t gn = tg ? gamma.node() : -1;
    std::int64_t bn = tb ? beta.node() : -1;
    Tensor xs = x, gs = gamma;
    y.bind_node(
        tp->record(
            n, {xn, gn, bn},
            [xn, gn, bn, xs, gs, mean, rstd, rows, d](Tape& t,
                                                      const double* g) {
              const double* px2 = xs.data();
              const double* pg2 = gs.data();
              const double* pm2 = mean->data();
              const double* pr2 = rstd->data();
              std::vector<double> dx;
              std::vector<double> dg, db;
              if (xn >= 0) dx.resize(static_cast<std::size_t>(rows * d));
              if (gn >= 0) dg.assign(static_cast<std::size_t>(d), 0.0);
              if (bn >= 0) db.assign(static_cast<std::size_t>(d), 0.0);
              for (std::int64_t r = 0; r < rows; ++r) {
                const double* row = px2 + r * d;
                const double* gr = g + r * d;
                double m = pm2[r];
                double rs = pr2[r];
                double s1 = 0.0, s2 = 0.0;
                for (std::int64_t j = 0; j < d; ++j) {
                  double xh = (row[j] - m) * rs;
                  double gg = gr[j] * pg2[j];
                  s1 += gg;
                  s2 += gg * xh;
                  if (gn >= 0) dg[j] += gr[j] * xh;
                  if (bn >= 0) db[j] += gr[j];
                }
                if (xn >= 0) {
                  s1 /= static_cast<double>(d);
                  s2 /= static_cast<double>(d);
                  for (std::int64_t j = 0; j < d; ++j) {
                    double xh = (row[j] - m) * rs;
                    double gg = gr[j] * pg2[j];
                    dx[r * d + j] = (gg - s1 - xh * s2) * rs;
                  }
                }
              }
              if (xn >= 0) t.accumulate(xn, dx.data(), rows * d);
              if (gn >= 0) t.accumulate(gn, dg.data(), d);
              if (bn >= 0) t.accumulate(bn, db.data(), d);
            }),
        tp->id());
  }
  return y;
}

Tensor gelu(const Tensor& x) {
  std::int64_t n = x.numel();
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* px = x.data();
#pragma omp parallel for schedule(static) if (parallel_kernels() && n > 16384)
  for (std::int64_t i = 0; i < n; ++i) {
    double v = px[i];
    out[i] = 0.5 * v * std::erfc(-v * kInvSqrt2);
  }
  Tensor y = detail::make_output(x.shape(), std::move(out), "gelu");
  Tape* tp = Tape::active();
  if (tracked(tp, x)) {
    std::int64_t xn = x.node();
    Tensor xs = x;
    y.bind_node(tp->record(n, {xn},
                           [xn, xs, n](Tape& t, const double* g) {
                             const double* px2 = xs.data();
                             std::vector<double> dx(static_cast<std::size_t>(n));
                             for (std::int64_t i = 0; i < n; ++i) {
                               double v = px2[i];
                               double cdf = 0.5 * std::erfc(-v * kInvSqrt2);
                               double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                               dx[i] = g[i] * (cdf + v * pdf);
                             }
                             t.accumulate(xn, dx.data(), n);
                           }),
                tp->id());
  }
  return y;
}

Tensor softmax_lastdim(const Tensor& x) {
  std::int64_t d = last_dim(x);
  std::int64_t n = x.numel();
  std::int64_t rows = n / d;
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* px = x.data();
#pragma omp parallel for schedule(static) if (parallel_kernels() && rows > 16)
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double m = row[0];
    for (std::int64_t j = 1; j < d; ++j)
      if (row[j] > m) m = row[j];
    double sum = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      double e = std::exp(row[j] - m);
      out[r * d + j] = e;
      sum += e;
    }
    for (std::int64_t j = 0; j < d; ++j) out[r * d + j] /= sum;
  }
  Tensor y = detail::make_output(x.shape(), std::move(out), "softmax");
  Tape* tp = Tape::active();
  if (tracked(tp, x)) {
    std::int64_t xn = x.node();
    Tensor ys = y;
    y.bind_node(tp->record(n, {xn},
                           [xn, ys, rows, d](Tape& t, const double* g) {
                             const double* py = ys.data();
                             std::vector<double> dx(
                                 static_cast<std::size_t>(rows * d));
                             for (std::int64_t r = 0; r < rows; ++r) {
                               double dot = 0.0;
                               for (std::int64_t j = 0; j < d; ++j)
                                 dot += g[r * d + j] * py[r * d + j];
                               for (std::int64_t j = 0; j < d; ++j)
                                 dx[r * d + j] =
                                     py[r * d + j] * (g[r * d + j] - dot);
                             }
                             t.accumulate(xn, dx.data(), rows * d);
                           }),
                tp->id());
  }
  return y;
}

Tensor sum_all(const Tensor& x) {
  std::int64_t n = x.numel();
  double s = kernels::sum(x.data(), n);
  Tensor y = detail::make_output({1}, {s}, "sum_all");
  Tape* tp = Tape::active();
  if (tracked(tp, x)) {
    std::int64_t xn = x.node();
    y.bind_node(tp->record(1, {xn},
                           [xn, n](Tape& t, const double* g) {
                             std::vector<double> dx(static_cast<std::size_t>(n),
                                                    g[0]);
                             t.accumulate(xn, dx.data(), n);
                           }),
                tp->id());
  }
  return y;
}

Tensor mean_all(const Tensor& x) {
  std::int64_t n = x.numel();
  double s = kernels::sum(x.data(), n) / static_cast<double>(n);
  Tensor y = detail::make_output({1}, {s}, "mean_all");
  Tape* tp = Tape::active();
  if (tracked(tp, x)) {
    std::int64_t xn = x.node();
    y.bind_node(tp->record(1, {xn},
                           [xn, n](Tape& t, const double* g) {
                             std::vector<double> dx(
                                 static_cast<std::size_t>(n),
                                 g[0] / static_cast<double>(n));
                             t.accumulate(xn, dx.data(), n);
                           }),
                tp->id());
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape shape) { return x.reshaped(std::move(shape)); }

Tensor gather(const Tensor& x,
              std::shared_ptr<const std::vector<std::int64_t>> idx,
              Shape out_shape) {
  if (!idx) throw ContractError("gather: null index");
  std::int64_t n = shape_numel(out_shape);
  if (n != static_cast<std::int64_t>(idx->size()))
    throw ShapeError("gather: index count " + std::to_string(idx->size()) +
                     " for output " + shape_str(out_shape));
  std::int64_t xn_count = x.numel();
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* px = x.data();
  const auto& ix = *idx;
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t j = ix[static_cast<std::size_t>(i)];
    if (j < 0 || j >= xn_count)
      throw ShapeError("gather: index " + std::to_string(j) +
                       " out of range for " + shape_str(x.shape()));
    out[i] = px[j];
  }
  Tensor y = detail::make_output(std::move(out_shape), std::move(out), "gather");
  Tape* tp = Tape::active();
  if (tracked(tp, x)) {
    std::int64_t xn = x.node();
    y.bind_node(tp->record(n, {xn},
                           [xn, idx, n, xn_count](Tape& t, const double* g) {
                             std::vector<double> dx(
                                 static_cast<std::size_t>(xn_count), 0.0);
                             const auto& ix2 = *idx;
                             for (std::int64_t i = 0; i < n; ++i)
                               dx[ix2[static_cast<std::size_t>(i)]] += g[i];
                             t.accumulate(xn, dx.data(), xn_count);
                           }),
                tp->id());
  }
  return y;
}

Tensor concat0(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat0: no inputs");
  const Shape& s0 = parts[0].shape();
  std::int64_t block = parts[0].numel();
  for (const auto& p : parts) check_same_shape("concat0", parts[0], p);
  std::int64_t np = static_cast<std::int64_t>(parts.size());
  std::vector<double> out(static_cast<std::size_t>(np * block));
  for (std::int64_t i = 0; i < np; ++i) {
    const double* src = parts[static_cast<std::size_t>(i)].data();
    std::copy(src, src + block, out.begin() + i * block);
  }
  Shape out_shape;
  out_shape.push_back(np);
  out_shape.insert(out_shape.end(), s0.begin(), s0.end());
  Tensor y = detail::make_output(std::move(out_shape), std::move(out), "concat0");
  Tape* tp = Tape::active();
  bool any = false;
  for (const auto& p : parts) any = any || tracked(tp, p);
  if (any) {
    std::vector<std::int64_t> ids;
    ids.reserve(parts.size());
    for (const auto& p : parts) ids.push_back(tracked(tp, p) ? p.node() : -1);
    y.bind_node(tp->record(np * block, ids,
                           [ids, block](Tape& t, const double* g) {
                             for (std::size_t i = 0; i < ids.size(); ++i) {
                               if (ids[i] < 0) continue;
                               t.accumulate(ids[i],
                                            g + static_cast<std::int64_t>(i) * block,
                                            block);
                             }
                           }),
                tp->id());
  }
  return y;
}

Tensor slice0(const Tensor& x, std::int64_t i) {
  if (x.ndim() < 2)
    throw ShapeError("slice0: need at least 2-d, got " + shape_str(x.shape()));
  std::int64_t np = x.dim(0);
  if (i < 0 || i >= np)
    throw ShapeError("slice0: index " + std::to_string(i) + " out of range for " +
                     shape_str(x.shape()));
  std::int64_t block = x.numel() / np;
  std::vector<double> out(static_cast<std::size_t>(block));
  const double* px = x.data() + i * block;
  std::copy(px, px + block, out.begin());
  Shape s(x.shape().begin() + 1, x.shape().end());
  Tensor y = detail::make_output(std::move(s), std::move(out), "slice0");
  Tape* tp = Tape::active();
  if (tracked(tp, x)) {
    std::int64_t xn = x.node();
    std::int64_t total = x.numel();
    y.bind_node(tp->record(block, {xn},
                           [xn, i, block, total](Tape& t, const double* g) {
                             std::vector<double> dx(
                                 static_cast<std::size_t>(total), 0.0);
                             std::copy(g, g + block, dx.begin() + i * block);
                             t.accumulate(xn, dx.data(), total);
                           }),
                tp->id());
  }
  return y;
}

Tensor tile0(const Tensor& x, std::int64_t n) {
  if (n <= 0) throw ContractError("tile0: non-positive count");
  std::int64_t block = x.numel();
  std::vector<double> out(static_cast<std::size_t>(n * block));
  const double* px = x.data();
  for (std::int64_t i = 0; i < n; ++i)
    std::copy(px, px + block, out.begin() + i * block);
  Shape s;
  s.push_back(n);
  s.insert(s.end(), x.shape().begin(), x.shape().end());
  Tensor y = detail::make_output(std::move(s), std::move(out), "tile0");
  Tape* tp = Tape::active();
  if (tracked(tp, x)) {
    std::int64_t xn = x.node();
    y.bind_node(tp->record(n * block, {xn},
                           [xn, n, block](Tape& t, const double* g) {
                             std::vector<double> dx(
                                 static_cast<std::size_t>(block), 0.0);
                             for (std::int64_t i = 0; i < n; ++i)
                               for (std::int64_t j = 0; j < block; ++j)
                                 dx[j] += g[i * block + j];
                             t.accumulate(xn, dx.data(), block);
                           }),
                tp->id());
  }
  return y;
}

Tensor transpose01(const Tensor& x) {
  if (x.ndim() != 3)
    throw ShapeError("transpose01: need 3-d, got " + shape_str(x.shape()));
  std::int64_t a = x.dim(0), b = x.dim(1), c = x.dim(2);
  std::vector<double> out(static_cast<std::size_t>(a * b * c));
  const double* px = x.data();
  for (std::int64_t i = 0; i < a; ++i)
    for (std::int64_t j = 0; j < b; ++j)
      std::copy(px + (i * b + j) * c, px + (i * b + j + 1) * c,
                out.begin() + (j * a + i) * c);
  Tensor y = detail::make_output({b, a, c}, std::move(out), "transpose01");
  Tape* tp = Tape::active();
  if (tracked(tp, x)) {
    std::int64_t xn = x.node();
    y.bind_node(tp->record(a * b * c, {xn},
                           [xn, a, b, c](Tape& t, const double* g) {
                             std::vector<double> dx(
                                 static_cast<std::size_t>(a * b * c));
                             for (std::int64_t j = 0; j < b; ++j)
                               for (std::int64_t i = 0; i < a; ++i)
                                 std::copy(g + (j * a + i) * c,
                                           g + (j * a + i + 1) * c,
                                           dx.begin() + (i * b + j) * c);
                             t.accumulate(xn, dx.data(), a * b * c);
                           }),
                tp->id());
  }
  return y;
}

Tensor expand(const Tensor& x, Shape shape) {
  std::int64_t out_rank = static_cast<std::int64_t>(shape.size());
  if (x.ndim() > out_rank)
    throw ShapeError("expand: " + shape_str(x.shape()) + " to " +
                     shape_str(shape));
  // right-align input shape, padding leading axes with 1
  Shape in(shape.size(), 1);
  for (std::int64_t i = 0; i < x.ndim(); ++i)
    in[static_cast<std::size_t>(out_rank - x.ndim() + i)] = x.dim(i);
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (in[i] != shape[i] && in[i] != 1)
      throw ShapeError("expand: cannot broadcast " + shape_str(x.shape()) +
                       " to " + shape_str(shape));
  }
  std::int64_t n = shape_numel(shape);
  std::vector<double> out(static_cast<std::size_t>(n));
  // strides of the (padded) input, 0 on broadcast axes
  std::vector<std::int64_t> stride(shape.size(), 0);
  std::int64_t acc = 1;
  for (std::int64_t i = out_rank - 1; i >= 0; --i) {
    auto ui = static_cast<std::size_t>(i);
    if (in[ui] != 1) {
      stride[ui] = acc;
      acc *= in[ui];
    }
  }
  const double* px = x.data();
  std::vector<std::int64_t> idx(shape.size(), 0);
  for (std::int64_t flat = 0; flat < n; ++flat) {
    std::int64_t src = 0;
    for (std::size_t i = 0; i < shape.size(); ++i) src += idx[i] * stride[i];
    out[flat] = px[src];
    for (std::int64_t i = out_rank - 1; i >= 0; --i) {
      auto ui = static_cast<std::size_t>(i);
      if (++idx[ui] < shape[ui]) break;
      idx[ui] = 0;
    }
  }
  Tensor y = detail::make_output(shape, std::move(out), "expand");
  Tape* tp = Tape::active();
  if (tracked(tp, x)) {
    std::int64_t xn = x.node();
    std::int64_t xcount = x.numel();
    Shape oshape = shape;
    y.bind_node(
        tp->record(n, {xn},
                   [xn, xcount, oshape, stride, out_rank](Tape& t,
                                                          const double* g) {
                     std::vector<double> dx(static_cast<std::size_t>(xcount),
                                            0.0);
                     std::vector<std::int64_t> idx2(oshape.size(), 0);
                     std::int64_t n2 = shape_numel(oshape);
                     for (std::int64_t flat = 0; flat < n2; ++flat) {
                       std::int64_t src = 0;
                       for (std::size_t i = 0; i < oshape.size(); ++i)
                         src += idx2[i] * stride[i];
                       dx[static_cast<std::size_t>(src)] += g[flat];
                       for (std::int64_t i = out_rank - 1; i >= 0; --i) {
                         auto ui = static_cast<std::size_t>(i);
                         if (++idx2[ui] < oshape[ui]) break;
                         idx2[ui] = 0;
                       }
                     }
                     t.accumulate(xn, dx.data(), xcount);
                   }),
        tp->id());
  }
  return y;
}

}  // namespace stratus
