#include "stratus/attention.h"

#include <cmath>
#include <limits>

namespace stratus {

namespace {

struct Dims {
  std::int64_t h, n_q, n_k, d_h;
  double scale;
};

Dims check_inputs(const AttentionInputs& in) {
  const Tensor &q = in.q, &k = in.k, &v = in.v;
  if (q.ndim() != 3 || k.ndim() != 3 || v.ndim() != 3)
    throw ShapeError("attention: q/k/v must be 3-d, got " +
                     shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                     shape_str(v.shape()));
  Dims d{q.dim(0), q.dim(1), k.dim(1), q.dim(2), in.scale};
  if (k.dim(0) != d.h || v.dim(0) != d.h)
    throw ShapeError("attention: head counts disagree: " + shape_str(q.shape()) +
                     ", " + shape_str(k.shape()) + ", " + shape_str(v.shape()));
  if (k.dim(2) != d.d_h || v.dim(2) != d.d_h)
    throw ShapeError("attention: feature dims disagree: " + shape_str(q.shape()) +
                     ", " + shape_str(k.shape()) + ", " + shape_str(v.shape()));
  if (v.dim(1) != d.n_k)
    throw ShapeError("attention: k/v row counts disagree: " +
                     shape_str(k.shape()) + " vs " + shape_str(v.shape()));
  if (d.scale <= 0.0) d.scale = 1.0 / std::sqrt(static_cast<double>(d.d_h));
  return d;
}

}  // namespace

Tensor naive_attention(const AttentionInputs& in) {
  Dims dm = check_inputs(in);
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(dm.h));
  for (std::int64_t h = 0; h < dm.h; ++h) {
    Tensor qh = slice0(in.q, h);
    Tensor kh = slice0(in.k, h);
    Tensor vh = slice0(in.v, h);
    Tensor scores = scale(matmul(qh, transpose2d(kh)), dm.scale);
    Tensor p = softmax_lastdim(scores);
    heads.push_back(matmul(p, vh));
  }
  return concat0(heads);
}

namespace {

// Shared by forward and the recomputing backward: walks one query row in
// key tiles. m and l are the running max and normalizer.
void stream_forward_row(const double* q, const double* k, const double* v,
                        double* out, double* tile_s, std::int64_t n_k,
                        std::int64_t d_h, std::int64_t tile, double sc,
                        double* m_out, double* l_out) {
  double m = -std::numeric_limits<double>::infinity();
  double l = 0.0;
  for (std::int64_t j = 0; j < d_h; ++j) out[j] = 0.0;
  for (std::int64_t t0 = 0; t0 < n_k; t0 += tile) {
    std::int64_t t1 = t0 + tile < n_k ? t0 + tile : n_k;
    double tile_max = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = t0; j < t1; ++j) {
      const double* kj = k + j * d_h;
      double s = 0.0;
      for (std::int64_t c = 0; c < d_h; ++c) s += q[c] * kj[c];
      s *= sc;
      tile_s[j - t0] = s;
      if (s > tile_max) tile_max = s;
    }
    double m_new = m > tile_max ? m : tile_max;
    double corr = std::exp(m - m_new);
    l *= corr;
    for (std::int64_t c = 0; c < d_h; ++c) out[c] *= corr;
    for (std::int64_t j = t0; j < t1; ++j) {
      double e = std::exp(tile_s[j - t0] - m_new);
      l += e;
      const double* vj = v + j * d_h;
      for (std::int64_t c = 0; c < d_h; ++c) out[c] += e * vj[c];
    }
    m = m_new;
  }
  for (std::int64_t c = 0; c < d_h; ++c) out[c] /= l;
  *m_out = m;
  *l_out = l;
}

}  // namespace

Tensor streaming_attention(const AttentionInputs& in, std::int64_t tile_k) {
  Dims dm = check_inputs(in);
  if (tile_k < 1)
    throw ContractError("streaming_attention: tile_k must be >= 1");
  std::int64_t tile = tile_k < dm.n_k ? tile_k : dm.n_k;
  std::int64_t rows = dm.h * dm.n_q;
  std::vector<double> out(static_cast<std::size_t>(rows * dm.d_h));
  // row statistics survive for the backward recomputation
  auto m_saved = tracked_buffer(static_cast<std::size_t>(rows));
  auto l_saved = tracked_buffer(static_cast<std::size_t>(rows));
  const double* pq = in.q.data();
  const double* pk = in.k.data();
  const double* pv = in.v.data();
  double* pm = m_saved->data();
  double* pl = l_saved->data();
  auto dms = dm;
  if (parallel_kernels()) {
#pragma omp parallel
    {
      auto tile_s = tracked_buffer(static_cast<std::size_t>(tile));
#pragma omp for schedule(static)
      for (std::int64_t r = 0; r < rows; ++r) {
        std::int64_t h = r / dms.n_q;
        std::int64_t i = r % dms.n_q;
        stream_forward_row(pq + (h * dms.n_q + i) * dms.d_h,
                           pk + h * dms.n_k * dms.d_h,
                           pv + h * dms.n_k * dms.d_h, out.data() + r * dms.d_h,
                           tile_s->data(), dms.n_k, dms.d_h, tile, dms.scale,
                           pm + r, pl + r);
      }
    }
  } else {
    auto tile_s = tracked_buffer(static_cast<std::size_t>(tile));
    for (std::int64_t r = 0; r < rows; ++r) {
      std::int64_t h = r / dms.n_q;
      std::int64_t i = r % dms.n_q;
      stream_forward_row(pq + (h * dms.n_q + i) * dms.d_h,
                         pk + h * dms.n_k * dms.d_h,
                         pv + h * dms.n_k * dms.d_h, out.data() + r * dms.d_h,
                         tile_s->data(), dms.n_k, dms.d_h, tile, dms.scale,
                         pm + r, pl + r);
    }
  }
  Tensor y = detail::make_output({dm.h, dm.n_q, dm.d_h}, std::move(out),
                                 "streaming_attention");
  Tape* tp = Tape::active();
  bool tq = tp && tp->owns(in.q), tk = tp && tp->owns(in.k),
       tv = tp && tp->owns(in.v);
  if (tq || tk || tv) {
    std::int64_t qn = tq ? in.q.node() : -1;
    std::int64_t kn = tk ? in.k.node() : -1;
    std::int64_t vn = tv ? in.v.node() : -1;
    Tensor qs = in.q, ks = in.k, vs = in.v, os = y;
    y.bind_node(
        tp->record(
            rows * dm.d_h, {qn, kn, vn},
            [qn, kn, vn, qs, ks, vs, os, m_saved, l_saved, dm,
             tile](Tape& t, const double* g) {
              std::int64_t h_ct = dm.h, n_q = dm.n_q, n_k = dm.n_k,
                           d_h = dm.d_h;
              double sc = dm.scale;
              const double* pq2 = qs.data();
              const double* pk2 = ks.data();
              const double* pv2 = vs.data();
              const double* po = os.data();
              const double* pm2 = m_saved->data();
              const double* pl2 = l_saved->data();
              std::vector<double> dq, dk, dv;
              if (qn >= 0) dq.assign(static_cast<std::size_t>(h_ct * n_q * d_h), 0.0);
              if (kn >= 0) dk.assign(static_cast<std::size_t>(h_ct * n_k * d_h), 0.0);
              if (vn >= 0) dv.assign(static_cast<std::size_t>(h_ct * n_k * d_h), 0.0);
              auto tile_p = tracked_buffer(static_cast<std::size_t>(tile));
              double* ps = tile_p->data();
              for (std::int64_t h = 0; h < h_ct; ++h) {
                const double* kh = pk2 + h * n_k * d_h;
                const double* vh = pv2 + h * n_k * d_h;
                for (std::int64_t i = 0; i < n_q; ++i) {
                  std::int64_t r = h * n_q + i;
                  const double* qi = pq2 + (h * n_q + i) * d_h;
                  const double* oi = po + r * d_h;
                  const double* gi = g + r * d_h;
                  double m = pm2[r];
                  double l = pl2[r];
                  double dsum = 0.0;
                  for (std::int64_t c = 0; c < d_h; ++c) dsum += gi[c] * oi[c];
                  for (std::int64_t t0 = 0; t0 < n_k; t0 += tile) {
                    std::int64_t t1 = t0 + tile < n_k ? t0 + tile : n_k;
                    for (std::int64_t j = t0; j < t1; ++j) {
                      const double* kj = kh + j * d_h;
                      double s = 0.0;
                      for (std::int64_t c = 0; c < d_h; ++c) s += qi[c] * kj[c];
                      ps[j - t0] = std::exp(s * sc - m) / l;
                    }
                    for (std::int64_t j = t0; j < t1; ++j) {
                      double p = ps[j - t0];
                      const double* vj = vh + j * d_h;
                      double dov = 0.0;
                      for (std::int64_t c = 0; c < d_h; ++c)
                        dov += gi[c] * vj[c];
                      double dsij = p * (dov - dsum) * sc;
                      if (vn >= 0) {
                        double* dvj = dv.data() + (h * n_k + j) * d_h;
                        for (std::int64_t c = 0; c < d_h; ++c)
                          dvj[c] += p * gi[c];
                      }
                      if (qn >= 0) {
                        double* dqi = dq.data() + (h * n_q + i) * d_h;
                        const double* kj = kh + j * d_h;
                        for (std::int64_t c = 0; c < d_h; ++c)
                          dqi[c] += dsij * kj[c];
                      }
                      if (kn >= 0) {
                        double* dkj = dk.data() + (h * n_k + j) * d_h;
                        for (std::int64_t c = 0; c < d_h; ++c)
                          dkj[c] += dsij * qi[c];
                      }
                    }
                  }
                }
              }
              if (qn >= 0) t.accumulate(qn, dq.data(), h_ct * n_q * d_h);
              if (kn >= 0) t.accumulate(kn, dk.data(), h_ct * n_k * d_h);
              if (vn >= 0) t.accumulate(vn, dv.data(), h_ct * n_k * d_h);
            }),
        tp->id());
  }
  return y;
}

Tensor cross_attention(const Tensor& query, const Tensor& keys_values,
                       double scale_in) {
  if (query.ndim() != 2 || query.dim(0) != 1)
    throw ShapeError("cross_attention: query must be [1, d], got " +
                     shape_str(query.shape()));
  if (keys_values.ndim() != 2)
    throw ShapeError("cross_attention: keys_values must be 2-d, got " +
                     shape_str(keys_values.shape()));
  std::int64_t d = query.dim(1);
  if (keys_values.dim(1) != d)
    throw ShapeError("cross_attention: query " + shape_str(query.shape()) +
                     " against keys_values " + shape_str(keys_values.shape()));
  double sc = scale_in > 0.0 ? scale_in : 1.0 / std::sqrt(static_cast<double>(d));
  Tensor scores = scale(matmul(query, transpose2d(keys_values)), sc);
  Tensor p = softmax_lastdim(scores);
  return reshape(matmul(p, keys_values), {d});
}

Tensor attend(const AttentionInputs& in, AttentionKernel kernel,
              std::int64_t tile_k) {
  return kernel == AttentionKernel::naive ? naive_attention(in)
                                          : streaming_attention(in, tile_k);
}

}  // namespace stratus
