#pragma once

#include "stratus/ops.h"

namespace stratus {

// q: [h, n_q, d_h], k and v: [h, n_k, d_h]. scale multiplies the raw scores
// (1/sqrt(d_h) when scale <= 0).
struct AttentionInputs {
  Tensor q, k, v;
  double scale = -1.0;
};

enum class AttentionKernel { naive, streaming };

// Materializes the per-head score matrix; composed from taped ops, so it is
// the differentiable reference the streaming kernel is checked against.
Tensor naive_attention(const AttentionInputs& in);

// Online-softmax over key tiles. Auxiliary memory is O(n_q) for the saved
// row statistics plus one tile-width scratch row, never O(n_q * n_k); the
// backward pass recomputes tiles from the stored row max and normalizer.
Tensor streaming_attention(const AttentionInputs& in, std::int64_t tile_k = 32);

// Single learned query over V rows; keys and values are the same tensor.
// Output length does not depend on the number of rows attended over.
Tensor cross_attention(const Tensor& query, const Tensor& keys_values,
                       double scale = -1.0);

Tensor attend(const AttentionInputs& in, AttentionKernel kernel,
              std::int64_t tile_k);

}  // namespace stratus
