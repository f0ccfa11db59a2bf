#pragma once

#include <cmath>
#include <vector>

#include "taskclip/tensor.hpp"

namespace taskclip {

template <class S>
struct AttentionParams {
  Tensor<S> wq, wk, wv, wo;  // each [DxD]
};

// Scaled dot-product attention, softmax(Q Kt / sqrt(D/heads)) V per head,
// heads concatenated and output-projected. Self-attention is the
// query == memory case. The probability-weighted value sums run over the
// memory axis with order-invariant summation, so attention output is
// bit-stable under memory-row permutation.
//
// probs_out, when given, receives the per-head softmax matrices [QxS].
template <class S>
Tensor<S> multi_head_attention(const Tensor<S>& query, const Tensor<S>& memory,
                               const AttentionParams<S>& p, int heads,
                               std::vector<Tensor<S>>* probs_out = nullptr) {
  const int d = query.cols();
  if (memory.cols() != d) {
    throw ShapeError("attention: query " +
                     shape_string(query.rows(), query.cols()) +
                     " and memory " +
                     shape_string(memory.rows(), memory.cols()) +
                     " dimensions differ");
  }
  if (heads <= 0 || d % heads != 0) {
    throw ConfigError("attention: model dim " + std::to_string(d) +
                      " not divisible by heads " + std::to_string(heads));
  }
  const int dk = d / heads;
  Tensor<S> q = matmul(query, p.wq);
  Tensor<S> k = matmul(memory, p.wk);
  Tensor<S> v = matmul(memory, p.wv);
  std::vector<Tensor<S>> outs;
  outs.reserve(static_cast<size_t>(heads));
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  for (int h = 0; h < heads; ++h) {
    Tensor<S> qh = slice_cols(q, h * dk, dk);
    Tensor<S> kh = slice_cols(k, h * dk, dk);
    Tensor<S> vh = slice_cols(v, h * dk, dk);
    Tensor<S> logits = scale(matmul(qh, transpose(kh)), inv_sqrt_dk);
    Tensor<S> probs = row_softmax(logits);
    if (probs_out) probs_out->push_back(probs);
    outs.push_back(matmul(probs, vh, SumOrder::kCanonical));
  }
  Tensor<S> merged = heads == 1 ? outs[0] : concat_cols(outs);
  return matmul(merged, p.wo);
}

}  // namespace taskclip
