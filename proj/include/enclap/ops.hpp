#pragma once

// Differentiable operations. All matrix ops treat their operands as
// row-major 2-D (see Tensor::rows/cols); row vectors of shape [D] broadcast
// against [T x D] where noted.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "enclap/tensor.hpp"

namespace enclap::ad {

Tensor constant_like(const Tensor& x);  // detached copy
Tensor reshape(const Tensor& x, Shape shape);

Tensor matmul(const Tensor& a, const Tensor& b);     // [m x k] * [k x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m x k] * [n x k]^T
Tensor transpose(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);  // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_row(const Tensor& x, const Tensor& row);  // [T x D] + [D]
Tensor scale(const Tensor& x, double s);
Tensor scale_by(const Tensor& x, const Tensor& s);  // s holds one element
Tensor exp(const Tensor& x);

Tensor gelu(const Tensor& x);  // tanh approximation
Tensor relu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mean_rows(const Tensor& x);  // [T x D] -> [D]

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& table, std::span<const std::int64_t> ids);
/// out.flat[i] = x.flat[indices[i]]; indices may repeat. Used for im2col.
Tensor take(const Tensor& x, std::span<const std::size_t> indices, Shape shape);

Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);

/// Multi-head scaled dot-product attention. q is [Tq x D], k and v are
/// [Tk x D]; D must divide evenly into `heads`. With `causal`, query i only
/// sees keys j <= i.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, bool causal);

/// Mean over unmasked rows of
///   -[(1 - eps) log p(target) + (eps / K) sum_k log p(k)]
/// where p = softmax(logits row). `keep`, when given, selects the rows that
/// count (nonzero = keep).
Tensor label_smoothed_nll(const Tensor& logits, std::span<const std::int64_t> targets, double epsilon,
                          std::optional<std::span<const std::uint8_t>> keep = std::nullopt);

inline Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets) {
  return label_smoothed_nll(logits, targets, 0.0);
}

Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace enclap::ad
