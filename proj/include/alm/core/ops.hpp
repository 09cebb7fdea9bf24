#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "alm/core/tape.hpp"

// Differentiable operations over Var<T>. Every op validates shapes (throwing
// ShapeError with both shapes named), computes its forward value eagerly and
// registers a backward rule on the tape of its first input. Instantiated for
// float and double.
namespace alm::core {

/// Row span [start, start + length) of a packed [rows x d] array.
struct Segment {
  std::size_t start = 0;
  std::size_t length = 0;
};

template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// Same-shape add, or row-broadcast when `b` is rank-1 with b.size == a.cols.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
/// Same-shape or row-broadcast elementwise product.
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);

template <typename T> Var<T> gelu(const Var<T>& a);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> log_sigmoid(const Var<T>& a);

/// Softmax along `axis` (negative counts from the back).
template <typename T> Var<T> softmax(const Var<T>& a, int axis = -1);
template <typename T> Var<T> log_softmax(const Var<T>& a, int axis = -1);

/// Normalizes each trailing-dimension vector, then applies gamma/beta.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

/// Rows of `table` [V x d] selected by `ids`; result [ids.size() x d].
template <typename T> Var<T> embedding_lookup(const Var<T>& table, std::span<const int> ids);

template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, int axis = 0);
template <typename T> Var<T> slice(const Var<T>& a, int axis, std::size_t start, std::size_t length);
template <typename T> Var<T> transpose(const Var<T>& a);
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);

/// Averages consecutive groups of `stride` rows of a [T x d] array. The final
/// group may be short (ceil division), so no trailing rows are dropped.
template <typename T> Var<T> mean_pool(const Var<T>& a, std::size_t stride);

/// 1-D convolution. x: [C_in x T], weight: [C_out x C_in x K], bias: [C_out].
/// Output [C_out x T_out], T_out = floor((T + 2*padding - K) / stride) + 1.
template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride,
              std::size_t padding);

/// Multi-head scaled dot-product attention over packed sequences. q, k, v are
/// [N x d]; each segment attends only within itself, and with `causal` a row
/// sees only rows at or before its own position.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::span<const Segment> segments,
                 std::size_t heads, bool causal);

/// Copy of `base` [N x d] whose rows at `positions` are taken from `src` [M x d].
template <typename T>
Var<T> replace_rows(const Var<T>& base, const Var<T>& src, std::span<const std::size_t> positions);

/// out[i] = a[i, index[i]] for a [T x V]; result [T].
template <typename T> Var<T> pick(const Var<T>& a, std::span<const int> index);

template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);

/// Mean over rows with mask != 0 of -log_softmax(logits)[t, targets[t]].
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> targets,
                     std::span<const std::uint8_t> mask);

}  // namespace alm::core
