#include "alm/core/ops.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/SpecialFunctions>

#include <cmath>
#include <limits>
#include <memory>

namespace alm::core {
namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;
template <typename T>
using CMapM = Eigen::Map<const Mat<T>>;
template <typename T>
using StridedM = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedM = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ArrayX = Eigen::Array<T, Eigen::Dynamic, 1>;
template <typename T>
using CVec = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template <typename T>
CMapM<T> as_matrix(const Array<T>& a) {
  return CMapM<T>(a.data.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
}
template <typename T>
MapM<T> as_matrix(Array<T>& a) {
  return MapM<T>(a.data.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

template <typename T>
void accumulate(Array<T>& dst, const Array<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

struct AxisView {
  std::size_t outer = 1, length = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

bool row_broadcast(const Shape& a, const Shape& b) {
  return b.size() == 1 && !a.empty() && a.back() == b[0];
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0]) shape_mismatch("matmul", av.shape, bv.shape);
  Array<T> out(Shape{av.shape[0], bv.shape[1]});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  Tape<T>* tape = &a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  Var<T> res;
  res = tape->record(std::move(out), {a, b}, [tape, ia, ib, io = tape->size()] {
    const auto& g = tape->grad(io);
    if (tape->requires_grad(ia)) as_matrix(tape->grad(ia)).noalias() += as_matrix(g) * as_matrix(tape->value(ib)).transpose();
    if (tape->requires_grad(ib)) as_matrix(tape->grad(ib)).noalias() += as_matrix(tape->value(ia)).transpose() * as_matrix(g);
  });
  return res;
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  Tape<T>* tape = &a.tape();
  const std::size_t ia = a.id(), ib = b.id(), io = tape->size();
  if (av.shape == bv.shape) {
    Array<T> out(av.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = av.data[i] + bv.data[i];
    return tape->record(std::move(out), {a, b}, [tape, ia, ib, io] {
      const auto& g = tape->grad(io);
      if (tape->requires_grad(ia)) accumulate(tape->grad(ia), g);
      if (tape->requires_grad(ib)) accumulate(tape->grad(ib), g);
    });
  }
  if (!row_broadcast(av.shape, bv.shape)) shape_mismatch("add", av.shape, bv.shape);
  Array<T> out(av.shape);
  const std::size_t cols = av.cols();
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c) out.data[r * cols + c] = av.data[r * cols + c] + bv.data[c];
  return tape->record(std::move(out), {a, b}, [tape, ia, ib, io] {
    const auto& g = tape->grad(io);
    if (tape->requires_grad(ia)) accumulate(tape->grad(ia), g);
    if (tape->requires_grad(ib)) {
      // Plain row-order loop: Eigen's vectorized colwise().sum() gave
      // run-dependent low bits under AVX-512.
      const std::size_t cols = g.cols();
      std::vector<T> sum(cols, T(0));
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < cols; ++c) sum[c] += g.data[r * cols + c];
      auto& gb = tape->grad(ib);
      for (std::size_t c = 0; c < cols; ++c) gb.data[c] += sum[c];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape != bv.shape) shape_mismatch("sub", av.shape, bv.shape);
  Array<T> out(av.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = av.data[i] - bv.data[i];
  Tape<T>* tape = &a.tape();
  const std::size_t ia = a.id(), ib = b.id(), io = tape->size();
  return tape->record(std::move(out), {a, b}, [tape, ia, ib, io] {
    const auto& g = tape->grad(io);
    if (tape->requires_grad(ia)) accumulate(tape->grad(ia), g);
    if (tape->requires_grad(ib)) {
      auto& gb = tape->grad(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb.data[i] -= g.data[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  const bool same = av.shape == bv.shape;
  if (!same && !row_broadcast(av.shape, bv.shape)) shape_mismatch("mul", av.shape, bv.shape);
  Array<T> out(av.shape);
  const std::size_t cols = av.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = av.data[i] * bv.data[same ? i : i % cols];
  Tape<T>* tape = &a.tape();
  const std::size_t ia = a.id(), ib = b.id(), io = tape->size();
  return tape->record(std::move(out), {a, b}, [tape, ia, ib, io, same, cols] {
    const auto& g = tape->grad(io);
    const auto& av = tape->value(ia);
    const auto& bv = tape->value(ib);
    if (tape->requires_grad(ia)) {
      auto& ga = tape->grad(ia);
      for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += g.data[i] * bv.data[same ? i : i % cols];
    }
    if (tape->requires_grad(ib)) {
      auto& gb = tape->grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb.data[same ? i : i % cols] += g.data[i] * av.data[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  const auto& av = a.value();
  Array<T> out(av.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = av.data[i] * factor;
  Tape<T>* tape = &a.tape();
  const std::size_t ia = a.id(), io = tape->size();
  return tape->record(std::move(out), {a}, [tape, ia, io, factor] {
    const auto& g = tape->grad(io);
    auto& ga = tape->grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += g.data[i] * factor;
  });
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  const auto& av = a.value();
  const auto n = static_cast<Eigen::Index>(av.size());
  // Eigen-owned buffers are always aligned, so the packet/scalar split of erf and exp
  // never depends on where the heap put a std::vector.
  auto cdf = std::make_shared<ArrayX<T>>(T(0.5) * (T(1) + (CVec<T>(av.data.data(), n) * T(0.70710678118654752440)).erf()));
  Array<T> out(av.shape);
  for (Eigen::Index i = 0; i < n; ++i) out.data[i] = av.data[i] * (*cdf)(i);
  Tape<T>* tape = &a.tape();
  const std::size_t ia = a.id(), io = tape->size();
  return tape->record(std::move(out), {a}, [tape, ia, io, cdf] {
    const auto& av = tape->value(ia);
    const auto& g = tape->grad(io);
    auto& ga = tape->grad(ia);
    const auto n = static_cast<Eigen::Index>(av.size());
    const T inv_sqrt_2pi = T(0.39894228040143267794);
    ArrayX<T> pdf = (T(-0.5) * CVec<T>(av.data.data(), n).square()).exp();
    for (Eigen::Index i = 0; i < n; ++i) {
      ga.data[i] += g.data[i] * ((*cdf)(i) + av.data[i] * inv_sqrt_2pi * pdf(i));
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  const auto& av = a.value();
  Array<T> out(av.shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = av.data[i];
    out.data[i] = x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
  }
  Tape<T>* tape = &a.tape();
  const std::size_t ia = a.id(), io = tape->size();
  return tape->record(std::move(out), {a}, [tape, ia, io] {
    const auto& g = tape->grad(io);
    const auto& y = tape->value(io);
    auto& ga = tape->grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += g.data[i] * y.data[i] * (T(1) - y.data[i]);
  });
}

template <typename T>
Var<T> log_sigmoid(const Var<T>& a) {
  const auto& av = a.value();
  Array<T> out(av.shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = av.data[i];
    out.data[i] = std::min(x, T(0)) - std::log1p(std::exp(-std::abs(x)));
  }
  Tape<T>* tape = &a.tape();
  const std::size_t ia = a.id(), io = tape->size();
  return tape->record(std::move(out), {a}, [tape, ia, io] {
    const auto& g = tape->grad(io);
    const auto& av = tape->value(ia);
    auto& ga = tape->grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      // d/dx log sigma(x) = sigma(-x)
      const T x = -av.data[i];
      const T s = x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
      ga.data[i] += g.data[i] * s;
    }
  });
}

namespace {

template <typename T>
void softmax_forward(const Array<T>& x, Array<T>& y, const AxisView& v, bool log_space) {
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.length * v.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < v.length; ++k) mx = std::max(mx, x.data[base + k * v.inner]);
      T total = 0;
      for (std::size_t k = 0; k < v.length; ++k) total += std::exp(x.data[base + k * v.inner] - mx);
      const T lse = mx + std::log(total);
      for (std::size_t k = 0; k < v.length; ++k) {
        const std::size_t idx = base + k * v.inner;
        y.data[idx] = log_space ? x.data[idx] - lse : std::exp(x.data[idx] - lse);
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> softmax(const Var<T>& a, int axis) {
  const auto& av = a.value();
  const AxisView view = axis_view(av.shape, normalize_axis(axis, av.rank(), "softmax"));
  Array<T> out(av.shape);
  softmax_forward(av, out, view, false);
  Tape<T>* tape = &a.tape();
  const std::size_t ia = a.id(), io = tape->size();
  return tape->record(std::move(out), {a}, [tape, ia, io, view] {
    const auto& g = tape->grad(io);
    const auto& y = tape->value(io);
    auto& ga = tape->grad(ia);
    for (std::size_t o = 0; o < view.outer; ++o) {
      for (std::size_t in = 0; in < view.inner; ++in) {
        const std::size_t base = o * view.length * view.inner + in;
        T dot = 0;
        for (std::size_t k = 0; k < view.length; ++k) dot += g.data[base + k * view.inner] * y.data[base + k * view.inner];
        for (std::size_t k = 0; k < view.length; ++k) {
          const std::size_t idx = base + k * view.inner;
          ga.data[idx] += y.data[idx] * (g.data[idx] - dot);
        }
      }
    }
  });
}

template <typename T>
Var<T> log_softmax(const Var<T>& a, int axis) {
  const auto& av = a.value();
  const AxisView view = axis_view(av.shape, normalize_axis(axis, av.rank(), "log_softmax"));
  Array<T> out(av.shape);
  softmax_forward(av, out, view, true);
  Tape<T>* tape = &a.tape();
  const std::size_t ia = a.id(), io = tape->size();
  return tape->record(std::move(out), {a}, [tape, ia, io, view] {
    const auto& g = tape->grad(io);
    const auto& y = tape->value(io);
    auto& ga = tape->grad(ia);
    for (std::size_t o = 0; o < view.outer; ++o) {
      for (std::size_t in = 0; in < view.inner; ++in) {
        const std::size_t base = o * view.length * view.inner + in;
        T total = 0;
        for (std::size_t k = 0; k < view.length; ++k) total += g.data[base + k * view.inner];
        for (std::size_t k = 0; k < view.length; ++k) {
          const std::size_t idx = base + k * view.inner;
          ga.data[idx] += g.data[idx] - std::exp(y.data[idx]) * total;
        }
      }
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const auto& xv = x.value();
  const std::size_t d = xv.cols();
  if (gamma.value().shape != Shape{d}) shape_mismatch("layer_norm(gamma)", xv.shape, gamma.value().shape);
  if (beta.value().shape != Shape{d}) shape_mismatch("layer_norm(beta)", xv.shape, beta.value().shape);
  const std::size_t rows = xv.rows();
  const auto& gv = gamma.value().data;
  const auto& bv = beta.value().data;
  Array<T> out(xv.shape);
  std::vector<T> xhat(xv.size());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.row(r);
    T mu = 0;
    for (std::size_t c = 0; c < d; ++c) mu += xr[c];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<T>(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      const T h = (xr[c] - mu) * rstd[r];
      xhat[r * d + c] = h;
      out.data[r * d + c] = h * gv[c] + bv[c];
    }
  }
  Tape<T>* tape = &x.tape();
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id(), io = tape->size();
  return tape->record(std::move(out), {x, gamma, beta},
                      [tape, ix, ig, ib, io, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)] {
    const auto& g = tape->grad(io);
    const auto& gv = tape->value(ig).data;
    if (tape->requires_grad(ib)) {
      auto& gb = tape->grad(ib);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) gb.data[c] += g.data[r * d + c];
    }
    if (tape->requires_grad(ig)) {
      auto& gg = tape->grad(ig);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) gg.data[c] += g.data[r * d + c] * xhat[r * d + c];
    }
    if (tape->requires_grad(ix)) {
      auto& gx = tape->grad(ix);
      const T inv_d = T(1) / static_cast<T>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_dh = 0, mean_dh_h = 0;
        for (std::size_t c = 0; c < d; ++c) {
          const T dh = g.data[r * d + c] * gv[c];
          mean_dh += dh;
          mean_dh_h += dh * xhat[r * d + c];
        }
        mean_dh *= inv_d;
        mean_dh_h *= inv_d;
        for (std::size_t c = 0; c < d; ++c) {
          const T dh = g.data[r * d + c] * gv[c];
          gx.data[r * d + c] += rstd[r] * (dh - mean_dh - xhat[r * d + c] * mean_dh_h);
        }
      }
    }
  });
}

template <typename T>
Var<T> embedding_lookup(const Var<T>& table, std::span<const int> ids) {
  const auto& tv = table.value();
  if (tv.rank() != 2) throw ShapeError("embedding_lookup: table must be rank 2, got " + shape_str(tv.shape));
  const std::size_t vocab = tv.shape[0], d = tv.shape[1];
  Array<T> out(Shape{ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ShapeError("embedding_lookup: id " + std::to_string(ids[i]) + " outside table " + shape_str(tv.shape));
    }
    std::copy_n(tv.row(static_cast<std::size_t>(ids[i])), d, out.row(i));
  }
  Tape<T>* tape = &table.tape();
  const std::size_t it = table.id(), io = tape->size();
  return tape->record(std::move(out), {table}, [tape, it, io, d, idx = std::vector<int>(ids.begin(), ids.end())] {
    const auto& g = tape->grad(io);
    auto& gt = tape->grad(it);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      T* dst = gt.row(static_cast<std::size_t>(idx[i]));
      const T* src = g.row(i);
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].value().shape;
  const std::size_t ax = normalize_axis(axis, first.size(), "concat");
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.value().shape;
    if (s.size() != first.size()) shape_mismatch("concat", first, s);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != ax && s[i] != first[i]) shape_mismatch("concat", first, s);
    out_shape[ax] += s[ax];
  }
  Array<T> out(out_shape);
  const AxisView ov = axis_view(out_shape, ax);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& pv = p.value();
    const AxisView v = axis_view(pv.shape, ax);
    for (std::size_t o = 0; o < v.outer; ++o)
      std::copy_n(pv.data.data() + o * v.length * v.inner, v.length * v.inner,
                  out.data.data() + o * ov.length * ov.inner + offset * ov.inner);
    offsets.push_back(offset);
    offset += v.length;
  }
  Tape<T>* tape = &parts[0].tape();
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  const std::size_t io = tape->size();
  return tape->record(std::move(out), parts, [tape, io, ids, offsets, ov, ax] {
    const auto& g = tape->grad(io);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tape->requires_grad(ids[k])) continue;
      auto& gp = tape->grad(ids[k]);
      const AxisView v = axis_view(gp.shape, ax);
      for (std::size_t o = 0; o < v.outer; ++o) {
        const T* src = g.data.data() + o * ov.length * ov.inner + offsets[k] * ov.inner;
        T* dst = gp.data.data() + o * v.length * v.inner;
        for (std::size_t i = 0; i < v.length * v.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Var<T> slice(const Var<T>& a, int axis, std::size_t start, std::size_t length) {
  const auto& av = a.value();
  const std::size_t ax = normalize_axis(axis, av.rank(), "slice");
  if (start + length > av.shape[ax]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") exceeds axis " + std::to_string(ax) + " of " + shape_str(av.shape));
  }
  Shape out_shape = av.shape;
  out_shape[ax] = length;
  Array<T> out(out_shape);
  const AxisView v = axis_view(av.shape, ax);
  for (std::size_t o = 0; o < v.outer; ++o)
    std::copy_n(av.data.data() + (o * v.length + start) * v.inner, length * v.inner,
                out.data.data() + o * length * v.inner);
  Tape<T>* tape = &a.tape();
  const std::size_t ia = a.id(), io = tape->size();
  return tape->record(std::move(out), {a}, [tape, ia, io, v, start, length] {
    const auto& g = tape->grad(io);
    auto& ga = tape->grad(ia);
    for (std::size_t o = 0; o < v.outer; ++o) {
      const T* src = g.data.data() + o * length * v.inner;
      T* dst = ga.data.data() + (o * v.length + start) * v.inner;
      for (std::size_t i = 0; i < length * v.inner; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  const auto& av = a.value();
  if (av.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(av.shape));
  Array<T> out(Shape{av.shape[1], av.shape[0]});
  as_matrix(out) = as_matrix(av).transpose();
  Tape<T>* tape = &a.tape();
  const std::size_t ia = a.id(), io = tape->size();
  return tape->record(std::move(out), {a}, [tape, ia, io] {
    as_matrix(tape->grad(ia)) += as_matrix(tape->grad(io)).transpose();
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  const auto& av = a.value();
  if (shape_size(shape) != av.size()) shape_mismatch("reshape", av.shape, shape);
  Array<T> out(std::move(shape), av.data);
  Tape<T>* tape = &a.tape();
  const std::size_t ia = a.id(), io = tape->size();
  return tape->record(std::move(out), {a}, [tape, ia, io] { accumulate(tape->grad(ia), tape->grad(io)); });
}

template <typename T>
Var<T> mean_pool(const Var<T>& a, std::size_t stride) {
  const auto& av = a.value();
  if (av.rank() != 2 || stride == 0) throw ShapeError("mean_pool: expected rank-2 input and stride > 0, got " + shape_str(av.shape));
  const std::size_t rows = av.shape[0], d = av.shape[1];
  const std::size_t out_rows = (rows + stride - 1) / stride;
  Array<T> out(Shape{out_rows, d});
  for (std::size_t j = 0; j < out_rows; ++j) {
    const std::size_t begin = j * stride, end = std::min(rows, begin + stride);
    const T inv = T(1) / static_cast<T>(end - begin);
    for (std::size_t r = begin; r < end; ++r)
      for (std::size_t c = 0; c < d; ++c) out.data[j * d + c] += av.data[r * d + c] * inv;
  }
  Tape<T>* tape = &a.tape();
  const std::size_t ia = a.id(), io = tape->size();
  return tape->record(std::move(out), {a}, [tape, ia, io, rows, d, stride, out_rows] {
    const auto& g = tape->grad(io);
    auto& ga = tape->grad(ia);
    for (std::size_t j = 0; j < out_rows; ++j) {
      const std::size_t begin = j * stride, end = std::min(rows, begin + stride);
      const T inv = T(1) / static_cast<T>(end - begin);
      for (std::size_t r = begin; r < end; ++r)
        for (std::size_t c = 0; c < d; ++c) ga.data[r * d + c] += g.data[j * d + c] * inv;
    }
  });
}

template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride, std::size_t padding) {
  const auto& xv = x.value();
  const auto& wv = weight.value();
  const auto& bv = bias.value();
  if (xv.rank() != 2 || wv.rank() != 3 || wv.shape[1] != xv.shape[0]) shape_mismatch("conv1d", xv.shape, wv.shape);
  if (bv.shape != Shape{wv.shape[0]}) shape_mismatch("conv1d(bias)", wv.shape, bv.shape);
  if (stride == 0) throw ShapeError("conv1d: stride must be positive");
  const std::size_t cin = xv.shape[0], len = xv.shape[1];
  const std::size_t cout = wv.shape[0], kernel = wv.shape[2];
  if (len + 2 * padding < kernel) {
    throw ShapeError("conv1d: input " + shape_str(xv.shape) + " shorter than kernel " + shape_str(wv.shape));
  }
  const std::size_t out_len = (len + 2 * padding - kernel) / stride + 1;
  const std::size_t patch = cin * kernel;

  // cols[t, c*K + k] = x[c, t*stride + k - padding]
  Mat<T> cols = Mat<T>::Zero(static_cast<Eigen::Index>(out_len), static_cast<Eigen::Index>(patch));
  for (std::size_t t = 0; t < out_len; ++t) {
    for (std::size_t c = 0; c < cin; ++c) {
      for (std::size_t k = 0; k < kernel; ++k) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + k) - static_cast<std::ptrdiff_t>(padding);
        if (src >= 0 && src < static_cast<std::ptrdiff_t>(len))
          cols(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c * kernel + k)) = xv.data[c * len + static_cast<std::size_t>(src)];
      }
    }
  }
  CMapM<T> w2(wv.data.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(patch));
  Array<T> out(Shape{cout, out_len});
  auto om = as_matrix(out);
  om.noalias() = w2 * cols.transpose();
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t t = 0; t < out_len; ++t) out.data[o * out_len + t] += bv.data[o];

  Tape<T>* tape = &x.tape();
  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id(), io = tape->size();
  return tape->record(std::move(out), {x, weight, bias},
                      [tape, ix, iw, ib, io, cols = std::move(cols), cin, len, cout, kernel, stride, padding, out_len, patch] {
    const auto& g = tape->grad(io);
    auto gm = as_matrix(g);
    if (tape->requires_grad(ib)) {
      auto& gb = tape->grad(ib);
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t t = 0; t < out_len; ++t) gb.data[o] += g.data[o * out_len + t];
    }
    if (tape->requires_grad(iw)) {
      auto& gw = tape->grad(iw);
      MapM<T>(gw.data.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(patch)).noalias() += gm * cols;
    }
    if (tape->requires_grad(ix)) {
      const auto& wv = tape->value(iw);
      CMapM<T> w2(wv.data.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(patch));
      Mat<T> dcols = gm.transpose() * w2;
      auto& gx = tape->grad(ix);
      for (std::size_t t = 0; t < out_len; ++t) {
        for (std::size_t c = 0; c < cin; ++c) {
          for (std::size_t k = 0; k < kernel; ++k) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + k) - static_cast<std::ptrdiff_t>(padding);
            if (src >= 0 && src < static_cast<std::ptrdiff_t>(len))
              gx.data[c * len + static_cast<std::size_t>(src)] += dcols(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c * kernel + k));
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::span<const Segment> segments,
                 std::size_t heads, bool causal) {
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  if (qv.rank() != 2 || qv.shape != kv.shape) shape_mismatch("attention(q,k)", qv.shape, kv.shape);
  if (qv.shape != vv.shape) shape_mismatch("attention(q,v)", qv.shape, vv.shape);
  const std::size_t n = qv.shape[0], d = qv.shape[1];
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  }
  for (const auto& s : segments) {
    if (s.start + s.length > n) throw ShapeError("attention: segment exceeds " + shape_str(qv.shape));
  }
  const std::size_t dh = d / heads;
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(dh));
  const auto stride = Eigen::OuterStride<>(static_cast<Eigen::Index>(d));

  Array<T> out(qv.shape);
  std::vector<Mat<T>> probs;
  probs.reserve(segments.size() * heads);
  for (const auto& s : segments) {
    const auto len = static_cast<Eigen::Index>(s.length);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = s.start * d + h * dh;
      CStridedM<T> qm(qv.data.data() + off, len, static_cast<Eigen::Index>(dh), stride);
      CStridedM<T> km(kv.data.data() + off, len, static_cast<Eigen::Index>(dh), stride);
      CStridedM<T> vm(vv.data.data() + off, len, static_cast<Eigen::Index>(dh), stride);
      Mat<T> p = (qm * km.transpose()) * inv_scale;
      for (Eigen::Index i = 0; i < len; ++i) {
        const Eigen::Index visible = causal ? i + 1 : len;
        T mx = p(i, 0);
        for (Eigen::Index j = 1; j < visible; ++j) mx = std::max(mx, p(i, j));
        // p owns aligned storage, so the vectorized exp is reproducible for a given length.
        p.row(i).head(visible) = (p.row(i).head(visible).array() - mx).exp();
        T total = 0;
        for (Eigen::Index j = 0; j < visible; ++j) total += p(i, j);
        for (Eigen::Index j = 0; j < visible; ++j) p(i, j) /= total;
        for (Eigen::Index j = visible; j < len; ++j) p(i, j) = T(0);
      }
      StridedM<T> om(out.data.data() + off, len, static_cast<Eigen::Index>(dh), stride);
      om.noalias() = p * vm;
      probs.push_back(std::move(p));
    }
  }

  Tape<T>* tape = &q.tape();
  const std::size_t iq = q.id(), ik = k.id(), iv = v.id(), io = tape->size();
  return tape->record(std::move(out), {q, k, v},
                      [tape, iq, ik, iv, io, d, dh, heads, inv_scale, probs = std::move(probs),
                       segs = std::vector<Segment>(segments.begin(), segments.end())] {
    const auto stride = Eigen::OuterStride<>(static_cast<Eigen::Index>(d));
    const auto& g = tape->grad(io);
    const auto& qv = tape->value(iq);
    const auto& kv = tape->value(ik);
    const auto& vv = tape->value(iv);
    const bool need_q = tape->requires_grad(iq), need_k = tape->requires_grad(ik), need_v = tape->requires_grad(iv);
    T* gq = need_q ? tape->grad(iq).data.data() : nullptr;
    T* gk = need_k ? tape->grad(ik).data.data() : nullptr;
    T* gv = need_v ? tape->grad(iv).data.data() : nullptr;
    std::size_t idx = 0;
    for (const auto& s : segs) {
      const auto len = static_cast<Eigen::Index>(s.length);
      const auto w = static_cast<Eigen::Index>(dh);
      for (std::size_t h = 0; h < heads; ++h, ++idx) {
        const std::size_t off = s.start * d + h * dh;
        const Mat<T>& p = probs[idx];
        CStridedM<T> dout(g.data.data() + off, len, w, stride);
        CStridedM<T> qm(qv.data.data() + off, len, w, stride);
        CStridedM<T> km(kv.data.data() + off, len, w, stride);
        CStridedM<T> vm(vv.data.data() + off, len, w, stride);
        if (need_v) StridedM<T>(gv + off, len, w, stride).noalias() += p.transpose() * dout;
        if (!need_q && !need_k) continue;
        Mat<T> dp = dout * vm.transpose();
        Mat<T> ds(len, len);
        for (Eigen::Index i = 0; i < len; ++i) {
          T dot = 0;
          for (Eigen::Index j = 0; j < len; ++j) dot += dp(i, j) * p(i, j);
          for (Eigen::Index j = 0; j < len; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * inv_scale;
        }
        if (need_q) StridedM<T>(gq + off, len, w, stride).noalias() += ds * km;
        if (need_k) StridedM<T>(gk + off, len, w, stride).noalias() += ds.transpose() * qm;
      }
    }
  });
}

template <typename T>
Var<T> replace_rows(const Var<T>& base, const Var<T>& src, std::span<const std::size_t> positions) {
  const auto& bv = base.value();
  const auto& sv = src.value();
  if (bv.rank() != 2 || sv.rank() != 2 || bv.shape[1] != sv.shape[1] || sv.shape[0] != positions.size()) {
    shape_mismatch("replace_rows", bv.shape, sv.shape);
  }
  const std::size_t d = bv.shape[1];
  Array<T> out = bv;
  std::vector<std::uint8_t> replaced(bv.shape[0], 0);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const std::size_t p = positions[i];
    if (p >= bv.shape[0]) throw ShapeError("replace_rows: position " + std::to_string(p) + " outside " + shape_str(bv.shape));
    std::copy_n(sv.row(i), d, out.row(p));
    replaced[p] = 1;
  }
  Tape<T>* tape = &base.tape();
  const std::size_t ib = base.id(), is = src.id(), io = tape->size();
  return tape->record(std::move(out), {base, src},
                      [tape, ib, is, io, d, replaced = std::move(replaced),
                       pos = std::vector<std::size_t>(positions.begin(), positions.end())] {
    const auto& g = tape->grad(io);
    if (tape->requires_grad(ib)) {
      auto& gb = tape->grad(ib);
      for (std::size_t r = 0; r < replaced.size(); ++r) {
        if (replaced[r]) continue;
        for (std::size_t c = 0; c < d; ++c) gb.data[r * d + c] += g.data[r * d + c];
      }
    }
    if (tape->requires_grad(is)) {
      auto& gs = tape->grad(is);
      for (std::size_t i = 0; i < pos.size(); ++i)
        for (std::size_t c = 0; c < d; ++c) gs.data[i * d + c] += g.data[pos[i] * d + c];
    }
  });
}

template <typename T>
Var<T> pick(const Var<T>& a, std::span<const int> index) {
  const auto& av = a.value();
  if (av.rank() != 2 || av.shape[0] != index.size()) {
    shape_mismatch("pick", av.shape, Shape{index.size()});
  }
  const std::size_t cols = av.shape[1];
  Array<T> out(Shape{index.size()});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= cols) {
      throw ShapeError("pick: index " + std::to_string(index[i]) + " outside " + shape_str(av.shape));
    }
    out.data[i] = av.data[i * cols + static_cast<std::size_t>(index[i])];
  }
  Tape<T>* tape = &a.tape();
  const std::size_t ia = a.id(), io = tape->size();
  return tape->record(std::move(out), {a}, [tape, ia, io, cols, idx = std::vector<int>(index.begin(), index.end())] {
    const auto& g = tape->grad(io);
    auto& ga = tape->grad(ia);
    for (std::size_t i = 0; i < idx.size(); ++i) ga.data[i * cols + static_cast<std::size_t>(idx[i])] += g.data[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  const auto& av = a.value();
  T total = 0;
  for (T x : av.data) total += x;
  Tape<T>* tape = &a.tape();
  const std::size_t ia = a.id(), io = tape->size();
  return tape->record(Array<T>::scalar(total), {a}, [tape, ia, io] {
    const T g = tape->grad(io).data[0];
    for (auto& x : tape->grad(ia).data) x += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of empty array");
  return scale(sum(a), T(1) / static_cast<T>(n));
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
  const auto& lv = logits.value();
  if (lv.rank() != 2 || lv.shape[0] != targets.size() || targets.size() != mask.size()) {
    shape_mismatch("cross_entropy", lv.shape, Shape{targets.size(), mask.size()});
  }
  const std::size_t rows = lv.shape[0], vocab = lv.shape[1];
  std::size_t count = 0;
  for (auto m : mask) count += m ? 1 : 0;
  if (count == 0) throw EmptyLoss("cross_entropy: mask selects no positions");
  T total = 0;
  for (std::size_t t = 0; t < rows; ++t) {
    if (!mask[t]) continue;
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= vocab) {
      throw InvalidInput("cross_entropy: target " + std::to_string(targets[t]) + " outside vocabulary of " +
                         std::to_string(vocab));
    }
    const T* row = lv.row(t);
    T mx = row[0];
    for (std::size_t c = 1; c < vocab; ++c) mx = std::max(mx, row[c]);
    const ArrayX<T> e = (CVec<T>(row, static_cast<Eigen::Index>(vocab)) - mx).exp();
    T acc = 0;
    for (std::size_t c = 0; c < vocab; ++c) acc += e[c];
    total += mx + std::log(acc) - row[targets[t]];
  }
  const T inv = T(1) / static_cast<T>(count);
  Tape<T>* tape = &logits.tape();
  const std::size_t il = logits.id(), io = tape->size();
  return tape->record(Array<T>::scalar(total * inv), {logits},
                      [tape, il, io, inv, rows, vocab, tg = std::vector<int>(targets.begin(), targets.end()),
                       mk = std::vector<std::uint8_t>(mask.begin(), mask.end())] {
    const T g = tape->grad(io).data[0] * inv;
    const auto& lv = tape->value(il);
    auto& gl = tape->grad(il);
    for (std::size_t t = 0; t < rows; ++t) {
      if (!mk[t]) continue;
      const T* row = lv.row(t);
      T mx = row[0];
      for (std::size_t c = 1; c < vocab; ++c) mx = std::max(mx, row[c]);
      const ArrayX<T> e = (CVec<T>(row, static_cast<Eigen::Index>(vocab)) - mx).exp();
      T acc = 0;
      for (std::size_t c = 0; c < vocab; ++c) acc += e[c];
      T* grow = gl.row(t);
      for (std::size_t c = 0; c < vocab; ++c) grow[c] += g * e[c] / acc;
      grow[tg[t]] -= g;
    }
  });
}

#define ALM_INSTANTIATE_OPS(T)                                                                         \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                                \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                   \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                   \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                   \
  template Var<T> scale(const Var<T>&, T);                                                             \
  template Var<T> gelu(const Var<T>&);                                                                 \
  template Var<T> sigmoid(const Var<T>&);                                                              \
  template Var<T> log_sigmoid(const Var<T>&);                                                          \
  template Var<T> softmax(const Var<T>&, int);                                                         \
  template Var<T> log_softmax(const Var<T>&, int);                                                     \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                          \
  template Var<T> embedding_lookup(const Var<T>&, std::span<const int>);                               \
  template Var<T> concat(const std::vector<Var<T>>&, int);                                             \
  template Var<T> slice(const Var<T>&, int, std::size_t, std::size_t);                                 \
  template Var<T> transpose(const Var<T>&);                                                            \
  template Var<T> reshape(const Var<T>&, Shape);                                                       \
  template Var<T> mean_pool(const Var<T>&, std::size_t);                                               \
  template Var<T> conv1d(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t);      \
  template Var<T> attention(const Var<T>&, const Var<T>&, const Var<T>&, std::span<const Segment>,     \
                            std::size_t, bool);                                                        \
  template Var<T> replace_rows(const Var<T>&, const Var<T>&, std::span<const std::size_t>);            \
  template Var<T> pick(const Var<T>&, std::span<const int>);                                           \
  template Var<T> sum(const Var<T>&);                                                                  \
  template Var<T> mean(const Var<T>&);                                                                 \
  template Var<T> cross_entropy(const Var<T>&, std::span<const int>, std::span<const std::uint8_t>);

ALM_INSTANTIATE_OPS(float)
ALM_INSTANTIATE_OPS(double)

#undef ALM_INSTANTIATE_OPS

}  // namespace alm::core
