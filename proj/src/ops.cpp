#include "multitrans/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Core>

namespace multitrans {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

template <typename T>
Tape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs) {
  auto* tape = Tape<T>::current();
  if (tape == nullptr) return nullptr;
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return tape;
  }
  return nullptr;
}

// Gradient buffer of an input node, or an empty span if it takes no gradient.
template <typename T>
std::span<T> grad_sink(const NodePtr<T>& node) {
  if (!node || !node->requires_grad) return {};
  return node->grad_buffer();
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(s));
  }
}

enum class Broadcast { same, row };

Broadcast broadcast_kind(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Broadcast::same;
  if (b.size() == 1 && !a.empty() && a.back() == b[0]) return Broadcast::row;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

struct AxisSplit {
  std::size_t outer;
  std::size_t extent;
  std::size_t inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                     shape_str(s));
  }
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <typename T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(0.5 * std::numbers::sqrt2)));
}

template <typename T>
T gelu_slope(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.5 * std::numbers::sqrt2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<T> out(m * n);
  MatrixMap<T>(out.data(), m, n).noalias() =
      ConstMatrixMap<T>(a.data().data(), m, k) * ConstMatrixMap<T>(b.data().data(), k, n);
  Tensor<T> result({m, n}, std::move(out));
  if (auto* tape = recording_tape({&a, &b})) {
    auto an = a.node(), bn = b.node();
    tape->record("matmul", result, {an, bn}, [an, bn, m, k, n](std::span<const T> g) {
      ConstMatrixMap<T> dc(g.data(), m, n);
      if (auto da = grad_sink(an); !da.empty()) {
        MatrixMap<T>(da.data(), m, k).noalias() +=
            dc * ConstMatrixMap<T>(bn->data.data(), k, n).transpose();
      }
      if (auto db = grad_sink(bn); !db.empty()) {
        MatrixMap<T>(db.data(), k, n).noalias() +=
            ConstMatrixMap<T>(an->data.data(), m, k).transpose() * dc;
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const auto kind = broadcast_kind(a.shape(), b.shape(), "add");
  const auto n = a.numel(), w = b.numel();
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] += bd[kind == Broadcast::same ? i : i % w];
  Tensor<T> result(a.shape(), std::move(out));
  if (auto* tape = recording_tape({&a, &b})) {
    auto an = a.node(), bn = b.node();
    tape->record("add", result, {an, bn}, [an, bn, n, w](std::span<const T> g) {
      if (auto da = grad_sink(an); !da.empty()) {
        for (std::size_t i = 0; i < n; ++i) da[i] += g[i];
      }
      if (auto db = grad_sink(bn); !db.empty()) {
        for (std::size_t i = 0; i < n; ++i) db[i % w] += g[i];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, scale(b, T(-1)));
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto kind = broadcast_kind(a.shape(), b.shape(), "mul");
  const auto n = a.numel(), w = b.numel();
  const bool same = kind == Broadcast::same;
  std::vector<T> out(n);
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] * bd[same ? i : i % w];
  Tensor<T> result(a.shape(), std::move(out));
  if (auto* tape = recording_tape({&a, &b})) {
    auto an = a.node(), bn = b.node();
    tape->record("mul", result, {an, bn}, [an, bn, n, w, same](std::span<const T> g) {
      if (auto da = grad_sink(an); !da.empty()) {
        for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * bn->data[same ? i : i % w];
      }
      if (auto db = grad_sink(bn); !db.empty()) {
        for (std::size_t i = 0; i < n; ++i) db[same ? i : i % w] += g[i] * an->data[i];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  Tensor<T> result(a.shape(), std::move(out));
  if (auto* tape = recording_tape({&a})) {
    auto an = a.node();
    tape->record("scale", result, {an}, [an, factor](std::span<const T> g) {
      auto da = grad_sink(an);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * factor;
    });
  }
  return result;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(xd[i]);
  Tensor<T> result(x.shape(), std::move(out));
  if (auto* tape = recording_tape({&x})) {
    auto xn = x.node();
    tape->record("gelu", result, {xn}, [xn](std::span<const T> g) {
      auto dx = grad_sink(xn);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * gelu_slope(xn->data[i]);
    });
  }
  return result;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > T(0) ? xd[i] : T(0);
  Tensor<T> result(x.shape(), std::move(out));
  if (auto* tape = recording_tape({&x})) {
    auto xn = x.node();
    tape->record("relu", result, {xn}, [xn](std::span<const T> g) {
      auto dx = grad_sink(xn);
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (xn->data[i] > T(0)) dx[i] += g[i];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation kind) {
  return kind == Activation::gelu ? gelu(x) : relu(x);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (auto v : x.data()) total += v;
  Tensor<T> result({1}, {total});
  if (auto* tape = recording_tape({&x})) {
    auto xn = x.node();
    tape->record("sum", result, {xn}, [xn](std::span<const T> g) {
      for (auto& d : grad_sink(xn)) d += g[0];
    });
  }
  return result;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor<T> result(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (auto* tape = recording_tape({&x})) {
    auto xn = x.node();
    tape->record("reshape", result, {xn}, [xn](std::span<const T> g) {
      auto dx = grad_sink(xn);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  require_rank(x.shape(), 2, "transpose");
  const auto r = x.dim(0), c = x.dim(1);
  std::vector<T> out(r * c);
  const auto xd = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xd[i * c + j];
  }
  Tensor<T> result({c, r}, std::move(out));
  if (auto* tape = recording_tape({&x})) {
    auto xn = x.node();
    tape->record("transpose", result, {xn}, [xn, r, c](std::span<const T> g) {
      auto dx = grad_sink(xn);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += g[j * r + i];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  const auto split = split_axis(first, axis, "concat");
  std::size_t total = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != first.size()) {
      throw ShapeError("concat: rank mismatch " + shape_str(first) + " vs " + shape_str(probe));
    }
    probe[axis] = first[axis];
    if (probe != first) {
      throw ShapeError("concat: shapes " + shape_str(first) + " and " + shape_str(p.shape()) +
                       " disagree off axis " + std::to_string(axis));
    }
    extents.push_back(p.dim(axis));
    total += p.dim(axis);
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  const auto inner = split.inner;
  std::vector<T> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pd = parts[k].data();
    const auto block = extents[k] * inner;
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(pd.begin() + o * block, block, out.begin() + (o * total + offset) * inner);
    }
    offset += extents[k];
  }
  Tensor<T> result(std::move(out_shape), std::move(out));
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  auto* tape = Tape<T>::current();
  if (tape != nullptr && any) {
    std::vector<NodePtr<T>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    tape->record("concat", result, nodes,
                 [nodes, extents, outer = split.outer, inner, total](std::span<const T> g) {
                   std::size_t off = 0;
                   for (std::size_t k = 0; k < nodes.size(); ++k) {
                     const auto block = extents[k] * inner;
                     if (auto d = grad_sink(nodes[k]); !d.empty()) {
                       for (std::size_t o = 0; o < outer; ++o) {
                         const T* src = g.data() + (o * total + off) * inner;
                         for (std::size_t i = 0; i < block; ++i) d[o * block + i] += src[i];
                       }
                     }
                     off += extents[k];
                   }
                 });
  }
  return result;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto split = split_axis(x.shape(), axis, "slice");
  if (length == 0 || start + length > split.extent) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") out of bounds for axis " +
                     std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const auto inner = split.inner, extent = split.extent, outer = split.outer;
  std::vector<T> out(outer * length * inner);
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xd.begin() + (o * extent + start) * inner, length * inner,
                out.begin() + o * length * inner);
  }
  Tensor<T> result(std::move(out_shape), std::move(out));
  if (auto* tape = recording_tape({&x})) {
    auto xn = x.node();
    tape->record("slice", result, {xn},
                 [xn, outer, extent, inner, start, length](std::span<const T> g) {
                   auto dx = grad_sink(xn);
                   for (std::size_t o = 0; o < outer; ++o) {
                     T* dst = dx.data() + (o * extent + start) * inner;
                     const T* src = g.data() + o * length * inner;
                     for (std::size_t i = 0; i < length * inner; ++i) dst[i] += src[i];
                   }
                 });
  }
  return result;
}

template <typename T>
Tensor<T> row(const Tensor<T>& x, std::size_t i) {
  require_rank(x.shape(), 2, "row");
  return reshape(slice(x, 0, i, 1), Shape{x.dim(1)});
}

template <typename T>
Tensor<T> gather(const Tensor<T>& x, std::span<const std::size_t> index, Shape out_shape) {
  if (shape_numel(out_shape) != index.size()) {
    throw ShapeError("gather: " + std::to_string(index.size()) + " indices for output shape " +
                     shape_str(out_shape));
  }
  const auto xd = x.data();
  std::vector<T> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= xd.size()) {
      throw IndexError("gather: index " + std::to_string(index[i]) + " out of range for " +
                       std::to_string(xd.size()) + " elements");
    }
    out[i] = xd[index[i]];
  }
  Tensor<T> result(std::move(out_shape), std::move(out));
  if (auto* tape = recording_tape({&x})) {
    auto xn = x.node();
    std::vector<std::size_t> idx(index.begin(), index.end());
    tape->record("gather", result, {xn}, [xn, idx = std::move(idx)](std::span<const T> g) {
      auto dx = grad_sink(xn);
      for (std::size_t i = 0; i < idx.size(); ++i) dx[idx[i]] += g[i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const auto s = split_axis(x.shape(), axis, "softmax");
  const auto xd = x.data();
  for (auto v : xd) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
  }
  std::vector<T> out(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const auto base = o * s.extent * s.inner + in;
      T mx = xd[base];
      for (std::size_t j = 1; j < s.extent; ++j) mx = std::max(mx, xd[base + j * s.inner]);
      T total = T(0);
      for (std::size_t j = 0; j < s.extent; ++j) {
        const auto e = std::exp(xd[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.extent; ++j) out[base + j * s.inner] /= total;
    }
  }
  Tensor<T> result(x.shape(), std::move(out));
  if (auto* tape = recording_tape({&x})) {
    auto xn = x.node();
    auto yn = result.node();
    tape->record("softmax", result, {xn}, [xn, yn, s](std::span<const T> g) {
      auto dx = grad_sink(xn);
      const auto& y = yn->data;
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const auto base = o * s.extent * s.inner + in;
          T dot = T(0);
          for (std::size_t j = 0; j < s.extent; ++j) {
            dot += g[base + j * s.inner] * y[base + j * s.inner];
          }
          for (std::size_t j = 0; j < s.extent; ++j) {
            const auto p = base + j * s.inner;
            dx[p] += y[p] * (g[p] - dot);
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, std::span<const std::uint8_t> allowed) {
  require_rank(x.shape(), 2, "masked_softmax");
  const auto rows = x.dim(0), cols = x.dim(1);
  if (allowed.size() != rows * cols) {
    throw ShapeError("masked_softmax: mask of " + std::to_string(allowed.size()) +
                     " entries for " + shape_str(x.shape()));
  }
  const auto xd = x.data();
  std::vector<T> out(rows * cols, T(0));
  for (std::size_t i = 0; i < rows; ++i) {
    bool seen = false;
    T mx = T(0);
    for (std::size_t j = 0; j < cols; ++j) {
      const auto v = xd[i * cols + j];
      if (!std::isfinite(v)) throw NumericError("masked_softmax: non-finite input");
      if (!allowed[i * cols + j]) continue;
      mx = seen ? std::max(mx, v) : v;
      seen = true;
    }
    if (!seen) throw ShapeError("masked_softmax: row " + std::to_string(i) + " fully masked");
    T total = T(0);
    for (std::size_t j = 0; j < cols; ++j) {
      if (!allowed[i * cols + j]) continue;
      const auto e = std::exp(xd[i * cols + j] - mx);
      out[i * cols + j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] /= total;
  }
  Tensor<T> result(x.shape(), std::move(out));
  if (auto* tape = recording_tape({&x})) {
    auto xn = x.node();
    auto yn = result.node();
    tape->record("masked_softmax", result, {xn}, [xn, yn, rows, cols](std::span<const T> g) {
      auto dx = grad_sink(xn);
      const auto& y = yn->data;
      for (std::size_t i = 0; i < rows; ++i) {
        T dot = T(0);
        for (std::size_t j = 0; j < cols; ++j) dot += g[i * cols + j] * y[i * cols + j];
        for (std::size_t j = 0; j < cols; ++j) {
          const auto p = i * cols + j;
          dx[p] += y[p] * (g[p] - dot);
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const auto d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw ShapeError("layer_norm: input " + shape_str(x.shape()) + " with gamma " +
                     shape_str(gamma.shape()) + " and beta " + shape_str(beta.shape()));
  }
  const auto rows = x.numel() / d;
  const auto xd = x.data(), gd = gamma.data(), bd = beta.data();
  std::vector<T> normalized(x.numel()), rstd(rows), out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xd.data() + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const auto xh = (xr[j] - mu) * rstd[r];
      normalized[r * d + j] = xh;
      out[r * d + j] = xh * gd[j] + bd[j];
    }
  }
  Tensor<T> result(x.shape(), std::move(out));
  if (auto* tape = recording_tape({&x, &gamma, &beta})) {
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    tape->record("layer_norm", result, {xn, gn, bn},
                 [xn, gn, bn, rows, d, normalized = std::move(normalized),
                  rstd = std::move(rstd)](std::span<const T> g) {
                   auto dx = grad_sink(xn);
                   auto dg = grad_sink(gn);
                   auto db = grad_sink(bn);
                   const auto& gam = gn->data;
                   for (std::size_t r = 0; r < rows; ++r) {
                     const T* gr = g.data() + r * d;
                     const T* xh = normalized.data() + r * d;
                     if (!dg.empty()) {
                       for (std::size_t j = 0; j < d; ++j) dg[j] += gr[j] * xh[j];
                     }
                     if (!db.empty()) {
                       for (std::size_t j = 0; j < d; ++j) db[j] += gr[j];
                     }
                     if (dx.empty()) continue;
                     T mean_dxh = T(0), mean_dxh_xh = T(0);
                     for (std::size_t j = 0; j < d; ++j) {
                       const auto dxh = gr[j] * gam[j];
                       mean_dxh += dxh;
                       mean_dxh_xh += dxh * xh[j];
                     }
                     mean_dxh /= static_cast<T>(d);
                     mean_dxh_xh /= static_cast<T>(d);
                     for (std::size_t j = 0; j < d; ++j) {
                       const auto dxh = gr[j] * gam[j];
                       dx[r * d + j] += rstd[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                     }
                   }
                 });
  }
  return result;
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  require_rank(table.shape(), 2, "embedding");
  const auto vocab = table.dim(0), d = table.dim(1);
  if (ids.empty()) throw ShapeError("embedding: empty id sequence");
  std::vector<T> out(ids.size() * d);
  const auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("embedding: id " + std::to_string(ids[i]) + " out of range for table of " +
                       std::to_string(vocab) + " rows");
    }
    std::copy_n(td.begin() + ids[i] * d, d, out.begin() + i * d);
  }
  Tensor<T> result({ids.size(), d}, std::move(out));
  if (auto* tape = recording_tape({&table})) {
    auto tn = table.node();
    std::vector<std::int32_t> saved(ids.begin(), ids.end());
    tape->record("embedding", result, {tn}, [tn, d, saved = std::move(saved)](std::span<const T> g) {
      auto dt = grad_sink(tn);
      for (std::size_t i = 0; i < saved.size(); ++i) {
        T* dst = dt.data() + static_cast<std::size_t>(saved[i]) * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels,
                        std::span<const T> class_weights) {
  require_rank(logits.shape(), 2, "cross_entropy");
  const auto n = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     shape_str(logits.shape()) + " logits");
  }
  if (!class_weights.empty() && class_weights.size() != classes) {
    throw ShapeError("cross_entropy: class weight count differs from class count");
  }
  const auto z = logits.data();
  std::vector<T> probs(n * classes), weight(n);
  T total = T(0), weight_sum = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw IndexError("cross_entropy: label " + std::to_string(labels[i]) + " out of range for " +
                       std::to_string(classes) + " classes");
    }
    const T* zi = z.data() + i * classes;
    T mx = *std::max_element(zi, zi + classes);
    T se = T(0);
    for (std::size_t c = 0; c < classes; ++c) se += std::exp(zi[c] - mx);
    const T lse = mx + std::log(se);
    for (std::size_t c = 0; c < classes; ++c) probs[i * classes + c] = std::exp(zi[c] - lse);
    weight[i] = class_weights.empty() ? T(1) : class_weights[labels[i]];
    total += weight[i] * (lse - zi[labels[i]]);
    weight_sum += weight[i];
  }
  if (!std::isfinite(total)) throw NumericError("cross_entropy: non-finite loss");
  Tensor<T> result({1}, {total / weight_sum});
  if (auto* tape = recording_tape({&logits})) {
    auto ln = logits.node();
    std::vector<std::int32_t> saved(labels.begin(), labels.end());
    tape->record("cross_entropy", result, {ln},
                 [ln, n, classes, weight_sum, probs = std::move(probs), weight = std::move(weight),
                  saved = std::move(saved)](std::span<const T> g) {
                   auto dz = grad_sink(ln);
                   for (std::size_t i = 0; i < n; ++i) {
                     const T f = g[0] * weight[i] / weight_sum;
                     for (std::size_t c = 0; c < classes; ++c) {
                       const T onehot = static_cast<std::size_t>(saved[i]) == c ? T(1) : T(0);
                       dz[i * classes + c] += f * (probs[i * classes + c] - onehot);
                     }
                   }
                 });
  }
  return result;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T p, std::mt19937_64& rng) {
  if (p <= T(0)) return x;
  if (p >= T(1)) throw ConfigError("dropout probability must be below 1");
  std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = keep(rng) ? T(1) / (T(1) - p) : T(0);
  return mul(x, Tensor<T>(x.shape(), std::move(mask)));
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  auto y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

#define MULTITRANS_INSTANTIATE_OPS(T)                                                          \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> scale(const Tensor<T>&, T);                                              \
  template Tensor<T> gelu(const Tensor<T>&);                                                  \
  template Tensor<T> relu(const Tensor<T>&);                                                  \
  template Tensor<T> activate(const Tensor<T>&, Activation);                                  \
  template Tensor<T> sum(const Tensor<T>&);                                                   \
  template Tensor<T> mean(const Tensor<T>&);                                                  \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                        \
  template Tensor<T> transpose(const Tensor<T>&);                                             \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                      \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);          \
  template Tensor<T> row(const Tensor<T>&, std::size_t);                                      \
  template Tensor<T> gather(const Tensor<T>&, std::span<const std::size_t>, Shape);           \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                  \
  template Tensor<T> masked_softmax(const Tensor<T>&, std::span<const std::uint8_t>);         \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);     \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const std::int32_t>);              \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::int32_t>,           \
                                   std::span<const T>);                                       \
  template Tensor<T> dropout(const Tensor<T>&, T, std::mt19937_64&);                          \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

MULTITRANS_INSTANTIATE_OPS(float)
MULTITRANS_INSTANTIATE_OPS(double)

}  // namespace multitrans
