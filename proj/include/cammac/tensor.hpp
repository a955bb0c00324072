#pragma once

// Dense row-major tensors with reverse-mode autodiff on an explicit tape.
// Instantiated at float for training and at double for gradient checks.

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cammac {

class TensorError : public std::runtime_error {
 public:
  explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public TensorError {
 public:
  explicit ShapeError(const std::string& msg) : TensorError(msg) {}
};

class DegenerateMaskError : public TensorError {
 public:
  explicit DegenerateMaskError(const std::string& msg) : TensorError(msg) {}
};

class NonFiniteError : public TensorError {
 public:
  NonFiniteError(const std::string& op, std::size_t index)
      : TensorError("op '" + op + "' produced a non-finite value at flat index " +
                    std::to_string(index)),
        op_name(op) {}
  std::string op_name;
};

// Sentinel standing in for -inf in pre-softmax logits. Finite on purpose so
// the per-op finiteness check stays meaningful; softmax maps it to exactly 0.
template <typename T>
constexpr T mask_sentinel() {
  return static_cast<T>(-1e30);
}

inline std::string shape_str(std::span<const int> shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> data;
  int node = -1;  // handle into the tape that produced this tensor; -1 = constant
  // Set only for tensors whose storage outlives the tape (parameter leaves
  // held by a ParamContext). Lets ops capture a pointer instead of copying.
  bool stable_storage = false;

  TensorT() = default;
  TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != data.size())
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
  }

  static std::size_t numel(std::span<const int> s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  static TensorT zeros(std::vector<int> s) {
    std::size_t n = numel(s);
    return TensorT(std::move(s), std::vector<T>(n, T(0)));
  }
  static TensorT full(std::vector<int> s, T v) {
    std::size_t n = numel(s);
    return TensorT(std::move(s), std::vector<T>(n, v));
  }
  static TensorT scalar(T v) { return TensorT({1}, {v}); }

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  // 2-D accessors; vectors are carried as [1,d] rows throughout the model.
  int rows() const { return rank() == 2 ? shape[0] : 1; }
  int cols() const { return shape.empty() ? 0 : shape.back(); }
  T& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
  T at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

  TensorT detached() const {
    TensorT t = *this;
    t.node = -1;
    t.stable_storage = false;
    return t;
  }
};

namespace detail {

// Either owns a copy of a tensor's data or points at stable storage.
// Copy/move safe: the owned buffer is consulted at use time.
template <typename T>
class ValueCapture {
 public:
  ValueCapture() = default;
  explicit ValueCapture(const TensorT<T>& t) {
    if (t.stable_storage)
      stable_ = t.data.data();
    else
      owned_ = t.data;
  }
  const T* data() const { return stable_ ? stable_ : owned_.data(); }

 private:
  std::vector<T> owned_;
  const T* stable_ = nullptr;
};

}  // namespace detail

// Append-only record of forward operations. Each node owns a closure that
// routes the node's output gradient into its parents' accumulators.
template <typename T>
class GradTape {
 public:
  using BackwardFn = std::function<void(GradTape&, const std::vector<T>&)>;

  GradTape() {
    static std::atomic<std::uint64_t> counter{1};
    id_ = counter.fetch_add(1);
  }
  std::uint64_t id() const { return id_; }

  // Registers a tracked copy of t (a leaf). Leaves have no backward rule;
  // their accumulated gradient is read out after backward().
  TensorT<T> leaf(const TensorT<T>& t) {
    TensorT<T> out = t;
    out.node = record({}, t.size(), nullptr);
    return out;
  }

  int record(std::vector<int> parents, std::size_t out_size, BackwardFn back) {
    if (done_) throw TensorError("tape already consumed by backward()");
    const int id = static_cast<int>(nodes_.size());
    for (int p : parents)
      if (p >= id) throw TensorError("tape order violated: parent does not precede node");
    nodes_.push_back(Node{std::move(parents), out_size, std::move(back)});
    return id;
  }

  void backward(const TensorT<T>& loss) {
    if (loss.size() != 1) throw TensorError("backward() requires a scalar loss, got shape " + shape_str(loss.shape));
    if (loss.node < 0) throw TensorError("backward() on a tensor not attached to this tape");
    if (done_) throw TensorError("tape already consumed by backward()");
    grads_.assign(nodes_.size(), {});
    grads_[loss.node] = {T(1)};
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      if (grads_[i].empty()) continue;  // nothing downstream used this node
      if (nodes_[i].back) nodes_[i].back(*this, grads_[i]);
    }
    done_ = true;
  }

  // Gradient accumulator for a node, allocated on first touch.
  std::vector<T>& grad_accum(int node) {
    auto& g = grads_[node];
    if (g.empty()) g.assign(nodes_[node].out_size, T(0));
    return g;
  }

  // Gradient of a node after backward(); zeros if the node was never reached.
  std::vector<T> grad(int node) const {
    if (!done_) throw TensorError("grad() before backward()");
    if (node < 0 || node >= static_cast<int>(nodes_.size())) throw TensorError("grad() of unknown node");
    if (grads_[node].empty()) return std::vector<T>(nodes_[node].out_size, T(0));
    return grads_[node];
  }

  std::size_t node_count() const { return nodes_.size(); }
  const std::vector<int>& parents(int node) const { return nodes_[node].parents; }
  bool consumed() const { return done_; }

 private:
  struct Node {
    std::vector<int> parents;
    std::size_t out_size;
    BackwardFn back;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
  bool done_ = false;
  std::uint64_t id_ = 0;
};

namespace detail {

template <typename T>
inline void check_finite(const char* op, const TensorT<T>& t) {
  for (std::size_t i = 0; i < t.data.size(); ++i)
    if (!std::isfinite(t.data[i])) throw NonFiniteError(op, i);
}

inline void require_2d(const char* op, std::span<const int> shape) {
  if (shape.size() != 2)
    throw ShapeError(std::string(op) + " expects a 2-D tensor, got shape " + shape_str(shape));
}

}  // namespace detail

// ---- matmul ---------------------------------------------------------------

template <typename T>
TensorT<T> matmul(GradTape<T>& tape, const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_2d("matmul", a.shape);
  detail::require_2d("matmul", b.shape);
  const int m = a.shape[0], k = a.shape[1], k2 = b.shape[0], n = b.shape[1];
  if (k != k2)
    throw ShapeError("matmul inner dimensions differ: " + shape_str(a.shape) + " vs " + shape_str(b.shape));

  TensorT<T> out = TensorT<T>::zeros({m, n});
  const T* ad = a.data.data();
  const T* bd = b.data.data();
  T* od = out.data.data();
  for (int i = 0; i < m; ++i) {
    const T* arow = ad + static_cast<std::size_t>(i) * k;
    T* orow = od + static_cast<std::size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      const T* brow = bd + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  detail::check_finite("matmul", out);

  const int an = a.node, bn = b.node;
  if (an < 0 && bn < 0) return out;
  detail::ValueCapture<T> acap = (bn >= 0) ? detail::ValueCapture<T>(a) : detail::ValueCapture<T>{};
  detail::ValueCapture<T> bcap = (an >= 0) ? detail::ValueCapture<T>(b) : detail::ValueCapture<T>{};
  out.node = tape.record(
      {an, bn}, out.size(),
      [an, bn, m, k, n, acap = std::move(acap), bcap = std::move(bcap)](GradTape<T>& tp, const std::vector<T>& g) {
        if (an >= 0) {
          auto& ga = tp.grad_accum(an);
          // dA = g . B^T
          for (int i = 0; i < m; ++i)
            for (int kk = 0; kk < k; ++kk) {
              T acc = 0;
              const T* grow = g.data() + static_cast<std::size_t>(i) * n;
              const T* brow = bcap.data() + static_cast<std::size_t>(kk) * n;
              for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
              ga[static_cast<std::size_t>(i) * k + kk] += acc;
            }
        }
        if (bn >= 0) {
          auto& gb = tp.grad_accum(bn);
          // dB = A^T . g
          for (int i = 0; i < m; ++i) {
            const T* arow = acap.data() + static_cast<std::size_t>(i) * k;
            const T* grow = g.data() + static_cast<std::size_t>(i) * n;
            for (int kk = 0; kk < k; ++kk) {
              const T av = arow[kk];
              T* brow = gb.data() + static_cast<std::size_t>(kk) * n;
              for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
            }
          }
        }
      });
  return out;
}

// ---- elementwise binary ops ------------------------------------------------

namespace detail {

// Binary ops accept equal shapes, or 2-D operands sharing the last dimension
// where one side has a single row (broadcast over the leading dimension).
enum class Bcast { None, Left, Right };

template <typename T>
inline Bcast binary_mode(const char* op, const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape == b.shape) return Bcast::None;
  if (a.rank() == 2 && b.rank() == 2 && a.shape[1] == b.shape[1]) {
    if (b.shape[0] == 1) return Bcast::Right;
    if (a.shape[0] == 1) return Bcast::Left;
  }
  throw ShapeError(std::string(op) + ": shapes not broadcastable: " + shape_str(a.shape) + " vs " +
                   shape_str(b.shape));
}

// NeedsValues: whether the backward rule reads the forward inputs (mul does,
// add/sub do not); skipping the capture avoids two data copies per node.
template <bool NeedsValues, typename T, typename FwdFn, typename BackFn>
TensorT<T> binary_op(GradTape<T>& tape, const char* name, const TensorT<T>& a, const TensorT<T>& b,
                     FwdFn fwd, BackFn back) {
  const Bcast mode = binary_mode(name, a, b);
  const TensorT<T>& big = (mode == Bcast::Left) ? b : a;
  TensorT<T> out = TensorT<T>::zeros(big.shape);
  const int rows = big.rank() == 2 ? big.shape[0] : 1;
  const std::size_t cols = big.size() / rows;
  for (int r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      const T av = (mode == Bcast::Left) ? a.data[c] : a.data[i];
      const T bv = (mode == Bcast::Right) ? b.data[c] : b.data[i];
      out.data[i] = fwd(av, bv);
    }
  detail::check_finite(name, out);

  const int an = a.node, bn = b.node;
  if (an < 0 && bn < 0) return out;
  ValueCapture<T> acap, bcap;
  if constexpr (NeedsValues) {
    acap = ValueCapture<T>(a);
    bcap = ValueCapture<T>(b);
  }
  out.node = tape.record(
      {an, bn}, out.size(),
      [an, bn, mode, rows, cols, acap = std::move(acap), bcap = std::move(bcap), back](
          GradTape<T>& tp, const std::vector<T>& g) {
        std::vector<T>* ga = an >= 0 ? &tp.grad_accum(an) : nullptr;
        std::vector<T>* gb = bn >= 0 ? &tp.grad_accum(bn) : nullptr;
        for (int r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            const std::size_t ai = (mode == Bcast::Left) ? c : i;
            const std::size_t bi = (mode == Bcast::Right) ? c : i;
            T da = 0, db = 0;
            if constexpr (NeedsValues)
              back(acap.data()[ai], bcap.data()[bi], g[i], da, db);
            else
              back(T(0), T(0), g[i], da, db);
            if (ga) (*ga)[ai] += da;
            if (gb) (*gb)[bi] += db;
          }
      });
  return out;
}

}  // namespace detail

template <typename T>
TensorT<T> add(GradTape<T>& tape, const TensorT<T>& a, const TensorT<T>& b) {
  return detail::binary_op<false>(
      tape, "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T g, T& da, T& db) {
        da = g;
        db = g;
      });
}

template <typename T>
TensorT<T> sub(GradTape<T>& tape, const TensorT<T>& a, const TensorT<T>& b) {
  return detail::binary_op<false>(
      tape, "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T g, T& da, T& db) {
        da = g;
        db = -g;
      });
}

template <typename T>
TensorT<T> mul(GradTape<T>& tape, const TensorT<T>& a, const TensorT<T>& b) {
  return detail::binary_op<true>(
      tape, "mul", a, b, [](T x, T y) { return x * y; },
      [](T x, T y, T g, T& da, T& db) {
        da = g * y;
        db = g * x;
      });
}

// ---- elementwise unary ops -------------------------------------------------

namespace detail {

// NeedsX / NeedsY: whether the backward rule reads the input / the output.
template <bool NeedsX, bool NeedsY, typename T, typename FwdFn, typename BackFn>
TensorT<T> unary_op(GradTape<T>& tape, const char* name, const TensorT<T>& a, FwdFn fwd, BackFn back) {
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = fwd(a.data[i]);
  detail::check_finite(name, out);
  if (a.node < 0) return out;
  const int an = a.node;
  ValueCapture<T> xcap, ycap;
  if constexpr (NeedsX) xcap = ValueCapture<T>(a);
  if constexpr (NeedsY) ycap = ValueCapture<T>(out);
  out.node = tape.record({an}, out.size(),
                         [an, xcap = std::move(xcap), ycap = std::move(ycap), back](
                             GradTape<T>& tp, const std::vector<T>& g) {
                           auto& ga = tp.grad_accum(an);
                           const T* x = NeedsX ? xcap.data() : nullptr;
                           const T* y = NeedsY ? ycap.data() : nullptr;
                           for (std::size_t i = 0; i < g.size(); ++i)
                             ga[i] += g[i] * back(x ? x[i] : T(0), y ? y[i] : T(0));
                         });
  return out;
}

}  // namespace detail

template <typename T>
TensorT<T> relu(GradTape<T>& tape, const TensorT<T>& a) {
  return detail::unary_op<true, false>(
      tape, "relu", a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
TensorT<T> sigmoid(GradTape<T>& tape, const TensorT<T>& a) {
  return detail::unary_op<false, true>(
      tape, "sigmoid", a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
TensorT<T> tanh_op(GradTape<T>& tape, const TensorT<T>& a) {
  return detail::unary_op<false, true>(
      tape, "tanh", a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
TensorT<T> scale(GradTape<T>& tape, const TensorT<T>& a, T k) {
  return detail::unary_op<false, false>(
      tape, "scale", a, [k](T x) { return k * x; }, [k](T, T) { return k; });
}

// ---- softmax over the last dimension ---------------------------------------

// Entries equal to mask_sentinel<T>() are treated as -inf: excluded from the
// max/sum and mapped to exactly zero, with no gradient flow.
template <typename T>
TensorT<T> softmax_lastdim(GradTape<T>& tape, const TensorT<T>& a) {
  if (a.shape.empty() || a.shape.back() < 1)
    throw ShapeError("softmax_lastdim needs a last dimension >= 1, got " + shape_str(a.shape));
  const int cols = a.shape.back();
  const std::size_t rows = a.size() / cols;
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const T sentinel = mask_sentinel<T>();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.data.data() + r * cols;
    T* y = out.data.data() + r * cols;
    T mx = -std::numeric_limits<T>::infinity();
    int live = 0;
    for (int c = 0; c < cols; ++c)
      if (x[c] != sentinel) {
        mx = std::max(mx, x[c]);
        ++live;
      }
    if (live == 0)
      throw DegenerateMaskError("softmax row " + std::to_string(r) + " has every entry masked");
    T sum = 0;
    for (int c = 0; c < cols; ++c) {
      y[c] = (x[c] == sentinel) ? T(0) : std::exp(x[c] - mx);
      sum += y[c];
    }
    for (int c = 0; c < cols; ++c) y[c] /= sum;
  }
  detail::check_finite("softmax", out);

  if (a.node < 0) return out;
  const int an = a.node;
  std::vector<T> yd = out.data;
  std::vector<T> xd = a.data;
  out.node = tape.record({an}, out.size(),
                         [an, rows, cols, sentinel, yd = std::move(yd), xd = std::move(xd)](
                             GradTape<T>& tp, const std::vector<T>& g) {
                           auto& ga = tp.grad_accum(an);
                           for (std::size_t r = 0; r < rows; ++r) {
                             const T* y = yd.data() + r * cols;
                             const T* gr = g.data() + r * cols;
                             T dot = 0;
                             for (int c = 0; c < cols; ++c) dot += gr[c] * y[c];
                             for (int c = 0; c < cols; ++c) {
                               if (xd[r * cols + c] == sentinel) continue;
                               ga[r * cols + c] += y[c] * (gr[c] - dot);
                             }
                           }
                         });
  return out;
}

// Substitutes the mask sentinel into every position (i, j) with j > i + offset.
// Used before softmax; a literal zero there would still receive e^0 weight.
template <typename T>
TensorT<T> causal_mask(GradTape<T>& tape, const TensorT<T>& a, int offset = 0) {
  detail::require_2d("causal_mask", a.shape);
  const int rows = a.shape[0], cols = a.shape[1];
  TensorT<T> out = a.detached();
  for (int i = 0; i < rows; ++i)
    for (int j = i + offset + 1; j < cols; ++j) out.data[static_cast<std::size_t>(i) * cols + j] = mask_sentinel<T>();
  if (a.node < 0) return out;
  const int an = a.node;
  out.node = tape.record({an}, out.size(),
                         [an, rows, cols, offset](GradTape<T>& tp, const std::vector<T>& g) {
                           auto& ga = tp.grad_accum(an);
                           for (int i = 0; i < rows; ++i)
                             for (int j = 0; j < cols && j <= i + offset; ++j)
                               ga[static_cast<std::size_t>(i) * cols + j] += g[static_cast<std::size_t>(i) * cols + j];
                         });
  return out;
}

// ---- concatenation / stacking / slicing ------------------------------------

template <typename T>
TensorT<T> concat_lastdim(GradTape<T>& tape, std::span<const TensorT<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_lastdim of zero parts");
  const int rows = parts[0].rows();
  int total = 0;
  for (const auto& p : parts) {
    detail::require_2d("concat_lastdim", p.shape);
    if (p.shape[0] != rows)
      throw ShapeError("concat_lastdim leading dims differ: " + shape_str(parts[0].shape) + " vs " +
                       shape_str(p.shape));
    total += p.shape[1];
  }
  TensorT<T> out = TensorT<T>::zeros({rows, total});
  std::vector<int> offsets(parts.size());
  std::vector<int> widths(parts.size());
  std::vector<int> nodes(parts.size());
  int off = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    offsets[pi] = off;
    widths[pi] = parts[pi].shape[1];
    nodes[pi] = parts[pi].node;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < widths[pi]; ++c)
        out.at(r, off + c) = parts[pi].at(r, c);
    off += widths[pi];
  }

  bool tracked = false;
  for (int n : nodes) tracked |= (n >= 0);
  if (!tracked) return out;
  out.node = tape.record(std::vector<int>(nodes.begin(), nodes.end()), out.size(),
                         [nodes, offsets, widths, rows, total](GradTape<T>& tp, const std::vector<T>& g) {
                           for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
                             if (nodes[pi] < 0) continue;
                             auto& gp = tp.grad_accum(nodes[pi]);
                             for (int r = 0; r < rows; ++r)
                               for (int c = 0; c < widths[pi]; ++c)
                                 gp[static_cast<std::size_t>(r) * widths[pi] + c] +=
                                     g[static_cast<std::size_t>(r) * total + offsets[pi] + c];
                           }
                         });
  return out;
}

template <typename T>
TensorT<T> concat_lastdim(GradTape<T>& tape, std::initializer_list<TensorT<T>> parts) {
  std::vector<TensorT<T>> v(parts);
  return concat_lastdim(tape, std::span<const TensorT<T>>(v));
}

// Stacks n row vectors [1,d] into an [n,d] matrix.
template <typename T>
TensorT<T> stack_rows(GradTape<T>& tape, std::span<const TensorT<T>> rows) {
  if (rows.empty()) throw ShapeError("stack_rows of zero rows");
  const int d = rows[0].cols();
  for (const auto& r : rows)
    if (r.rows() != 1 || r.cols() != d)
      throw ShapeError("stack_rows expects [1," + std::to_string(d) + "] rows, got " + shape_str(r.shape));
  const int n = static_cast<int>(rows.size());
  TensorT<T> out = TensorT<T>::zeros({n, d});
  std::vector<int> nodes(rows.size());
  for (int i = 0; i < n; ++i) {
    nodes[i] = rows[i].node;
    for (int c = 0; c < d; ++c) out.at(i, c) = rows[i].data[c];
  }
  bool tracked = false;
  for (int nd : nodes) tracked |= (nd >= 0);
  if (!tracked) return out;
  out.node = tape.record(std::vector<int>(nodes.begin(), nodes.end()), out.size(),
                         [nodes, d](GradTape<T>& tp, const std::vector<T>& g) {
                           for (std::size_t i = 0; i < nodes.size(); ++i) {
                             if (nodes[i] < 0) continue;
                             auto& gp = tp.grad_accum(nodes[i]);
                             for (int c = 0; c < d; ++c) gp[c] += g[i * d + c];
                           }
                         });
  return out;
}

template <typename T>
TensorT<T> slice_rows(GradTape<T>& tape, const TensorT<T>& a, int start, int len) {
  detail::require_2d("slice_rows", a.shape);
  const int rows = a.shape[0], cols = a.shape[1];
  if (start < 0 || len < 1 || start + len > rows)
    throw ShapeError("slice_rows [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") out of range for " + shape_str(a.shape));
  TensorT<T> out = TensorT<T>::zeros({len, cols});
  for (int r = 0; r < len; ++r)
    for (int c = 0; c < cols; ++c) out.at(r, c) = a.at(start + r, c);
  if (a.node < 0) return out;
  const int an = a.node;
  out.node = tape.record({an}, out.size(),
                         [an, start, len, cols](GradTape<T>& tp, const std::vector<T>& g) {
                           auto& ga = tp.grad_accum(an);
                           for (int r = 0; r < len; ++r)
                             for (int c = 0; c < cols; ++c)
                               ga[static_cast<std::size_t>(start + r) * cols + c] +=
                                   g[static_cast<std::size_t>(r) * cols + c];
                         });
  return out;
}

template <typename T>
TensorT<T> slice_cols(GradTape<T>& tape, const TensorT<T>& a, int start, int len) {
  detail::require_2d("slice_cols", a.shape);
  const int rows = a.shape[0], cols = a.shape[1];
  if (start < 0 || len < 1 || start + len > cols)
    throw ShapeError("slice_cols [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") out of range for " + shape_str(a.shape));
  TensorT<T> out = TensorT<T>::zeros({rows, len});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < len; ++c) out.at(r, c) = a.at(r, start + c);
  if (a.node < 0) return out;
  const int an = a.node;
  out.node = tape.record({an}, out.size(),
                         [an, rows, cols, start, len](GradTape<T>& tp, const std::vector<T>& g) {
                           auto& ga = tp.grad_accum(an);
                           for (int r = 0; r < rows; ++r)
                             for (int c = 0; c < len; ++c)
                               ga[static_cast<std::size_t>(r) * cols + start + c] +=
                                   g[static_cast<std::size_t>(r) * len + c];
                         });
  return out;
}

// Gathers rows of an embedding table; gradient touches only the gathered rows.
template <typename T>
TensorT<T> embed_rows(GradTape<T>& tape, const TensorT<T>& table, const std::vector<int>& ids) {
  detail::require_2d("embed_rows", table.shape);
  const int vocab = table.shape[0], d = table.shape[1];
  if (ids.empty()) throw ShapeError("embed_rows with no ids");
  for (int id : ids)
    if (id < 0 || id >= vocab)
      throw ShapeError("embed_rows id " + std::to_string(id) + " outside table " + shape_str(table.shape));
  const int n = static_cast<int>(ids.size());
  TensorT<T> out = TensorT<T>::zeros({n, d});
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) out.at(i, c) = table.at(ids[i], c);
  if (table.node < 0) return out;
  const int tn = table.node;
  out.node = tape.record({tn}, out.size(), [tn, ids, d](GradTape<T>& tp, const std::vector<T>& g) {
    auto& gt = tp.grad_accum(tn);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (int c = 0; c < d; ++c) gt[static_cast<std::size_t>(ids[i]) * d + c] += g[i * d + c];
  });
  return out;
}

template <typename T>
TensorT<T> transpose2d(GradTape<T>& tape, const TensorT<T>& a) {
  detail::require_2d("transpose2d", a.shape);
  const int m = a.shape[0], n = a.shape[1];
  TensorT<T> out = TensorT<T>::zeros({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  if (a.node < 0) return out;
  const int an = a.node;
  out.node = tape.record({an}, out.size(), [an, m, n](GradTape<T>& tp, const std::vector<T>& g) {
    auto& ga = tp.grad_accum(an);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ga[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
  });
  return out;
}

template <typename T>
TensorT<T> reshape(GradTape<T>& tape, const TensorT<T>& a, std::vector<int> shape) {
  if (TensorT<T>::numel(shape) != a.size())
    throw ShapeError("reshape " + shape_str(a.shape) + " -> " + shape_str(shape) + " changes element count");
  TensorT<T> out = a.detached();
  out.shape = std::move(shape);
  if (a.node < 0) return out;
  const int an = a.node;
  out.node = tape.record({an}, out.size(), [an](GradTape<T>& tp, const std::vector<T>& g) {
    auto& ga = tp.grad_accum(an);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
  return out;
}

template <typename T>
TensorT<T> sum_all(GradTape<T>& tape, const TensorT<T>& a) {
  T s = 0;
  for (T v : a.data) s += v;
  TensorT<T> out = TensorT<T>::scalar(s);
  detail::check_finite("sum", out);
  if (a.node < 0) return out;
  const int an = a.node;
  const std::size_t n = a.size();
  out.node = tape.record({an}, 1, [an, n](GradTape<T>& tp, const std::vector<T>& g) {
    auto& ga = tp.grad_accum(an);
    for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
  });
  return out;
}

// Cross-entropy of a logit row against a target index, via stable log-sum-exp.
template <typename T>
TensorT<T> cross_entropy_logits(GradTape<T>& tape, const TensorT<T>& logits, int target) {
  const int n = static_cast<int>(logits.size());
  if (logits.rows() != 1)
    throw ShapeError("cross_entropy_logits expects a single logit row, got " + shape_str(logits.shape));
  if (target < 0 || target >= n)
    throw ShapeError("cross_entropy target " + std::to_string(target) + " outside logits " +
                     shape_str(logits.shape));
  T mx = logits.data[0];
  for (T v : logits.data) mx = std::max(mx, v);
  T sum = 0;
  for (T v : logits.data) sum += std::exp(v - mx);
  const T lse = mx + std::log(sum);
  TensorT<T> out = TensorT<T>::scalar(lse - logits.data[target]);
  detail::check_finite("cross_entropy", out);
  if (logits.node < 0) return out;
  const int ln = logits.node;
  std::vector<T> probs(n);
  for (int i = 0; i < n; ++i) probs[i] = std::exp(logits.data[i] - lse);
  out.node = tape.record({ln}, 1, [ln, target, probs = std::move(probs)](GradTape<T>& tp, const std::vector<T>& g) {
    auto& gl = tp.grad_accum(ln);
    for (std::size_t i = 0; i < probs.size(); ++i)
      gl[i] += g[0] * (probs[i] - (static_cast<int>(i) == target ? T(1) : T(0)));
  });
  return out;
}

}  // namespace cammac
