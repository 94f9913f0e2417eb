#include "mmca/tensor.hpp"

#include "mmca/special.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace mmca {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

int shape_numel(const Shape& s) {
  int n = 1;
  for (int d : s) n *= d;
  return n;
}

namespace {

std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

[[noreturn]] void shape_error(const std::string& op, const Shape& a,
                              const Shape& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + shape_str(a) +
                              " and " + shape_str(b));
}

Shape broadcast_shapes(const std::string& op, const Shape& a, const Shape& b) {
  size_t n = std::max(a.size(), b.size());
  Shape out(n);
  for (size_t i = 0; i < n; ++i) {
    int da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    int db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    if (da != db && da != 1 && db != 1) shape_error(op, a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `s` viewed as broadcast to `target` (0 on broadcast axes),
// left-padded to target rank.
std::vector<int64_t> broadcast_strides(const Shape& s, const Shape& target) {
  auto st = row_major_strides(s);
  std::vector<int64_t> out(target.size(), 0);
  size_t off = target.size() - s.size();
  for (size_t i = 0; i < s.size(); ++i)
    out[off + i] = (s[i] == 1 && target[off + i] != 1) ? 0 : st[i];
  return out;
}

// Accumulates `grad` (shaped `from`) into `out` (shaped `to`, broadcastable
// to `from`).
void reduce_grad(const std::vector<double>& grad, const Shape& from,
                 std::vector<double>& out, const Shape& to) {
  if (from == to) {
    for (size_t i = 0; i < grad.size(); ++i) out[i] += grad[i];
    return;
  }
  auto to_strides = broadcast_strides(to, from);
  int n = shape_numel(from);
  std::vector<int> idx(from.size(), 0);
  int64_t off = 0;
  for (int i = 0; i < n; ++i) {
    out[off] += grad[i];
    for (int ax = static_cast<int>(from.size()) - 1; ax >= 0; --ax) {
      off += to_strides[ax];
      if (++idx[ax] < from[ax]) break;
      idx[ax] = 0;
      off -= static_cast<int64_t>(from[ax]) * to_strides[ax];
    }
  }
}

}  // namespace

void TensorImpl::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
}

Tensor::Tensor(Shape shape, bool requires_grad) {
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data.assign(shape_numel(impl_->shape), 0.0);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int>(data.size()))
    throw std::invalid_argument("Tensor: data size " +
                                std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return Tensor(std::move(shape), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev,
                     bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::normal_distribution<double> nd(0.0, stddev);
  for (double& v : t.data()) v = nd(rng);
  return t;
}

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, double lo, double hi,
                       bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::uniform_real_distribution<double> ud(lo, hi);
  for (double& v : t.data()) v = ud(rng);
  return t;
}

const Shape& Tensor::shape() const { return impl_->shape; }
int Tensor::numel() const { return static_cast<int>(impl_->data.size()); }
int Tensor::dim() const { return static_cast<int>(impl_->shape.size()); }
std::vector<double>& Tensor::data() { return impl_->data; }
const std::vector<double>& Tensor::data() const { return impl_->data; }
std::vector<double>& Tensor::grad() {
  impl_->ensure_grad();
  return impl_->grad;
}
const std::vector<double>& Tensor::grad() const {
  impl_->ensure_grad();
  return impl_->grad;
}
bool Tensor::requires_grad() const { return impl_->requires_grad; }

double Tensor::item() const {
  if (numel() != 1)
    throw std::invalid_argument("item: tensor has " + std::to_string(numel()) +
                                " elements");
  return impl_->data[0];
}

void Tensor::zero_grad() {
  impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor make_op(Shape shape, std::vector<Tensor> parents,
               std::function<void(TensorImpl&)> backward) {
  Tensor t(std::move(shape));
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  t.impl_->requires_grad = rg;
  if (rg) {
    t.impl_->parents = std::move(parents);
    t.impl_->backward_fn = std::move(backward);
  }
  return t;
}

void Tensor::backward() {
  if (numel() != 1)
    throw std::invalid_argument("backward: root must be scalar");
  // Iterative post-order DFS for a topological order.
  std::vector<TensorImpl*> topo;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, size_t>> stack{{impl_.get(), 0}};
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl* p = node->parents[next++].impl();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }
  impl_->ensure_grad();
  impl_->grad[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }
}

// --- elementwise helpers ---------------------------------------------------

namespace {

template <typename FwdFn, typename BwdFn>
Tensor binary_broadcast(const std::string& name, const Tensor& a,
                        const Tensor& b, FwdFn fwd, BwdFn bwd) {
  Shape out_shape = broadcast_shapes(name, a.shape(), b.shape());
  int n = shape_numel(out_shape);
  Tensor a_keep = a, b_keep = b;
  std::vector<double> out(n);
  if (a.shape() == b.shape()) {
    const auto& av = a.data();
    const auto& bv = b.data();
    for (int i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i]);
  } else {
    auto as = broadcast_strides(a.shape(), out_shape);
    auto bs = broadcast_strides(b.shape(), out_shape);
    std::vector<int> idx(out_shape.size(), 0);
    int64_t ao = 0, bo = 0;
    const auto& av = a.data();
    const auto& bv = b.data();
    for (int i = 0; i < n; ++i) {
      out[i] = fwd(av[ao], bv[bo]);
      for (int ax = static_cast<int>(out_shape.size()) - 1; ax >= 0; --ax) {
        ao += as[ax];
        bo += bs[ax];
        if (++idx[ax] < out_shape[ax]) break;
        idx[ax] = 0;
        ao -= static_cast<int64_t>(out_shape[ax]) * as[ax];
        bo -= static_cast<int64_t>(out_shape[ax]) * bs[ax];
      }
    }
  }
  Tensor result = make_op(
      out_shape, {a, b}, [=](TensorImpl& self) {
        Shape os = self.shape;
        int n2 = shape_numel(os);
        std::vector<double> ga(n2), gb(n2);
        auto as2 = broadcast_strides(a_keep.shape(), os);
        auto bs2 = broadcast_strides(b_keep.shape(), os);
        std::vector<int> idx(os.size(), 0);
        int64_t ao = 0, bo = 0;
        const auto& av = a_keep.data();
        const auto& bv = b_keep.data();
        for (int i = 0; i < n2; ++i) {
          auto [da, db] = bwd(av[ao], bv[bo], self.grad[i]);
          ga[i] = da;
          gb[i] = db;
          for (int ax = static_cast<int>(os.size()) - 1; ax >= 0; --ax) {
            ao += as2[ax];
            bo += bs2[ax];
            if (++idx[ax] < os[ax]) break;
            idx[ax] = 0;
            ao -= static_cast<int64_t>(os[ax]) * as2[ax];
            bo -= static_cast<int64_t>(os[ax]) * bs2[ax];
          }
        }
        if (a_keep.requires_grad()) {
          a_keep.impl()->ensure_grad();
          reduce_grad(ga, os, a_keep.impl()->grad, a_keep.shape());
        }
        if (b_keep.requires_grad()) {
          b_keep.impl()->ensure_grad();
          reduce_grad(gb, os, b_keep.impl()->grad, b_keep.shape());
        }
      });
  result.data() = std::move(out);
  return result;
}

template <typename FwdFn, typename BwdFn>
Tensor unary_op(const Tensor& a, FwdFn fwd, BwdFn bwd) {
  Tensor a_keep = a;
  Tensor result = make_op(a.shape(), {a}, [=](TensorImpl& self) {
    if (!a_keep.requires_grad()) return;
    a_keep.impl()->ensure_grad();
    auto& g = a_keep.impl()->grad;
    const auto& x = a_keep.data();
    for (size_t i = 0; i < g.size(); ++i) g[i] += bwd(x[i], self.data[i]) * self.grad[i];
  });
  const auto& x = a.data();
  auto& y = result.data();
  for (size_t i = 0; i < y.size(); ++i) y[i] = fwd(x[i]);
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_broadcast(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g) { return std::pair{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_broadcast(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g) { return std::pair{g, -g}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_broadcast(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g) { return std::pair{g * y, g * x}; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_broadcast(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double x, double y, double g) {
        return std::pair{g / y, -g * x / (y * y)};
      });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op(
      a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary_op(
      a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor softplus(const Tensor& a) {
  return unary_op(
      a,
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor log_t(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor exp_t(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor square(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Tensor lgamma_t(const Tensor& a) {
  return unary_op(
      a, [](double x) { return lgamma_fn(x); },
      [](double x, double) { return digamma_fn(x); });
}

// --- shape ops -------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  // One -1 entry is inferred from the remaining dims.
  int infer = -1;
  int64_t prod = 1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0)
        throw std::invalid_argument("reshape: multiple -1 dims");
      infer = static_cast<int>(i);
    } else {
      prod *= shape[i];
    }
  }
  if (infer >= 0) shape[infer] = static_cast<int>(a.numel() / prod);
  if (shape_numel(shape) != a.numel()) shape_error("reshape", a.shape(), shape);
  Tensor a_keep = a;
  Tensor result = make_op(shape, {a}, [=](TensorImpl& self) {
    if (!a_keep.requires_grad()) return;
    a_keep.impl()->ensure_grad();
    auto& g = a_keep.impl()->grad;
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
  result.data() = a.data();
  return result;
}

namespace {

void permute_copy(const std::vector<double>& src, const Shape& src_shape,
                  int axis0, int axis1, std::vector<double>& dst) {
  Shape dst_shape = src_shape;
  std::swap(dst_shape[axis0], dst_shape[axis1]);
  auto src_strides = row_major_strides(src_shape);
  std::swap(src_strides[axis0], src_strides[axis1]);
  int n = shape_numel(dst_shape);
  std::vector<int> idx(dst_shape.size(), 0);
  int64_t so = 0;
  for (int i = 0; i < n; ++i) {
    dst[i] = src[so];
    for (int ax = static_cast<int>(dst_shape.size()) - 1; ax >= 0; --ax) {
      so += src_strides[ax];
      if (++idx[ax] < dst_shape[ax]) break;
      idx[ax] = 0;
      so -= static_cast<int64_t>(dst_shape[ax]) * src_strides[ax];
    }
  }
}

}  // namespace

Tensor transpose(const Tensor& a, int axis0, int axis1) {
  int r = a.dim();
  if (axis0 < 0) axis0 += r;
  if (axis1 < 0) axis1 += r;
  if (axis0 < 0 || axis0 >= r || axis1 < 0 || axis1 >= r)
    throw std::invalid_argument("transpose: axis out of range for " +
                                shape_str(a.shape()));
  Shape out_shape = a.shape();
  std::swap(out_shape[axis0], out_shape[axis1]);
  Tensor a_keep = a;
  int ax0 = axis0, ax1 = axis1;
  Tensor result = make_op(out_shape, {a}, [=](TensorImpl& self) {
    if (!a_keep.requires_grad()) return;
    a_keep.impl()->ensure_grad();
    std::vector<double> g(self.grad.size());
    permute_copy(self.grad, self.shape, ax0, ax1, g);
    auto& dst = a_keep.impl()->grad;
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  });
  permute_copy(a.data(), a.shape(), axis0, axis1, result.data());
  return result;
}

Tensor broadcast_to(const Tensor& a, Shape shape) {
  Shape check = broadcast_shapes("broadcast_to", a.shape(), shape);
  if (check != shape) shape_error("broadcast_to", a.shape(), shape);
  Tensor a_keep = a;
  Tensor result = make_op(shape, {a}, [=](TensorImpl& self) {
    if (!a_keep.requires_grad()) return;
    a_keep.impl()->ensure_grad();
    reduce_grad(self.grad, self.shape, a_keep.impl()->grad, a_keep.shape());
  });
  auto as = broadcast_strides(a.shape(), shape);
  int n = shape_numel(shape);
  std::vector<int> idx(shape.size(), 0);
  int64_t ao = 0;
  const auto& av = a.data();
  auto& out = result.data();
  for (int i = 0; i < n; ++i) {
    out[i] = av[ao];
    for (int ax = static_cast<int>(shape.size()) - 1; ax >= 0; --ax) {
      ao += as[ax];
      if (++idx[ax] < shape[ax]) break;
      idx[ax] = 0;
      ao -= static_cast<int64_t>(shape[ax]) * as[ax];
    }
  }
  return result;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  int r = parts[0].dim();
  if (axis < 0) axis += r;
  Shape out_shape = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    if (p.dim() != r) shape_error("concat", parts[0].shape(), p.shape());
    for (int i = 0; i < r; ++i)
      if (i != axis && p.shape()[i] != out_shape[i])
        shape_error("concat", parts[0].shape(), p.shape());
    total += p.shape()[axis];
  }
  out_shape[axis] = total;
  // outer = product of dims before axis, inner = product after.
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[i];
  for (int i = axis + 1; i < r; ++i) inner *= out_shape[i];
  std::vector<Tensor> keep = parts;
  Tensor result = make_op(out_shape, parts, [=](TensorImpl& self) {
    int64_t off = 0;
    int64_t row = static_cast<int64_t>(total) * inner;
    for (const auto& p : keep) {
      int64_t pa = static_cast<int64_t>(p.shape()[axis]) * inner;
      if (p.requires_grad()) {
        p.impl()->ensure_grad();
        auto& g = p.impl()->grad;
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t i = 0; i < pa; ++i)
            g[o * pa + i] += self.grad[o * row + off + i];
      }
      off += pa;
    }
  });
  auto& out = result.data();
  int64_t off = 0;
  int64_t row = static_cast<int64_t>(total) * inner;
  for (const auto& p : parts) {
    int64_t pa = static_cast<int64_t>(p.shape()[axis]) * inner;
    const auto& src = p.data();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < pa; ++i)
        out[o * row + off + i] = src[o * pa + i];
    off += pa;
  }
  return result;
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
  int r = a.dim();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r || start < 0 || len < 0 ||
      start + len > a.shape()[axis])
    throw std::invalid_argument("slice: range [" + std::to_string(start) +
                                ", +" + std::to_string(len) +
                                ") out of bounds for " + shape_str(a.shape()));
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.shape()[i];
  for (int i = axis + 1; i < r; ++i) inner *= a.shape()[i];
  int64_t src_row = static_cast<int64_t>(a.shape()[axis]) * inner;
  int64_t dst_row = static_cast<int64_t>(len) * inner;
  Tensor a_keep = a;
  Tensor result = make_op(out_shape, {a}, [=](TensorImpl& self) {
    if (!a_keep.requires_grad()) return;
    a_keep.impl()->ensure_grad();
    auto& g = a_keep.impl()->grad;
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < dst_row; ++i)
        g[o * src_row + start * inner + i] += self.grad[o * dst_row + i];
  });
  const auto& src = a.data();
  auto& out = result.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < dst_row; ++i)
      out[o * dst_row + i] = src[o * src_row + start * inner + i];
  return result;
}

// --- matmul ----------------------------------------------------------------

namespace {

// C[M,N] += A[M,K] * B[K,N], contiguous row-major blocks.
void gemm_acc(const double* a, const double* b, double* c, int m, int k,
              int n, bool transpose_a, bool transpose_b) {
  if (!transpose_a && !transpose_b) {
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) {
        double av = a[i * k + p];
        const double* brow = b + p * n;
        double* crow = c + i * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
  } else if (transpose_a && !transpose_b) {
    // A is stored [K,M]
    for (int p = 0; p < k; ++p)
      for (int i = 0; i < m; ++i) {
        double av = a[p * m + i];
        const double* brow = b + p * n;
        double* crow = c + i * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
  } else if (!transpose_a && transpose_b) {
    // B is stored [N,K]
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        const double* arow = a + i * k;
        const double* brow = b + j * k;
        for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
        c[i * n + j] += acc;
      }
  } else {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += a[p * m + i] * b[j * k + p];
        c[i * n + j] += acc;
      }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() < 2 || b.dim() < 2) shape_error("matmul", a.shape(), b.shape());
  int M = a.shape()[a.dim() - 2], K = a.shape()[a.dim() - 1];
  int Kb = b.shape()[b.dim() - 2], N = b.shape()[b.dim() - 1];
  if (K != Kb) shape_error("matmul", a.shape(), b.shape());
  Shape abatch(a.shape().begin(), a.shape().end() - 2);
  Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  Shape batch = broadcast_shapes("matmul", abatch, bbatch);
  Shape out_shape = batch;
  out_shape.push_back(M);
  out_shape.push_back(N);
  int nbatch = shape_numel(batch);

  // Per-batch element offsets into a and b, honoring broadcast.
  auto batch_offsets = [&](const Shape& own_batch, int64_t mat) {
    std::vector<int64_t> offs(nbatch, 0);
    if (batch.empty()) return offs;
    auto st = broadcast_strides(own_batch, batch);
    std::vector<int> idx(batch.size(), 0);
    int64_t o = 0;
    for (int i = 0; i < nbatch; ++i) {
      offs[i] = o * mat;
      for (int ax = static_cast<int>(batch.size()) - 1; ax >= 0; --ax) {
        o += st[ax];
        if (++idx[ax] < batch[ax]) break;
        idx[ax] = 0;
        o -= static_cast<int64_t>(batch[ax]) * st[ax];
      }
    }
    return offs;
  };
  // broadcast_strides works on elements of the batch shape; matrices are
  // contiguous blocks of size M*K / K*N.
  std::vector<int64_t> aoffs, boffs;
  {
    // Strides here index whole matrices, so divide out the matrix size by
    // computing offsets over the batch shape alone.
    auto st_a = broadcast_strides(abatch, batch);
    auto st_b = broadcast_strides(bbatch, batch);
    aoffs.assign(nbatch, 0);
    boffs.assign(nbatch, 0);
    std::vector<int> idx(batch.size(), 0);
    int64_t oa = 0, ob = 0;
    for (int i = 0; i < nbatch; ++i) {
      aoffs[i] = oa * static_cast<int64_t>(M) * K;
      boffs[i] = ob * static_cast<int64_t>(K) * N;
      for (int ax = static_cast<int>(batch.size()) - 1; ax >= 0; --ax) {
        oa += st_a[ax];
        ob += st_b[ax];
        if (++idx[ax] < batch[ax]) break;
        idx[ax] = 0;
        oa -= static_cast<int64_t>(batch[ax]) * st_a[ax];
        ob -= static_cast<int64_t>(batch[ax]) * st_b[ax];
      }
    }
  }
  (void)batch_offsets;

  Tensor a_keep = a, b_keep = b;
  Tensor result = make_op(out_shape, {a, b}, [=](TensorImpl& self) {
    const int64_t cm = static_cast<int64_t>(M) * N;
    if (a_keep.requires_grad()) {
      a_keep.impl()->ensure_grad();
      auto& ga = a_keep.impl()->grad;
      const auto& bd = b_keep.data();
      // dA = dC * B^T
      for (int i = 0; i < nbatch; ++i)
        gemm_acc(self.grad.data() + i * cm, bd.data() + boffs[i],
                 ga.data() + aoffs[i], M, N, K, false, true);
    }
    if (b_keep.requires_grad()) {
      b_keep.impl()->ensure_grad();
      auto& gb = b_keep.impl()->grad;
      const auto& ad = a_keep.data();
      // dB = A^T * dC
      for (int i = 0; i < nbatch; ++i)
        gemm_acc(ad.data() + aoffs[i], self.grad.data() + i * cm,
                 gb.data() + boffs[i], K, M, N, true, false);
    }
  });
  auto& out = result.data();
  const auto& ad = a.data();
  const auto& bd = b.data();
  const int64_t cm = static_cast<int64_t>(M) * N;
  for (int i = 0; i < nbatch; ++i)
    gemm_acc(ad.data() + aoffs[i], bd.data() + boffs[i], out.data() + i * cm,
             M, K, N, false, false);
  return result;
}

// --- softmax / layer norm --------------------------------------------------

Tensor softmax(const Tensor& a, int axis) {
  int r = a.dim();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw std::invalid_argument("softmax: axis out of range for " +
                                shape_str(a.shape()));
  int len = a.shape()[axis];
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.shape()[i];
  for (int i = axis + 1; i < r; ++i) inner *= a.shape()[i];
  Tensor a_keep = a;
  Tensor result = make_op(a.shape(), {a}, [=](TensorImpl& self) {
    if (!a_keep.requires_grad()) return;
    a_keep.impl()->ensure_grad();
    auto& g = a_keep.impl()->grad;
    const auto& y = self.data;
    const auto& dy = self.grad;
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t in = 0; in < inner; ++in) {
        int64_t base = o * len * inner + in;
        double dot = 0.0;
        for (int j = 0; j < len; ++j)
          dot += y[base + j * inner] * dy[base + j * inner];
        for (int j = 0; j < len; ++j) {
          int64_t k = base + j * inner;
          g[k] += y[k] * (dy[k] - dot);
        }
      }
  });
  const auto& x = a.data();
  auto& y = result.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      int64_t base = o * len * inner + in;
      double mx = x[base];
      for (int j = 1; j < len; ++j) mx = std::max(mx, x[base + j * inner]);
      double denom = 0.0;
      for (int j = 0; j < len; ++j) {
        double e = std::exp(x[base + j * inner] - mx);
        y[base + j * inner] = e;
        denom += e;
      }
      for (int j = 0; j < len; ++j) y[base + j * inner] /= denom;
    }
  return result;
}

Tensor layer_norm(const Tensor& a, const Tensor& scale, const Tensor& shift,
                  double epsilon) {
  int r = a.dim();
  int len = a.shape()[r - 1];
  if (scale.numel() != len || shift.numel() != len)
    shape_error("layer_norm", a.shape(), scale.shape());
  int64_t rows = a.numel() / len;
  Tensor a_keep = a, scale_keep = scale, shift_keep = shift;
  // Cache normalized values and inverse stddev per row for backward.
  auto xhat = std::make_shared<std::vector<double>>(a.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  Tensor result =
      make_op(a.shape(), {a, scale, shift}, [=](TensorImpl& self) {
        const auto& sv = scale_keep.data();
        if (scale_keep.requires_grad()) scale_keep.impl()->ensure_grad();
        if (shift_keep.requires_grad()) shift_keep.impl()->ensure_grad();
        if (a_keep.requires_grad()) a_keep.impl()->ensure_grad();
        for (int64_t row = 0; row < rows; ++row) {
          int64_t base = row * len;
          double mean_g = 0.0, mean_gx = 0.0;
          for (int j = 0; j < len; ++j) {
            double g = self.grad[base + j] * sv[j];
            mean_g += g;
            mean_gx += g * (*xhat)[base + j];
          }
          mean_g /= len;
          mean_gx /= len;
          double is = (*inv_std)[row];
          for (int j = 0; j < len; ++j) {
            double g = self.grad[base + j] * sv[j];
            if (a_keep.requires_grad())
              a_keep.impl()->grad[base + j] +=
                  is * (g - mean_g - (*xhat)[base + j] * mean_gx);
            if (scale_keep.requires_grad())
              scale_keep.impl()->grad[j] +=
                  self.grad[base + j] * (*xhat)[base + j];
            if (shift_keep.requires_grad())
              shift_keep.impl()->grad[j] += self.grad[base + j];
          }
        }
      });
  const auto& x = a.data();
  const auto& sv = scale.data();
  const auto& bv = shift.data();
  auto& y = result.data();
  for (int64_t row = 0; row < rows; ++row) {
    int64_t base = row * len;
    double mean = 0.0;
    for (int j = 0; j < len; ++j) mean += x[base + j];
    mean /= len;
    double var = 0.0;
    for (int j = 0; j < len; ++j) {
      double d = x[base + j] - mean;
      var += d * d;
    }
    var /= len;
    double is = 1.0 / std::sqrt(var + epsilon);
    (*inv_std)[row] = is;
    for (int j = 0; j < len; ++j) {
      double xh = (x[base + j] - mean) * is;
      (*xhat)[base + j] = xh;
      y[base + j] = xh * sv[j] + bv[j];
    }
  }
  return result;
}

Tensor dropout(const Tensor& a, double p, std::mt19937_64& rng, bool train) {
  if (!train || p <= 0.0) return a;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  auto mask = std::make_shared<std::vector<double>>(a.numel());
  std::bernoulli_distribution keep(1.0 - p);
  double scale = 1.0 / (1.0 - p);
  for (auto& m : *mask) m = keep(rng) ? scale : 0.0;
  Tensor a_keep = a;
  Tensor result = make_op(a.shape(), {a}, [=](TensorImpl& self) {
    if (!a_keep.requires_grad()) return;
    a_keep.impl()->ensure_grad();
    auto& g = a_keep.impl()->grad;
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
  });
  const auto& x = a.data();
  auto& y = result.data();
  for (size_t i = 0; i < y.size(); ++i) y[i] = x[i] * (*mask)[i];
  return result;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& indices) {
  if (table.dim() != 2)
    throw std::invalid_argument("embedding_lookup: table must be 2-d, got " +
                                shape_str(table.shape()));
  int V = table.shape()[0], d = table.shape()[1];
  for (int ix : indices)
    if (ix < 0 || ix >= V)
      throw std::invalid_argument("embedding_lookup: index " +
                                  std::to_string(ix) + " out of range [0, " +
                                  std::to_string(V) + ")");
  Shape out_shape{static_cast<int>(indices.size()), d};
  Tensor t_keep = table;
  auto idx = std::make_shared<std::vector<int>>(indices);
  Tensor result = make_op(out_shape, {table}, [=](TensorImpl& self) {
    if (!t_keep.requires_grad()) return;
    t_keep.impl()->ensure_grad();
    auto& g = t_keep.impl()->grad;
    for (size_t i = 0; i < idx->size(); ++i)
      for (int j = 0; j < d; ++j)
        g[(*idx)[i] * d + j] += self.grad[i * d + j];
  });
  const auto& src = table.data();
  auto& out = result.data();
  for (size_t i = 0; i < indices.size(); ++i)
    for (int j = 0; j < d; ++j) out[i * d + j] = src[indices[i] * d + j];
  return result;
}

Tensor sum(const Tensor& a) {
  Tensor a_keep = a;
  Tensor result = make_op(Shape{}, {a}, [=](TensorImpl& self) {
    if (!a_keep.requires_grad()) return;
    a_keep.impl()->ensure_grad();
    auto& g = a_keep.impl()->grad;
    for (double& v : g) v += self.grad[0];
  });
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  result.data()[0] = acc;
  return result;
}

Tensor mean(const Tensor& a) {
  return mul_scalar(sum(a), 1.0 / a.numel());
}

}  // namespace mmca
