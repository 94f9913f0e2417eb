#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace mmca {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int shape_numel(const Shape& s);

struct TensorImpl;

// Dense row-major double tensor with an optional reverse-mode gradient
// record. Copying a Tensor copies the handle, not the storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0,
                      bool requires_grad = false);
  static Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi,
                        bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int numel() const;
  int dim() const;
  std::vector<double>& data();
  const std::vector<double>& data() const;
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  bool requires_grad() const;
  double item() const;

  void zero_grad();
  // Runs reverse-mode accumulation from this scalar tensor.
  void backward();

  TensorImpl* impl() const { return impl_.get(); }

 private:
  std::shared_ptr<TensorImpl> impl_;
  friend Tensor make_op(Shape shape, std::vector<Tensor> parents,
                        std::function<void(TensorImpl&)> backward);
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // lazily sized on backward
  bool requires_grad = false;
  std::vector<Tensor> parents;
  std::function<void(TensorImpl&)> backward_fn;

  void ensure_grad();
};

// --- elementwise / broadcasting -------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor exp_t(const Tensor& a);
Tensor square(const Tensor& a);
Tensor lgamma_t(const Tensor& a);  // gradient uses digamma

// --- shape ops -------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a, int axis0, int axis1);
Tensor broadcast_to(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int start, int len);

// --- linear algebra / nn ---------------------------------------------------

// Batched matrix product: (B..., M, K) x (B..., K, N) -> (B..., M, N);
// leading batch dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& a, int axis);
// Normalizes the last axis to zero mean / unit variance, then applies the
// learnable scale and shift (both shaped like the last axis).
Tensor layer_norm(const Tensor& a, const Tensor& scale, const Tensor& shift,
                  double epsilon = 1e-5);
// Inverted dropout: scales kept entries by 1/(1-p) at train time; identity
// when train is false.
Tensor dropout(const Tensor& a, double p, std::mt19937_64& rng, bool train);
// table: (V, d); returns (indices.size(), d).
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& indices);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

}  // namespace mmca
