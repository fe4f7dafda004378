#pragma once

// Dense row-major tensors with tape-free reverse-mode autodiff.
//
// A Tensor is a cheap handle to a shared graph node. Operations on tensors
// that require gradients record their parents and a backward closure; calling
// backward() on a scalar result walks the graph in reverse topological order
// and accumulates gradients into every node that requires them. Leaves created
// with Tensor::param() keep their gradients until zero_grad().
//
// Only rank 0, 1 and 2 are supported. Rank-1 tensors act as row vectors in
// matrix products.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace domino {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double v);
  static Tensor vector(std::initializer_list<double> values);
  // Leaf that requires gradients.
  static Tensor param(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  // Row/column view used by matrix ops: rank 1 is 1 x n, rank 0 is 1 x 1.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // Direct write access, meant for leaves (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  // Gradient view; empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Reverse-mode sweep from a scalar. Seeds d(self)/d(self) = 1.
  void backward() const;

  // Copy of the values with no graph history.
  Tensor detach() const;
  Tensor reshape(Shape shape) const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T, without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x W + b; b may be undefined.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
// a [m x n] + row [n] broadcast over rows.
Tensor add_bias(const Tensor& a, const Tensor& row);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

enum class Activation { silu, sigmoid, tanh, log_softmax, softmax };
Tensor activate(const Tensor& x, Activation kind);
Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor log_softmax(const Tensor& x);
Tensor softmax(const Tensor& x);

// Row-wise x / rms(x) * gain.
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps = 1e-6);

// Rank-1 concatenation, or column-wise for rank 2 with equal row counts.
Tensor concat(const Tensor& a, const Tensor& b);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
// Row i of a rank-2 tensor as a rank-1 tensor.
Tensor row(const Tensor& a, std::size_t i);
// Stacks rank-1 tensors of equal length into a matrix.
Tensor stack_rows(std::span<const Tensor> rows);
Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> ids);

Tensor sum(const Tensor& a);

// sum_k w_k * -log_softmax(logits_k)[target_k] / sum_k w_k.
Tensor weighted_cross_entropy(const Tensor& logits,
                              std::span<const std::int32_t> targets,
                              std::span<const double> weights);

// Throws NumericError naming `what` if any value is NaN or Inf.
void check_finite(std::span<const double> values, const char* what);

// ---- raw kernels shared with the inference paths --------------------------

// c[m x n] += a[m x k] * b[k x n]
void gemm_acc(const double* a, const double* b, double* c, std::size_t m,
              std::size_t k, std::size_t n);

}  // namespace domino
