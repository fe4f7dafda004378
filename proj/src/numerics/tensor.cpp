#include "domino/numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "domino/numerics/error.hpp"

namespace domino {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

thread_local bool g_grad_enabled = true;

NodePtr new_node(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

// Wires up graph bookkeeping when any parent needs gradients.
Tensor finish(NodePtr out, std::vector<NodePtr> parents,
              std::function<void(Node&)> backward) {
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    if (any) {
      out->requires_grad = true;
      out->parents = std::move(parents);
      out->backward = std::move(backward);
    }
  }
  return Tensor(std::move(out));
}

std::size_t rows_of(const Shape& s) { return s.size() == 2 ? s[0] : 1; }
std::size_t cols_of(const Shape& s) {
  if (s.empty()) return 1;
  return s.back();
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void require_same_size(const Tensor& a, const Tensor& b, const char* op) {
  if (a.size() != b.size() || a.rows() != b.rows()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// c[m x n] += a[m x k] * b[n x k]^T
void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

Tensor unary(const Tensor& x, const char* op,
             const std::function<double(double)>& f,
             // derivative expressed through input x and output y
             const std::function<double(double, double)>& df) {
  require_defined(x, op);
  auto xn = x.node();
  std::vector<double> out(xn->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xn->value[i]);
  auto res = new_node(xn->shape, std::move(out));
  return finish(res, {xn}, [df](Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * df(p.value[i], self.value[i]);
    }
  });
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void check_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value in ") + what);
    }
  }
}

void gemm_acc(const double* a, const double* b, double* c, std::size_t m,
              std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double v) {
  const auto n = shape_size(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, v)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size()) {
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_size(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  if (shape.size() > 2) throw ShapeError("Tensor: rank > 2 unsupported");
  for (auto d : shape) {
    if (d == 0) throw ShapeError("Tensor: zero-sized dimension");
  }
  return Tensor(new_node(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double v) { return from({}, {v}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return from({values.size()}, std::vector<double>(values));
}

Tensor Tensor::param(Shape shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }
std::size_t Tensor::rows() const { return rows_of(node_->shape); }
std::size_t Tensor::cols() const { return cols_of(node_->shape); }

std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->value[r * cols() + c];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return node_->ensure_grad(); }

void Tensor::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  if (size() != 1) throw ShapeError("backward() needs a scalar output");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  // Intermediate gradients start from zero on every sweep; leaves accumulate.
  for (Node* n : order) {
    if (n->backward) n->grad.assign(n->value.size(), 0.0);
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
  for (Node* n : order) {
    if (!n->backward) check_finite(n->grad, "gradient");
  }
}

Tensor Tensor::detach() const {
  return Tensor(new_node(node_->shape, node_->value));
}

Tensor Tensor::reshape(Shape shape) const {
  if (shape_size(shape) != size()) throw ShapeError("reshape: size mismatch");
  auto xn = node_;
  auto res = new_node(std::move(shape), xn->value);
  return finish(res, {xn}, [](Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (b.rank() != 2) throw ShapeError("matmul: rhs must be rank 2");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  Shape s = a.rank() == 2 ? Shape{m, n} : Shape{n};
  auto an = a.node(), bn = b.node();
  return finish(new_node(std::move(s), std::move(out)), {an, bn},
                [m, k, n](Node& self) {
                  auto& pa = *self.parents[0];
                  auto& pb = *self.parents[1];
                  if (pa.requires_grad) {
                    gemm_nt_acc(self.grad.data(), pb.value.data(),
                                pa.ensure_grad().data(), m, n, k);
                  }
                  if (pb.requires_grad) {
                    gemm_tn_acc(pa.value.data(), self.grad.data(),
                                pb.ensure_grad().data(), m, k, n);
                  }
                });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul_nt");
  require_defined(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw ShapeError("matmul_nt: inner dimensions differ " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nt_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  Shape s = a.rank() == 2 ? Shape{m, n} : Shape{n};
  auto an = a.node(), bn = b.node();
  return finish(new_node(std::move(s), std::move(out)), {an, bn},
                [m, k, n](Node& self) {
                  auto& pa = *self.parents[0];
                  auto& pb = *self.parents[1];
                  // dA = dC * B, dB = dC^T * A
                  if (pa.requires_grad) {
                    gemm_acc(self.grad.data(), pb.value.data(),
                             pa.ensure_grad().data(), m, n, k);
                  }
                  if (pb.requires_grad) {
                    gemm_tn_acc(self.grad.data(), pa.value.data(),
                                pb.ensure_grad().data(), m, n, k);
                  }
                });
}

Tensor transpose(const Tensor& a) {
  require_defined(a, "transpose");
  if (a.rank() != 2) throw ShapeError("transpose: rank 2 required");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  auto src = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = src[i * n + j];
  return finish(new_node({n, m}, std::move(out)), {a.node()},
                [m, n](Node& self) {
                  auto& p = *self.parents[0];
                  if (!p.requires_grad) return;
                  auto& g = p.ensure_grad();
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j)
                      g[i * n + j] += self.grad[j * m + i];
                });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  return b.defined() ? add_bias(y, b) : y;
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  require_same_size(a, b, "add");
  std::vector<double> out(a.size());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return finish(new_node(a.shape(), std::move(out)), {a.node(), b.node()},
                [](Node& self) {
                  for (auto& pp : self.parents) {
                    if (!pp->requires_grad) continue;
                    auto& g = pp->ensure_grad();
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                  }
                });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor add_bias(const Tensor& a, const Tensor& row) {
  require_defined(a, "add_bias");
  require_defined(row, "add_bias");
  const std::size_t m = a.rows(), n = a.cols();
  if (row.size() != n) {
    throw ShapeError("add_bias: bias " + shape_str(row.shape()) +
                     " does not match " + shape_str(a.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bv = row.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  return finish(new_node(a.shape(), std::move(out)), {a.node(), row.node()},
                [m, n](Node& self) {
                  auto& pa = *self.parents[0];
                  auto& pb = *self.parents[1];
                  if (pa.requires_grad) {
                    auto& g = pa.ensure_grad();
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                  }
                  if (pb.requires_grad) {
                    auto& g = pb.ensure_grad();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
                  }
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  require_same_size(a, b, "mul");
  std::vector<double> out(a.size());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return finish(new_node(a.shape(), std::move(out)), {a.node(), b.node()},
                [](Node& self) {
                  auto& pa = *self.parents[0];
                  auto& pb = *self.parents[1];
                  if (pa.requires_grad) {
                    auto& g = pa.ensure_grad();
                    for (std::size_t i = 0; i < g.size(); ++i)
                      g[i] += self.grad[i] * pb.value[i];
                  }
                  if (pb.requires_grad) {
                    auto& g = pb.ensure_grad();
                    for (std::size_t i = 0; i < g.size(); ++i)
                      g[i] += self.grad[i] * pa.value[i];
                  }
                });
}

Tensor scale(const Tensor& a, double s) {
  return unary(
      a, "scale", [s](double x) { return s * x; },
      [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(
      a, "add_scalar", [s](double x) { return x + s; },
      [](double, double) { return 1.0; });
}

// ---- activations ----------------------------------------------------------

Tensor silu(const Tensor& x) {
  check_finite(x.data(), "silu input");
  return unary(
      x, "silu", [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor sigmoid(const Tensor& x) {
  check_finite(x.data(), "sigmoid input");
  return unary(
      x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  check_finite(x.data(), "tanh input");
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor log_softmax(const Tensor& x) {
  require_defined(x, "log_softmax");
  check_finite(x.data(), "log_softmax input");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  auto xv = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* r = xv.data() + i * n;
    const double mx = *std::max_element(r, r + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(r[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = r[j] - lse;
  }
  return finish(new_node(x.shape(), std::move(out)), {x.node()},
                [m, n](Node& self) {
                  auto& p = *self.parents[0];
                  if (!p.requires_grad) return;
                  auto& g = p.ensure_grad();
                  for (std::size_t i = 0; i < m; ++i) {
                    double gs = 0.0;
                    for (std::size_t j = 0; j < n; ++j) gs += self.grad[i * n + j];
                    for (std::size_t j = 0; j < n; ++j) {
                      const std::size_t k = i * n + j;
                      g[k] += self.grad[k] - std::exp(self.value[k]) * gs;
                    }
                  }
                });
}

Tensor softmax(const Tensor& x) {
  require_defined(x, "softmax");
  check_finite(x.data(), "softmax input");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  auto xv = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* r = xv.data() + i * n;
    const double mx = *std::max_element(r, r + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(r[j] - mx);
      s += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= s;
  }
  return finish(new_node(x.shape(), std::move(out)), {x.node()},
                [m, n](Node& self) {
                  auto& p = *self.parents[0];
                  if (!p.requires_grad) return;
                  auto& g = p.ensure_grad();
                  for (std::size_t i = 0; i < m; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n; ++j)
                      dot += self.grad[i * n + j] * self.value[i * n + j];
                    for (std::size_t j = 0; j < n; ++j) {
                      const std::size_t k = i * n + j;
                      g[k] += self.value[k] * (self.grad[k] - dot);
                    }
                  }
                });
}

Tensor activate(const Tensor& x, Activation kind) {
  switch (kind) {
    case Activation::silu: return silu(x);
    case Activation::sigmoid: return sigmoid(x);
    case Activation::tanh: return tanh(x);
    case Activation::log_softmax: return log_softmax(x);
    case Activation::softmax: return softmax(x);
  }
  throw ContractError("activate: unknown kind");
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
  require_defined(x, "rms_norm");
  require_defined(gain, "rms_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.size() != n) throw ShapeError("rms_norm: gain size mismatch");
  std::vector<double> out(m * n);
  std::vector<double> inv(m);
  auto xv = x.data();
  auto gv = gain.data();
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += xv[i * n + j] * xv[i * n + j];
    inv[i] = 1.0 / std::sqrt(ss / static_cast<double>(n) + eps);
    for (std::size_t j = 0; j < n; ++j)
      out[i * n + j] = xv[i * n + j] * inv[i] * gv[j];
  }
  return finish(new_node(x.shape(), std::move(out)), {x.node(), gain.node()},
                [m, n, inv = std::move(inv)](Node& self) {
                  auto& px = *self.parents[0];
                  auto& pg = *self.parents[1];
                  const auto& xv = px.value;
                  const auto& gv = pg.value;
                  if (pg.requires_grad) {
                    auto& g = pg.ensure_grad();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j)
                        g[j] += self.grad[i * n + j] * xv[i * n + j] * inv[i];
                  }
                  if (px.requires_grad) {
                    auto& g = px.ensure_grad();
                    for (std::size_t i = 0; i < m; ++i) {
                      // y_j = x_j r g_j, r = (mean(x^2)+eps)^-1/2
                      double dot = 0.0;
                      for (std::size_t j = 0; j < n; ++j)
                        dot += self.grad[i * n + j] * gv[j] * xv[i * n + j];
                      const double r = inv[i];
                      const double c = r * r * r * dot / static_cast<double>(n);
                      for (std::size_t j = 0; j < n; ++j) {
                        const std::size_t k = i * n + j;
                        g[k] += self.grad[k] * gv[j] * r - xv[k] * c;
                      }
                    }
                  }
                });
}

// ---- structural -----------------------------------------------------------

Tensor concat(const Tensor& a, const Tensor& b) {
  require_defined(a, "concat");
  require_defined(b, "concat");
  if (a.rank() != b.rank() || a.rank() == 0) {
    throw ShapeError("concat: ranks differ " + shape_str(a.shape()) + " " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), na = a.cols(), nb = b.cols();
  if (b.rows() != m) throw ShapeError("concat: row counts differ");
  std::vector<double> out(m * (na + nb));
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(av.data() + i * na, na, out.data() + i * (na + nb));
    std::copy_n(bv.data() + i * nb, nb, out.data() + i * (na + nb) + na);
  }
  Shape s = a.rank() == 2 ? Shape{m, na + nb} : Shape{na + nb};
  return finish(new_node(std::move(s), std::move(out)), {a.node(), b.node()},
                [m, na, nb](Node& self) {
                  auto& pa = *self.parents[0];
                  auto& pb = *self.parents[1];
                  const std::size_t w = na + nb;
                  if (pa.requires_grad) {
                    auto& g = pa.ensure_grad();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < na; ++j)
                        g[i * na + j] += self.grad[i * w + j];
                  }
                  if (pb.requires_grad) {
                    auto& g = pb.ensure_grad();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < nb; ++j)
                        g[i * nb + j] += self.grad[i * w + na + j];
                  }
                });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require_defined(a, "concat_rows");
  require_defined(b, "concat_rows");
  if (a.cols() != b.cols()) throw ShapeError("concat_rows: column counts differ");
  const std::size_t na = a.size();
  std::vector<double> out(a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  Shape s{a.rows() + b.rows(), a.cols()};
  return finish(new_node(std::move(s), std::move(out)), {a.node(), b.node()},
                [na](Node& self) {
                  auto& pa = *self.parents[0];
                  auto& pb = *self.parents[1];
                  if (pa.requires_grad) {
                    auto& g = pa.ensure_grad();
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                  }
                  if (pb.requires_grad) {
                    auto& g = pb.ensure_grad();
                    for (std::size_t i = 0; i < g.size(); ++i)
                      g[i] += self.grad[na + i];
                  }
                });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_defined(a, "slice_rows");
  if (begin >= end || end > a.rows()) throw ShapeError("slice_rows: bad range");
  const std::size_t n = a.cols();
  std::vector<double> out(a.data().begin() + begin * n, a.data().begin() + end * n);
  return finish(new_node({end - begin, n}, std::move(out)), {a.node()},
                [begin, n](Node& self) {
                  auto& p = *self.parents[0];
                  if (!p.requires_grad) return;
                  auto& g = p.ensure_grad();
                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                    g[begin * n + i] += self.grad[i];
                });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_defined(a, "slice_cols");
  const std::size_t m = a.rows(), n = a.cols();
  if (begin >= end || end > n) throw ShapeError("slice_cols: bad range");
  const std::size_t w = end - begin;
  std::vector<double> out(m * w);
  auto av = a.data();
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(av.data() + i * n + begin, w, out.data() + i * w);
  Shape s = a.rank() == 2 ? Shape{m, w} : Shape{w};
  return finish(new_node(std::move(s), std::move(out)), {a.node()},
                [m, n, w, begin](Node& self) {
                  auto& p = *self.parents[0];
                  if (!p.requires_grad) return;
                  auto& g = p.ensure_grad();
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j)
                      g[i * n + begin + j] += self.grad[i * w + j];
                });
}

Tensor row(const Tensor& a, std::size_t i) {
  require_defined(a, "row");
  if (a.rank() != 2 || i >= a.rows()) throw ShapeError("row: index out of range");
  return slice_rows(a, i, i + 1).reshape({a.cols()});
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no rows");
  const std::size_t n = rows[0].size();
  std::vector<double> out;
  out.reserve(rows.size() * n);
  std::vector<NodePtr> parents;
  for (const auto& r : rows) {
    if (r.size() != n) throw ShapeError("stack_rows: ragged rows");
    out.insert(out.end(), r.data().begin(), r.data().end());
    parents.push_back(r.node());
  }
  return finish(new_node({rows.size(), n}, std::move(out)), std::move(parents),
                [n](Node& self) {
                  for (std::size_t i = 0; i < self.parents.size(); ++i) {
                    auto& p = *self.parents[i];
                    if (!p.requires_grad) continue;
                    auto& g = p.ensure_grad();
                    for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
                  }
                });
}

Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> ids) {
  require_defined(table, "gather_rows");
  if (table.rank() != 2) throw ShapeError("gather_rows: table must be rank 2");
  if (ids.empty()) throw ShapeError("gather_rows: no ids");
  const std::size_t v = table.rows(), n = table.cols();
  std::vector<double> out(ids.size() * n);
  auto tv = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw ContractError("gather_rows: id " + std::to_string(ids[i]) +
                          " out of range [0," + std::to_string(v) + ")");
    }
    std::copy_n(tv.data() + ids[i] * n, n, out.data() + i * n);
  }
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  return finish(new_node({ids.size(), n}, std::move(out)), {table.node()},
                [n, idv = std::move(idv)](Node& self) {
                  auto& p = *self.parents[0];
                  if (!p.requires_grad) return;
                  auto& g = p.ensure_grad();
                  for (std::size_t i = 0; i < idv.size(); ++i)
                    for (std::size_t j = 0; j < n; ++j)
                      g[idv[i] * n + j] += self.grad[i * n + j];
                });
}

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  double s = 0.0;
  for (double v : a.data()) s += v;
  return finish(new_node({}, {s}), {a.node()}, [](Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (auto& x : g) x += self.grad[0];
  });
}

Tensor weighted_cross_entropy(const Tensor& logits,
                              std::span<const std::int32_t> targets,
                              std::span<const double> weights) {
  require_defined(logits, "weighted_cross_entropy");
  const std::size_t p = logits.rows(), v = logits.cols();
  if (targets.empty()) throw ContractError("weighted_cross_entropy: no positions");
  if (targets.size() != p || weights.size() != p) {
    throw ShapeError("weighted_cross_entropy: " + std::to_string(p) +
                     " logit rows, " + std::to_string(targets.size()) +
                     " targets, " + std::to_string(weights.size()) + " weights");
  }
  double wsum = 0.0;
  for (std::size_t k = 0; k < p; ++k) {
    if (weights[k] < 0.0) throw ContractError("weighted_cross_entropy: negative weight");
    if (targets[k] < 0 || static_cast<std::size_t>(targets[k]) >= v) {
      throw ContractError("weighted_cross_entropy: target out of range");
    }
    wsum += weights[k];
  }
  if (wsum <= 0.0) throw ContractError("weighted_cross_entropy: zero weight sum");

  Tensor lsm = log_softmax(logits);
  auto lv = lsm.data();
  double loss = 0.0;
  for (std::size_t k = 0; k < p; ++k) loss -= weights[k] * lv[k * v + targets[k]];
  loss /= wsum;
  check_finite({&loss, 1}, "cross-entropy loss");

  std::vector<std::int32_t> tv(targets.begin(), targets.end());
  std::vector<double> wv(weights.begin(), weights.end());
  return finish(new_node({}, {loss}), {lsm.node()},
                [v, wsum, tv = std::move(tv), wv = std::move(wv)](Node& self) {
                  auto& pl = *self.parents[0];
                  if (!pl.requires_grad) return;
                  auto& g = pl.ensure_grad();
                  for (std::size_t k = 0; k < tv.size(); ++k)
                    g[k * v + tv[k]] -= self.grad[0] * wv[k] / wsum;
                });
}

}  // namespace domino
