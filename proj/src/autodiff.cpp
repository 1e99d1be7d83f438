#include "corella/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <unordered_set>

namespace corella::ad {

namespace {

std::atomic<std::uint64_t> g_node_id{0};
std::atomic<std::uint64_t> g_param_epoch{0};

std::size_t numel_of(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw AutodiffError("tensor shape must have positive extents, got " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::shared_ptr<Node> make_node(std::vector<int> shape, const char* op,
                                std::vector<std::shared_ptr<Node>> parents) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  const std::size_t count = numel_of(n->shape);
  n->value.assign(count, 0.0);
  n->grad.assign(count, 0.0);
  n->op = op;
  n->parents = std::move(parents);
  for (const auto& p : n->parents) {
    if (p->requires_grad) n->requires_grad = true;
  }
  n->id = ++g_node_id;
  n->param_epoch = g_param_epoch.load();
  return n;
}

void check_finite(const Node& n) {
  for (double v : n.value) {
    if (!std::isfinite(v)) {
      throw AutodiffError(std::string("op '") + n.op + "': produced a non-finite value");
    }
  }
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.shape().size() != 2) {
    throw AutodiffError(std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw AutodiffError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }
}

// Rows/cols with rank-1 tensors treated as a single row.
int row_count(const Node& n) { return n.shape.size() == 2 ? n.shape[0] : 1; }
int col_count(const Node& n) {
  if (n.shape.empty()) return 1;
  return n.shape.back();
}

}  // namespace

int Node::rows() const { return row_count(*this); }
int Node::cols() const { return col_count(*this); }

std::string shape_str(const std::vector<int>& shape) {
  if (shape.empty()) return "[]";
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::uint64_t param_epoch() { return g_param_epoch.load(); }

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::param(std::vector<int> shape, std::vector<double> values) {
  auto n = make_node(std::move(shape), "leaf", {});
  if (values.size() != n->numel()) {
    throw AutodiffError("leaf: value count " + std::to_string(values.size()) +
                        " does not match shape " + shape_str(n->shape));
  }
  n->value = std::move(values);
  n->requires_grad = true;
  check_finite(*n);
  return Tensor(std::move(n));
}

Tensor Tensor::constant(std::vector<int> shape, std::vector<double> values) {
  auto n = make_node(std::move(shape), "leaf", {});
  if (values.size() != n->numel()) {
    throw AutodiffError("leaf: value count " + std::to_string(values.size()) +
                        " does not match shape " + shape_str(n->shape));
  }
  n->value = std::move(values);
  check_finite(*n);
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return Tensor::constant({}, {v}); }

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto n = make_node(std::move(shape), "leaf", {});
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev, bool requires_grad) {
  auto n = make_node(std::move(shape), "leaf", {});
  for (double& v : n->value) v = rng.normal(0.0, stddev);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

double Tensor::scalar_value() const {
  if (!node_->shape.empty()) {
    throw AutodiffError("scalar_value: tensor has shape " + shape_str(node_->shape));
  }
  return node_->value[0];
}

void Tensor::set_value(std::size_t i, double v) {
  node_->value.at(i) = v;
  ++g_param_epoch;
}

void Tensor::apply_update(const std::function<void(std::vector<double>&)>& fn) {
  fn(node_->value);
  check_finite(*node_);
  ++g_param_epoch;
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

// ---- elementwise ------------------------------------------------------------

namespace {

Tensor unary_elementwise(const Tensor& a, const char* op, double (*f)(double),
                         double (*df)(double)) {
  auto n = make_node(a.shape(), op, {a.ptr()});
  const auto& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) n->value[i] = f(x[i]);
  check_finite(*n);
  Node* pa = a.node();
  n->backprop = [pa, df](Node& self) {
    if (!pa->requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      pa->grad[i] += self.grad[i] * df(pa->value[i]);
    }
  };
  return Tensor(std::move(n));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto n = make_node(a.shape(), "add", {a.ptr(), b.ptr()});
  for (std::size_t i = 0; i < n->numel(); ++i) n->value[i] = a.value()[i] + b.value()[i];
  check_finite(*n);
  Node* pa = a.node();
  Node* pb = b.node();
  n->backprop = [pa, pb](Node& self) {
    if (pa->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    if (pb->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i];
  };
  return Tensor(std::move(n));
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  require_matrix(m, "add_rowvec");
  if (v.shape().size() != 1 || v.shape()[0] != m.cols()) {
    throw AutodiffError("add_rowvec: shape mismatch " + shape_str(m.shape()) + " vs " +
                        shape_str(v.shape()));
  }
  auto n = make_node(m.shape(), "add_rowvec", {m.ptr(), v.ptr()});
  const int r = m.rows(), c = m.cols();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) n->value[i * c + j] = m.value()[i * c + j] + v.value()[j];
  check_finite(*n);
  Node* pm = m.node();
  Node* pv = v.node();
  n->backprop = [pm, pv, r, c](Node& self) {
    if (pm->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pm->grad[i] += self.grad[i];
    if (pv->requires_grad)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) pv->grad[j] += self.grad[i * c + j];
  };
  return Tensor(std::move(n));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto n = make_node(a.shape(), "sub", {a.ptr(), b.ptr()});
  for (std::size_t i = 0; i < n->numel(); ++i) n->value[i] = a.value()[i] - b.value()[i];
  check_finite(*n);
  Node* pa = a.node();
  Node* pb = b.node();
  n->backprop = [pa, pb](Node& self) {
    if (pa->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    if (pb->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
  };
  return Tensor(std::move(n));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto n = make_node(a.shape(), "mul", {a.ptr(), b.ptr()});
  for (std::size_t i = 0; i < n->numel(); ++i) n->value[i] = a.value()[i] * b.value()[i];
  check_finite(*n);
  Node* pa = a.node();
  Node* pb = b.node();
  n->backprop = [pa, pb](Node& self) {
    if (pa->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->value[i];
    if (pb->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->value[i];
  };
  return Tensor(std::move(n));
}

Tensor mul_rowvec(const Tensor& m, const Tensor& v) {
  require_matrix(m, "mul_rowvec");
  if (v.shape().size() != 1 || v.shape()[0] != m.cols()) {
    throw AutodiffError("mul_rowvec: shape mismatch " + shape_str(m.shape()) + " vs " +
                        shape_str(v.shape()));
  }
  auto n = make_node(m.shape(), "mul_rowvec", {m.ptr(), v.ptr()});
  const int r = m.rows(), c = m.cols();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) n->value[i * c + j] = m.value()[i * c + j] * v.value()[j];
  check_finite(*n);
  Node* pm = m.node();
  Node* pv = v.node();
  n->backprop = [pm, pv, r, c](Node& self) {
    if (pm->requires_grad)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) pm->grad[i * c + j] += self.grad[i * c + j] * pv->value[j];
    if (pv->requires_grad)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) pv->grad[j] += self.grad[i * c + j] * pm->value[i * c + j];
  };
  return Tensor(std::move(n));
}

Tensor scale(const Tensor& a, double c) {
  auto n = make_node(a.shape(), "scale", {a.ptr()});
  for (std::size_t i = 0; i < n->numel(); ++i) n->value[i] = a.value()[i] * c;
  check_finite(*n);
  Node* pa = a.node();
  n->backprop = [pa, c](Node& self) {
    if (!pa->requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * c;
  };
  return Tensor(std::move(n));
}

// ---- matrix ops -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw AutodiffError("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }
  const int m = a.rows(), k = a.cols(), p = b.cols();
  auto n = make_node({m, p}, "matmul", {a.ptr(), b.ptr()});
  {
    const double* A = a.value().data();
    const double* B = b.value().data();
    double* C = n->value.data();
    for (int i = 0; i < m; ++i) {
      double* crow = C + static_cast<std::size_t>(i) * p;
      for (int kk = 0; kk < k; ++kk) {
        const double aik = A[static_cast<std::size_t>(i) * k + kk];
        if (aik == 0.0) continue;
        const double* brow = B + static_cast<std::size_t>(kk) * p;
        for (int j = 0; j < p; ++j) crow[j] += aik * brow[j];
      }
    }
  }
  check_finite(*n);
  Node* pa = a.node();
  Node* pb = b.node();
  n->backprop = [pa, pb, m, k, p](Node& self) {
    const double* G = self.grad.data();
    if (pa->requires_grad) {
      // dA = G * B^T
      const double* B = pb->value.data();
      double* dA = pa->grad.data();
      for (int i = 0; i < m; ++i) {
        const double* grow = G + static_cast<std::size_t>(i) * p;
        double* darow = dA + static_cast<std::size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
          const double* brow = B + static_cast<std::size_t>(kk) * p;
          double acc = 0.0;
          for (int j = 0; j < p; ++j) acc += grow[j] * brow[j];
          darow[kk] += acc;
        }
      }
    }
    if (pb->requires_grad) {
      // dB = A^T * G
      const double* A = pa->value.data();
      double* dB = pb->grad.data();
      for (int i = 0; i < m; ++i) {
        const double* grow = G + static_cast<std::size_t>(i) * p;
        for (int kk = 0; kk < k; ++kk) {
          const double aik = A[static_cast<std::size_t>(i) * k + kk];
          if (aik == 0.0) continue;
          double* dbrow = dB + static_cast<std::size_t>(kk) * p;
          for (int j = 0; j < p; ++j) dbrow[j] += aik * grow[j];
        }
      }
    }
  };
  return Tensor(std::move(n));
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const int r = a.rows(), c = a.cols();
  auto n = make_node({c, r}, "transpose", {a.ptr()});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) n->value[static_cast<std::size_t>(j) * r + i] = a.value()[static_cast<std::size_t>(i) * c + j];
  Node* pa = a.node();
  n->backprop = [pa, r, c](Node& self) {
    if (!pa->requires_grad) return;
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        pa->grad[static_cast<std::size_t>(i) * c + j] += self.grad[static_cast<std::size_t>(j) * r + i];
  };
  return Tensor(std::move(n));
}

// ---- activations ------------------------------------------------------------

namespace {
double sigmoid_f(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double sigmoid_df(double x) {
  const double s = sigmoid_f(x);
  return s * (1.0 - s);
}
double relu_f(double x) { return x > 0.0 ? x : 0.0; }
double relu_df(double x) { return x > 0.0 ? 1.0 : 0.0; }
constexpr double kInvSqrt2 = 0.7071067811865475244;
double gelu_f(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
double gelu_df(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}
double log_df(double x) { return 1.0 / x; }
}  // namespace

Tensor sigmoid(const Tensor& a) { return unary_elementwise(a, "sigmoid", sigmoid_f, sigmoid_df); }
Tensor relu(const Tensor& a) { return unary_elementwise(a, "relu", relu_f, relu_df); }
Tensor gelu(const Tensor& a) { return unary_elementwise(a, "gelu", gelu_f, gelu_df); }

Tensor log(const Tensor& a) {
  for (double v : a.value()) {
    if (v <= 0.0) throw AutodiffError("log: input must be positive");
  }
  return unary_elementwise(
      a, "log", +[](double x) { return std::log(x); }, log_df);
}

// ---- row-structured ops -------------------------------------------------------

Tensor softmax_rows(const Tensor& a) {
  if (a.shape().empty()) throw AutodiffError("softmax_rows: scalar input " + shape_str(a.shape()));
  const int r = a.rows(), c = a.cols();
  auto n = make_node(a.shape(), "softmax_rows", {a.ptr()});
  for (int i = 0; i < r; ++i) {
    const double* x = a.value().data() + static_cast<std::size_t>(i) * c;
    double* y = n->value.data() + static_cast<std::size_t>(i) * c;
    double mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (int j = 0; j < c; ++j) y[j] /= sum;
  }
  check_finite(*n);
  Node* pa = a.node();
  n->backprop = [pa, r, c](Node& self) {
    if (!pa->requires_grad) return;
    for (int i = 0; i < r; ++i) {
      const double* y = self.value.data() + static_cast<std::size_t>(i) * c;
      const double* dy = self.grad.data() + static_cast<std::size_t>(i) * c;
      double* dx = pa->grad.data() + static_cast<std::size_t>(i) * c;
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += dy[j] * y[j];
      for (int j = 0; j < c; ++j) dx[j] += y[j] * (dy[j] - dot);
    }
  };
  return Tensor(std::move(n));
}

Tensor layer_norm_rows(const Tensor& a, double eps) {
  if (a.shape().empty()) throw AutodiffError("layer_norm_rows: scalar input");
  const int r = a.rows(), c = a.cols();
  auto n = make_node(a.shape(), "layer_norm_rows", {a.ptr()});
  std::vector<double> inv_std(r);
  for (int i = 0; i < r; ++i) {
    const double* x = a.value().data() + static_cast<std::size_t>(i) * c;
    double* y = n->value.data() + static_cast<std::size_t>(i) * c;
    double mean = 0.0;
    for (int j = 0; j < c; ++j) mean += x[j];
    mean /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= c;
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (int j = 0; j < c; ++j) y[j] = (x[j] - mean) * inv;
  }
  check_finite(*n);
  Node* pa = a.node();
  n->backprop = [pa, r, c, inv_std = std::move(inv_std)](Node& self) {
    if (!pa->requires_grad) return;
    for (int i = 0; i < r; ++i) {
      const double* y = self.value.data() + static_cast<std::size_t>(i) * c;
      const double* dy = self.grad.data() + static_cast<std::size_t>(i) * c;
      double* dx = pa->grad.data() + static_cast<std::size_t>(i) * c;
      double mean_dy = 0.0, mean_dyy = 0.0;
      for (int j = 0; j < c; ++j) {
        mean_dy += dy[j];
        mean_dyy += dy[j] * y[j];
      }
      mean_dy /= c;
      mean_dyy /= c;
      for (int j = 0; j < c; ++j) dx[j] += inv_std[i] * (dy[j] - mean_dy - y[j] * mean_dyy);
    }
  };
  return Tensor(std::move(n));
}

Tensor gather_rows(const Tensor& table, std::vector<int> indices) {
  require_matrix(table, "gather_rows");
  const int rows = table.rows(), c = table.cols();
  for (int idx : indices) {
    if (idx < 0 || idx >= rows) {
      throw AutodiffError("gather_rows: index " + std::to_string(idx) + " out of range [0," +
                          std::to_string(rows) + ")");
    }
  }
  const int k = static_cast<int>(indices.size());
  if (k == 0) throw AutodiffError("gather_rows: empty index list");
  auto n = make_node({k, c}, "gather_rows", {table.ptr()});
  for (int i = 0; i < k; ++i) {
    const double* src = table.value().data() + static_cast<std::size_t>(indices[i]) * c;
    std::copy(src, src + c, n->value.data() + static_cast<std::size_t>(i) * c);
  }
  Node* pt = table.node();
  n->backprop = [pt, c, idx = std::move(indices)](Node& self) {
    if (!pt->requires_grad) return;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const double* g = self.grad.data() + i * c;
      double* dst = pt->grad.data() + static_cast<std::size_t>(idx[i]) * c;
      for (int j = 0; j < c; ++j) dst[j] += g[j];
    }
  };
  return Tensor(std::move(n));
}

Tensor slice_cols(const Tensor& a, int start, int len) {
  require_matrix(a, "slice_cols");
  const int r = a.rows(), c = a.cols();
  if (start < 0 || len <= 0 || start + len > c) {
    throw AutodiffError("slice_cols: range [" + std::to_string(start) + "," +
                        std::to_string(start + len) + ") outside width " + std::to_string(c));
  }
  auto n = make_node({r, len}, "slice_cols", {a.ptr()});
  for (int i = 0; i < r; ++i) {
    const double* src = a.value().data() + static_cast<std::size_t>(i) * c + start;
    std::copy(src, src + len, n->value.data() + static_cast<std::size_t>(i) * len);
  }
  Node* pa = a.node();
  n->backprop = [pa, r, c, start, len](Node& self) {
    if (!pa->requires_grad) return;
    for (int i = 0; i < r; ++i) {
      const double* g = self.grad.data() + static_cast<std::size_t>(i) * len;
      double* dst = pa->grad.data() + static_cast<std::size_t>(i) * c + start;
      for (int j = 0; j < len; ++j) dst[j] += g[j];
    }
  };
  return Tensor(std::move(n));
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_matrix(a, "concat_cols");
  require_matrix(b, "concat_cols");
  if (a.rows() != b.rows()) {
    throw AutodiffError("concat_cols: shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }
  const int r = a.rows(), ca = a.cols(), cb = b.cols();
  auto n = make_node({r, ca + cb}, "concat_cols", {a.ptr(), b.ptr()});
  for (int i = 0; i < r; ++i) {
    double* dst = n->value.data() + static_cast<std::size_t>(i) * (ca + cb);
    std::copy_n(a.value().data() + static_cast<std::size_t>(i) * ca, ca, dst);
    std::copy_n(b.value().data() + static_cast<std::size_t>(i) * cb, cb, dst + ca);
  }
  Node* pa = a.node();
  Node* pb = b.node();
  n->backprop = [pa, pb, r, ca, cb](Node& self) {
    for (int i = 0; i < r; ++i) {
      const double* g = self.grad.data() + static_cast<std::size_t>(i) * (ca + cb);
      if (pa->requires_grad) {
        double* da = pa->grad.data() + static_cast<std::size_t>(i) * ca;
        for (int j = 0; j < ca; ++j) da[j] += g[j];
      }
      if (pb->requires_grad) {
        double* db = pb->grad.data() + static_cast<std::size_t>(i) * cb;
        for (int j = 0; j < cb; ++j) db[j] += g[ca + j];
      }
    }
  };
  return Tensor(std::move(n));
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require_matrix(a, "concat_rows");
  require_matrix(b, "concat_rows");
  if (a.cols() != b.cols()) {
    throw AutodiffError("concat_rows: shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }
  const int ra = a.rows(), rb = b.rows(), c = a.cols();
  auto n = make_node({ra + rb, c}, "concat_rows", {a.ptr(), b.ptr()});
  std::copy(a.value().begin(), a.value().end(), n->value.begin());
  std::copy(b.value().begin(), b.value().end(), n->value.begin() + a.numel());
  Node* pa = a.node();
  Node* pb = b.node();
  const std::size_t na = a.numel();
  n->backprop = [pa, pb, na](Node& self) {
    if (pa->requires_grad)
      for (std::size_t i = 0; i < na; ++i) pa->grad[i] += self.grad[i];
    if (pb->requires_grad)
      for (std::size_t i = na; i < self.grad.size(); ++i) pb->grad[i - na] += self.grad[i];
  };
  return Tensor(std::move(n));
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (numel_of(shape) != a.numel()) {
    throw AutodiffError("reshape: shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(shape));
  }
  auto n = make_node(std::move(shape), "reshape", {a.ptr()});
  n->value = a.value();
  Node* pa = a.node();
  n->backprop = [pa](Node& self) {
    if (!pa->requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
  };
  return Tensor(std::move(n));
}

// ---- reductions ---------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
  auto n = make_node({}, "sum_all", {a.ptr()});
  double acc = 0.0;
  for (double v : a.value()) acc += v;
  n->value[0] = acc;
  check_finite(*n);
  Node* pa = a.node();
  n->backprop = [pa](Node& self) {
    if (!pa->requires_grad) return;
    const double g = self.grad[0];
    for (double& d : pa->grad) d += g;
  };
  return Tensor(std::move(n));
}

Tensor mean_all(const Tensor& a) {
  auto n = make_node({}, "mean_all", {a.ptr()});
  double acc = 0.0;
  for (double v : a.value()) acc += v;
  const double inv = 1.0 / static_cast<double>(a.numel());
  n->value[0] = acc * inv;
  check_finite(*n);
  Node* pa = a.node();
  n->backprop = [pa, inv](Node& self) {
    if (!pa->requires_grad) return;
    const double g = self.grad[0] * inv;
    for (double& d : pa->grad) d += g;
  };
  return Tensor(std::move(n));
}

Tensor row_sums(const Tensor& a) {
  require_matrix(a, "row_sums");
  const int r = a.rows(), c = a.cols();
  auto n = make_node({r}, "row_sums", {a.ptr()});
  for (int i = 0; i < r; ++i) {
    double acc = 0.0;
    const double* x = a.value().data() + static_cast<std::size_t>(i) * c;
    for (int j = 0; j < c; ++j) acc += x[j];
    n->value[i] = acc;
  }
  check_finite(*n);
  Node* pa = a.node();
  n->backprop = [pa, r, c](Node& self) {
    if (!pa->requires_grad) return;
    for (int i = 0; i < r; ++i) {
      const double g = self.grad[i];
      double* dx = pa->grad.data() + static_cast<std::size_t>(i) * c;
      for (int j = 0; j < c; ++j) dx[j] += g;
    }
  };
  return Tensor(std::move(n));
}

Tensor l2_norm(const Tensor& a) {
  auto n = make_node({}, "l2_norm", {a.ptr()});
  double acc = 0.0;
  for (double v : a.value()) acc += v * v;
  n->value[0] = std::sqrt(acc);
  check_finite(*n);
  Node* pa = a.node();
  n->backprop = [pa](Node& self) {
    if (!pa->requires_grad) return;
    const double norm = self.value[0];
    if (norm == 0.0) return;  // subgradient 0 at the origin
    const double g = self.grad[0] / norm;
    for (std::size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += g * pa->value[i];
  };
  return Tensor(std::move(n));
}

Tensor pow_const(const Tensor& a, double e) {
  const bool integer_exp = e == std::floor(e);
  for (double v : a.value()) {
    if (v < 0.0 && !integer_exp) {
      throw AutodiffError("pow_const: negative base with non-integer exponent");
    }
  }
  auto n = make_node(a.shape(), "pow_const", {a.ptr()});
  for (std::size_t i = 0; i < n->numel(); ++i) n->value[i] = std::pow(a.value()[i], e);
  check_finite(*n);
  Node* pa = a.node();
  n->backprop = [pa, e](Node& self) {
    if (!pa->requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double x = pa->value[i];
      double d;
      if (x == 0.0) {
        d = (e == 1.0) ? 1.0 : 0.0;  // subgradient choice for e < 1
      } else {
        d = e * std::pow(x, e - 1.0);
      }
      pa->grad[i] += self.grad[i] * d;
    }
  };
  return Tensor(std::move(n));
}

// ---- composites -----------------------------------------------------------------

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal) {
  require_matrix(q, "attention");
  require_matrix(k, "attention");
  require_matrix(v, "attention");
  if (q.cols() != k.cols() || k.rows() != v.rows()) {
    throw AutodiffError("attention: shape mismatch q" + shape_str(q.shape()) + " k" +
                        shape_str(k.shape()) + " v" + shape_str(v.shape()));
  }
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(q.cols())));
  if (causal) {
    const int lq = q.rows(), lk = k.rows();
    std::vector<double> mask(static_cast<std::size_t>(lq) * lk, 0.0);
    for (int i = 0; i < lq; ++i)
      for (int j = i + 1; j < lk; ++j) mask[static_cast<std::size_t>(i) * lk + j] = -1e9;
    scores = add(scores, Tensor::constant({lq, lk}, std::move(mask)));
  }
  return matmul(softmax_rows(scores), v);
}

Tensor bce_mean(const Tensor& probs, const std::vector<double>& labels) {
  if (probs.numel() != labels.size()) {
    throw AutodiffError("bce_mean: " + std::to_string(probs.numel()) + " probs vs " +
                        std::to_string(labels.size()) + " labels");
  }
  static constexpr double kEps = 1e-12;
  auto n = make_node({}, "bce_mean", {probs.ptr()});
  const std::size_t count = labels.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double p = std::clamp(probs.value()[i], kEps, 1.0 - kEps);
    const double y = labels[i];
    acc += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  n->value[0] = acc / static_cast<double>(count);
  check_finite(*n);
  Node* pp = probs.node();
  n->backprop = [pp, labels, count](Node& self) {
    if (!pp->requires_grad) return;
    const double g = self.grad[0] / static_cast<double>(count);
    for (std::size_t i = 0; i < count; ++i) {
      const double raw = pp->value[i];
      if (raw < kEps || raw > 1.0 - kEps) continue;  // clamped: constant region
      pp->grad[i] += g * (-labels[i] / raw + (1.0 - labels[i]) / (1.0 - raw));
    }
  };
  return Tensor(std::move(n));
}

Tensor cross_entropy_logits(const Tensor& logits, int target) {
  const int v = static_cast<int>(logits.numel());
  if (logits.shape().size() == 2 && logits.rows() != 1) {
    throw AutodiffError("cross_entropy_logits: expected a single logit row, got " +
                        shape_str(logits.shape()));
  }
  if (target < 0 || target >= v) {
    throw AutodiffError("cross_entropy_logits: target " + std::to_string(target) +
                        " outside vocabulary of size " + std::to_string(v));
  }
  auto n = make_node({}, "cross_entropy_logits", {logits.ptr()});
  const double* z = logits.value().data();
  double mx = z[0];
  for (int j = 1; j < v; ++j) mx = std::max(mx, z[j]);
  double sum = 0.0;
  for (int j = 0; j < v; ++j) sum += std::exp(z[j] - mx);
  n->value[0] = std::log(sum) + mx - z[target];
  check_finite(*n);
  Node* pl = logits.node();
  n->backprop = [pl, target, v, mx, sum](Node& self) {
    if (!pl->requires_grad) return;
    const double g = self.grad[0];
    for (int j = 0; j < v; ++j) {
      const double soft = std::exp(pl->value[j] - mx) / sum;
      pl->grad[j] += g * (soft - (j == target ? 1.0 : 0.0));
    }
  };
  return Tensor(std::move(n));
}

// ---- backward -----------------------------------------------------------------

void backward(const Tensor& root) {
  Node* r = root.node();
  if (r == nullptr) throw AutodiffError("backward: undefined tensor");
  if (!r->shape.empty()) {
    throw AutodiffError("backward: root must be scalar, got shape " + shape_str(r->shape));
  }
  if (r->backward_done) {
    throw AutodiffError("backward: already invoked on this root; build a fresh graph");
  }
  if (r->param_epoch != g_param_epoch.load()) {
    throw AutodiffError("backward: graph is stale, parameters were mutated after the forward pass");
  }

  // Reverse post-order DFS gives a topological order with every consumer
  // visited before its inputs.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(r, 0);
  visited.insert(r);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // Interior grads are scratch for this sweep; only leaves accumulate across
  // backward calls on distinct roots.
  for (Node* n : order) {
    if (!n->parents.empty()) std::fill(n->grad.begin(), n->grad.end(), 0.0);
  }
  r->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->requires_grad && n->backprop) n->backprop(*n);
  }
  r->backward_done = true;
}

// ---- gradient checking -----------------------------------------------------------

double grad_check(const GradCheckCase& c, int trials, double h, Rng& rng) {
  if (h < 1e-6 || h > 1e-4) {
    throw std::invalid_argument("grad_check: h must lie in [1e-6, 1e-4]");
  }
  Tensor root = c.build(c.leaves);
  backward(root);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(c.leaves.size());
  for (const Tensor& leaf : c.leaves) analytic.push_back(leaf.grad());

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t li = 0; li < c.leaves.size(); ++li) {
    if (!c.leaves[li].requires_grad()) continue;
    for (std::size_t i = 0; i < c.leaves[li].numel(); ++i) coords.emplace_back(li, i);
  }
  if (coords.size() > static_cast<std::size_t>(trials)) {
    rng.shuffle(coords);
    coords.resize(static_cast<std::size_t>(trials));
  }

  double worst = 0.0;
  for (auto [li, i] : coords) {
    Tensor leaf = c.leaves[li];
    const double orig = leaf.value()[i];
    leaf.set_value(i, orig + h);
    const double fp = c.build(c.leaves).scalar_value();
    leaf.set_value(i, orig - h);
    const double fm = c.build(c.leaves).scalar_value();
    leaf.set_value(i, orig);
    const double central = (fp - fm) / (2.0 * h);
    const double a = analytic[li][i];
    const double rel = std::abs(a - central) / std::max({1.0, std::abs(a), std::abs(central)});
    worst = std::max(worst, rel);
  }
  return worst;
}

// ---- op registry -----------------------------------------------------------------

namespace {

Tensor rand_leaf(Rng& rng, std::vector<int> shape, double lo = -2.0, double hi = 2.0) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::param(std::move(shape), std::move(v));
}

int dim(Rng& rng, int lo = 1, int hi = 6) { return lo + rng.index(static_cast<std::size_t>(hi - lo + 1)); }

}  // namespace

const std::vector<OpCheck>& op_check_registry() {
  static const std::vector<OpCheck> registry = [] {
    std::vector<OpCheck> ops;
    auto binary_same = [](Tensor (*fn)(const Tensor&, const Tensor&)) {
      return [fn](Rng& rng) {
        const int r = dim(rng), c = dim(rng);
        GradCheckCase g;
        g.leaves = {rand_leaf(rng, {r, c}), rand_leaf(rng, {r, c})};
        std::vector<double> w(static_cast<std::size_t>(r) * c);
        for (double& x : w) x = rng.uniform(-1.0, 1.0);
        Tensor wt = Tensor::constant({r, c}, std::move(w));
        g.build = [fn, wt](const std::vector<Tensor>& l) { return sum_all(mul(fn(l[0], l[1]), wt)); };
        return g;
      };
    };
    ops.push_back({"add", binary_same(&add)});
    ops.push_back({"sub", binary_same(&sub)});
    ops.push_back({"mul", binary_same(&mul)});
    ops.push_back({"add_rowvec", [](Rng& rng) {
                     const int r = dim(rng), c = dim(rng);
                     GradCheckCase g;
                     g.leaves = {rand_leaf(rng, {r, c}), rand_leaf(rng, {c})};
                     g.build = [](const std::vector<Tensor>& l) {
                       return mean_all(pow_const(add_rowvec(l[0], l[1]), 2.0));
                     };
                     return g;
                   }});
    ops.push_back({"mul_rowvec", [](Rng& rng) {
                     const int r = dim(rng), c = dim(rng);
                     GradCheckCase g;
                     g.leaves = {rand_leaf(rng, {r, c}), rand_leaf(rng, {c})};
                     g.build = [](const std::vector<Tensor>& l) {
                       return mean_all(pow_const(mul_rowvec(l[0], l[1]), 2.0));
                     };
                     return g;
                   }});
    ops.push_back({"scale", [](Rng& rng) {
                     const int r = dim(rng), c = dim(rng);
                     const double k = rng.uniform(-3.0, 3.0);
                     GradCheckCase g;
                     g.leaves = {rand_leaf(rng, {r, c})};
                     g.build = [k](const std::vector<Tensor>& l) {
                       return sum_all(pow_const(scale(l[0], k), 2.0));
                     };
                     return g;
                   }});
    ops.push_back({"matmul", [](Rng& rng) {
                     const int m = dim(rng), k = dim(rng), p = dim(rng);
                     GradCheckCase g;
                     g.leaves = {rand_leaf(rng, {m, k}), rand_leaf(rng, {k, p})};
                     std::vector<double> w(static_cast<std::size_t>(m) * p);
                     for (double& x : w) x = rng.uniform(-1.0, 1.0);
                     Tensor wt = Tensor::constant({m, p}, std::move(w));
                     g.build = [wt](const std::vector<Tensor>& l) {
                       return sum_all(mul(matmul(l[0], l[1]), wt));
                     };
                     return g;
                   }});
    ops.push_back({"transpose", [](Rng& rng) {
                     const int r = dim(rng), c = dim(rng);
                     GradCheckCase g;
                     g.leaves = {rand_leaf(rng, {r, c})};
                     std::vector<double> w(static_cast<std::size_t>(r) * c);
                     for (double& x : w) x = rng.uniform(-1.0, 1.0);
                     Tensor wt = Tensor::constant({c, r}, std::move(w));
                     g.build = [wt](const std::vector<Tensor>& l) {
                       return sum_all(mul(transpose(l[0]), wt));
                     };
                     return g;
                   }});
    auto unary = [](Tensor (*fn)(const Tensor&), double lo, double hi) {
      return [fn, lo, hi](Rng& rng) {
        const int r = dim(rng), c = dim(rng);
        GradCheckCase g;
        g.leaves = {rand_leaf(rng, {r, c}, lo, hi)};
        std::vector<double> w(static_cast<std::size_t>(r) * c);
        for (double& x : w) x = rng.uniform(-1.0, 1.0);
        Tensor wt = Tensor::constant({r, c}, std::move(w));
        g.build = [fn, wt](const std::vector<Tensor>& l) { return sum_all(mul(fn(l[0]), wt)); };
        return g;
      };
    };
    ops.push_back({"sigmoid", unary(&sigmoid, -4.0, 4.0)});
    ops.push_back({"gelu", unary(&gelu, -4.0, 4.0)});
    ops.push_back({"log", unary(&log, 0.1, 4.0)});
    ops.push_back({"relu", [](Rng& rng) {
                     // keep inputs away from the kink at 0
                     const int r = dim(rng), c = dim(rng);
                     std::vector<double> v(static_cast<std::size_t>(r) * c);
                     for (double& x : v) {
                       x = rng.uniform(0.05, 2.0);
                       if (rng.uniform() < 0.5) x = -x;
                     }
                     GradCheckCase g;
                     g.leaves = {Tensor::param({r, c}, std::move(v))};
                     std::vector<double> w(static_cast<std::size_t>(r) * c);
                     for (double& x : w) x = rng.uniform(-1.0, 1.0);
                     Tensor wt = Tensor::constant({r, c}, std::move(w));
                     g.build = [wt](const std::vector<Tensor>& l) { return sum_all(mul(relu(l[0]), wt)); };
                     return g;
                   }});
    ops.push_back({"softmax_rows", unary(&softmax_rows, -3.0, 3.0)});
    ops.push_back({"layer_norm_rows", [](Rng& rng) {
                     const int r = dim(rng), c = dim(rng, 2, 8);
                     GradCheckCase g;
                     g.leaves = {rand_leaf(rng, {r, c}, -3.0, 3.0)};
                     std::vector<double> w(static_cast<std::size_t>(r) * c);
                     for (double& x : w) x = rng.uniform(-1.0, 1.0);
                     Tensor wt = Tensor::constant({r, c}, std::move(w));
                     g.build = [wt](const std::vector<Tensor>& l) {
                       return sum_all(mul(layer_norm_rows(l[0]), wt));
                     };
                     return g;
                   }});
    ops.push_back({"gather_rows", [](Rng& rng) {
                     const int rows = dim(rng, 2, 8), c = dim(rng), k = dim(rng, 2, 8);
                     std::vector<int> idx(k);
                     for (int& i : idx) i = rng.index(static_cast<std::size_t>(rows));
                     GradCheckCase g;
                     g.leaves = {rand_leaf(rng, {rows, c})};
                     std::vector<double> w(static_cast<std::size_t>(k) * c);
                     for (double& x : w) x = rng.uniform(-1.0, 1.0);
                     Tensor wt = Tensor::constant({k, c}, std::move(w));
                     g.build = [idx, wt](const std::vector<Tensor>& l) {
                       return sum_all(mul(gather_rows(l[0], idx), wt));
                     };
                     return g;
                   }});
    ops.push_back({"slice_cols", [](Rng& rng) {
                     const int r = dim(rng), c = dim(rng, 2, 8);
                     const int len = dim(rng, 1, c);
                     const int start = rng.index(static_cast<std::size_t>(c - len + 1));
                     GradCheckCase g;
                     g.leaves = {rand_leaf(rng, {r, c})};
                     g.build = [start, len](const std::vector<Tensor>& l) {
                       return sum_all(pow_const(slice_cols(l[0], start, len), 2.0));
                     };
                     return g;
                   }});
    ops.push_back({"concat_cols", [](Rng& rng) {
                     const int r = dim(rng), ca = dim(rng), cb = dim(rng);
                     GradCheckCase g;
                     g.leaves = {rand_leaf(rng, {r, ca}), rand_leaf(rng, {r, cb})};
                     g.build = [](const std::vector<Tensor>& l) {
                       return mean_all(pow_const(concat_cols(l[0], l[1]), 2.0));
                     };
                     return g;
                   }});
    ops.push_back({"concat_rows", [](Rng& rng) {
                     const int ra = dim(rng), rb = dim(rng), c = dim(rng);
                     GradCheckCase g;
                     g.leaves = {rand_leaf(rng, {ra, c}), rand_leaf(rng, {rb, c})};
                     g.build = [](const std::vector<Tensor>& l) {
                       return mean_all(pow_const(concat_rows(l[0], l[1]), 2.0));
                     };
                     return g;
                   }});
    ops.push_back({"reshape", [](Rng& rng) {
                     const int r = dim(rng), c = dim(rng);
                     GradCheckCase g;
                     g.leaves = {rand_leaf(rng, {r, c})};
                     g.build = [r, c](const std::vector<Tensor>& l) {
                       return sum_all(pow_const(reshape(l[0], {c, r}), 2.0));
                     };
                     return g;
                   }});
    ops.push_back({"sum_all", [](Rng& rng) {
                     GradCheckCase g;
                     g.leaves = {rand_leaf(rng, {dim(rng), dim(rng)})};
                     g.build = [](const std::vector<Tensor>& l) { return sum_all(l[0]); };
                     return g;
                   }});
    ops.push_back({"mean_all", [](Rng& rng) {
                     GradCheckCase g;
                     g.leaves = {rand_leaf(rng, {dim(rng), dim(rng)})};
                     g.build = [](const std::vector<Tensor>& l) {
                       return mean_all(pow_const(l[0], 2.0));
                     };
                     return g;
                   }});
    ops.push_back({"row_sums", [](Rng& rng) {
                     const int r = dim(rng), c = dim(rng);
                     GradCheckCase g;
                     g.leaves = {rand_leaf(rng, {r, c})};
                     std::vector<double> w(static_cast<std::size_t>(r));
                     for (double& x : w) x = rng.uniform(-1.0, 1.0);
                     Tensor wt = Tensor::constant({r}, std::move(w));
                     g.build = [wt](const std::vector<Tensor>& l) {
                       return sum_all(mul(row_sums(l[0]), wt));
                     };
                     return g;
                   }});
    ops.push_back({"l2_norm", [](Rng& rng) {
                     GradCheckCase g;
                     g.leaves = {rand_leaf(rng, {dim(rng, 2, 8)}, 0.2, 2.0)};
                     g.build = [](const std::vector<Tensor>& l) { return l2_norm(l[0]); };
                     return g;
                   }});
    ops.push_back({"pow_const", [](Rng& rng) {
                     static const double exps[] = {0.5, 1.0, 1.5, 2.0, 3.0};
                     const double e = exps[rng.index(5)];
                     GradCheckCase g;
                     g.leaves = {rand_leaf(rng, {dim(rng), dim(rng)}, 0.2, 2.0)};
                     g.build = [e](const std::vector<Tensor>& l) {
                       return sum_all(pow_const(l[0], e));
                     };
                     return g;
                   }});
    ops.push_back({"attention", [](Rng& rng) {
                     const int len = dim(rng, 1, 5), d = dim(rng, 2, 6);
                     const bool causal = rng.uniform() < 0.5;
                     GradCheckCase g;
                     g.leaves = {rand_leaf(rng, {len, d}, -1.0, 1.0), rand_leaf(rng, {len, d}, -1.0, 1.0),
                                 rand_leaf(rng, {len, d}, -1.0, 1.0)};
                     std::vector<double> w(static_cast<std::size_t>(len) * d);
                     for (double& x : w) x = rng.uniform(-1.0, 1.0);
                     Tensor wt = Tensor::constant({len, d}, std::move(w));
                     g.build = [causal, wt](const std::vector<Tensor>& l) {
                       return sum_all(mul(attention(l[0], l[1], l[2], causal), wt));
                     };
                     return g;
                   }});
    ops.push_back({"bce_mean", [](Rng& rng) {
                     const int n = dim(rng, 2, 8);
                     std::vector<double> p(n), y(n);
                     for (double& x : p) x = rng.uniform(0.05, 0.95);
                     for (double& x : y) x = rng.uniform() < 0.5 ? 0.0 : 1.0;
                     GradCheckCase g;
                     g.leaves = {Tensor::param({n}, std::move(p))};
                     g.build = [y](const std::vector<Tensor>& l) { return bce_mean(l[0], y); };
                     return g;
                   }});
    ops.push_back({"cross_entropy_logits", [](Rng& rng) {
                     const int v = dim(rng, 2, 12);
                     const int target = rng.index(static_cast<std::size_t>(v));
                     GradCheckCase g;
                     g.leaves = {rand_leaf(rng, {v}, -2.0, 2.0)};
                     g.build = [target](const std::vector<Tensor>& l) {
                       return cross_entropy_logits(l[0], target);
                     };
                     return g;
                   }});
    return ops;
  }();
  return registry;
}

}  // namespace corella::ad
