#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "corella/rng.hpp"

namespace corella::ad {

// Thrown by graph construction and backward on contract violations: shape
// mismatches, non-finite intermediates, invalid indices, misuse of backward.
class AutodiffError : public std::runtime_error {
 public:
  explicit AutodiffError(const std::string& msg) : std::runtime_error(msg) {}
};

// One vertex of the computation graph. Dense double storage; shape rank 0
// (scalar), 1 (vector) or 2 (matrix). values and grad always share shape.
struct Node {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // adds this node's grad into parents
  bool requires_grad = false;
  bool backward_done = false;
  std::uint64_t id = 0;           // creation order, global
  std::uint64_t param_epoch = 0;  // global parameter-mutation epoch at creation

  std::size_t numel() const { return value.size(); }
  int rows() const;
  int cols() const;
};

std::string shape_str(const std::vector<int>& shape);

// Value-semantic handle to a graph node. Copy shares the node.
class Tensor {
 public:
  Tensor() = default;

  // Leaves. `param` leaves participate in gradients; `constant` ones do not.
  static Tensor param(std::vector<int> shape, std::vector<double> values);
  static Tensor constant(std::vector<int> shape, std::vector<double> values);
  static Tensor scalar(double v);
  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor randn(std::vector<int> shape, Rng& rng, double stddev, bool requires_grad = true);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->numel(); }
  int rows() const { return node_->rows(); }
  int cols() const { return node_->cols(); }
  const std::vector<double>& value() const { return node_->value; }
  const std::vector<double>& grad() const { return node_->grad; }
  double scalar_value() const;
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }

  // In-place mutation of leaf values (optimizer updates, grad-check probes).
  // Bumps the global parameter epoch so a stale forward pass cannot be
  // back-propagated afterwards.
  void set_value(std::size_t i, double v);
  void apply_update(const std::function<void(std::vector<double>&)>& fn);
  void zero_grad();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<Node> node_;
};

// ---- forward ops ----------------------------------------------------------
// Every op validates input shapes (error names the op and both shapes) and
// rejects non-finite outputs (error carries the op tag).

Tensor add(const Tensor& a, const Tensor& b);          // same shape
Tensor add_rowvec(const Tensor& m, const Tensor& v);   // [r,c] + [c], per row
Tensor sub(const Tensor& a, const Tensor& b);          // same shape
Tensor mul(const Tensor& a, const Tensor& b);          // Hadamard, same shape
Tensor mul_rowvec(const Tensor& m, const Tensor& v);   // [r,c] * [c], per row
Tensor scale(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);       // [m,k] x [k,n]
Tensor transpose(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);                          // exact erf form
Tensor log(const Tensor& a);                           // errors on x <= 0
Tensor softmax_rows(const Tensor& a);                  // last axis
Tensor layer_norm_rows(const Tensor& a, double eps = 1e-5);
Tensor gather_rows(const Tensor& table, std::vector<int> indices);
Tensor slice_cols(const Tensor& a, int start, int len);
Tensor concat_cols(const Tensor& a, const Tensor& b);  // [r,p]+[r,q] -> [r,p+q]
Tensor concat_rows(const Tensor& a, const Tensor& b);  // [p,c]+[q,c] -> [p+q,c]
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor sum_all(const Tensor& a);                       // -> scalar
Tensor mean_all(const Tensor& a);                      // -> scalar
Tensor row_sums(const Tensor& a);                      // [r,c] -> [r]
Tensor l2_norm(const Tensor& a);                       // -> scalar; grad 0 at 0
// Elementwise x^e. Requires x >= 0 for non-integer e; the derivative at x = 0
// with e < 1 is taken as 0 (subgradient choice).
Tensor pow_const(const Tensor& a, double e);

// Scaled dot-product attention over one head: softmax(q k^T / sqrt(d)) v,
// optionally causally masked. Composite of the primitives above.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal);

// Mean binary cross-entropy of probabilities against 0/1 labels. Probabilities
// are clamped to [1e-12, 1 - 1e-12] before the logs; clamped coordinates get
// zero gradient.
Tensor bce_mean(const Tensor& probs, const std::vector<double>& labels);
// Full-vocabulary cross-entropy of one logit row against a target index,
// computed in shifted log-sum-exp form.
Tensor cross_entropy_logits(const Tensor& logits, int target);

// ---- backward -------------------------------------------------------------

// Reverse-mode sweep from a scalar root. Each reachable node is visited once
// in reverse topological order; leaf grads accumulate additively, so several
// backward calls on distinct roots sum their contributions. Errors: non-scalar
// root, a second backward on the same root, or a graph that was mutated
// (nodes appended / parameters updated) between forward and backward.
void backward(const Tensor& root);

// ---- gradient checking ----------------------------------------------------

struct GradCheckCase {
  std::vector<Tensor> leaves;
  std::function<Tensor(const std::vector<Tensor>&)> build;  // returns scalar root
};

// Max over sampled coordinates of |analytic - central| / max(1,|analytic|,|central|).
// h must lie in [1e-6, 1e-4]. Coordinates are sampled with `rng`; if the case
// has fewer coordinates than `trials`, all of them are checked.
double grad_check(const GradCheckCase& c, int trials, double h, Rng& rng);

// Registry of per-op gradient-check case builders, used by the test suites to
// sweep every op over randomized shapes.
struct OpCheck {
  std::string name;
  std::function<GradCheckCase(Rng&)> make;
};
const std::vector<OpCheck>& op_check_registry();

// Current global parameter-mutation epoch (advanced by Tensor::set_value /
// apply_update). Exposed for optimizers and tests.
std::uint64_t param_epoch();

}  // namespace corella::ad
