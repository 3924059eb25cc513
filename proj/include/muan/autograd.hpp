#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "muan/rng.hpp"
#include "muan/tensor.hpp"

namespace muan {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid for the tape's lifetime.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape& tape() const { return *tape_; }
  std::size_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  // Gradient after Tape::backward; zero tensor if none reached this node.
  Tensor grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// Linear record of a forward computation. Nodes are appended in evaluation
/// order, so backward() is a single reverse sweep.
///
/// A tape belongs to one thread. Parameters are bound by reference, never
/// copied, so concurrent forward passes on separate tapes may share one
/// read-only ParameterSet.
class Tape {
 public:
  // Receives the node's own value and the gradient flowing into it.
  using BackwardFn = std::function<void(Tape&, const Tensor& out, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value, bool requires_grad = true);
  // Leaf that aliases an external tensor (a model parameter). `slot` is the
  // parameter's index, reported back by bound_parameters().
  Var param(const Tensor& external, std::size_t slot);

  // Appends an op output. `backward` receives the gradient flowing into the
  // node and must accumulate into its inputs through grad_target().
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  // Reverse sweep seeded with d(loss)/d(loss) = 1. Rejected when `loss` is
  // not a scalar or when gradients from a previous sweep were not reset.
  void backward(Var loss);
  void reset_grads();

  const Tensor& value(std::size_t index) const;
  bool requires_grad(std::size_t index) const { return nodes_[index].requires_grad; }
  // Mutable gradient buffer for an input, or nullptr when it needs none.
  Tensor* grad_target(Var v);
  const Tensor* grad_if_any(std::size_t index) const;

  struct Binding {
    std::size_t slot;
    std::size_t node;
  };
  const std::vector<Binding>& bound_parameters() const { return bindings_; }
  // Adds gradients of every bound parameter into accum[slot].
  void accumulate_parameter_grads(std::vector<Tensor>& accum) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;  // deque: values stay put while the tape grows
  std::vector<Binding> bindings_;
  bool swept_ = false;
};

// ---- Differentiable operations ---------------------------------------------
// All matrices are rank-2 row-major. Biases, gains and other per-column
// vectors are rank-1.

Var matmul(Var a, Var b);      // [m x k] * [k x n]
Var matmul_nt(Var a, Var b);   // [m x k] * [n x k]^T
Var linear(Var x, Var weight, Var bias);  // x W + 1 b^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_row(Var a, Var row);   // broadcast rank-1 row over every row of a
Var scale(Var a, double factor);
Var scale_rows(Var a, Var row_factors);   // a[i][j] * g[i][0], g is [r x 1]
Var mask_rows(Var a, const std::vector<bool>& keep);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var sum(Var a);
Var mean(Var a);

// Row softmax of (logits + additive_mask). Mask entries are 0 (keep) or
// kMaskedLogit (drop). A row with no kept entry raises DegenerateRowError.
Var masked_softmax_rows(Var logits, const Tensor& additive_mask);

Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-6);

// Inverted dropout. Identity when !train or p == 0.
Var dropout(Var x, double p, bool train, RngStream& rng);

Var col_slice(Var a, std::size_t start, std::size_t width);
Var row_slice(Var a, std::size_t start, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(Var a, std::span<const std::size_t> rows);
// Row lookup; rows equal to `frozen_id` never receive gradient.
Var embedding(Var table, std::span<const std::size_t> ids, std::size_t frozen_id);

inline constexpr double kMaskedLogit = -1e9;
// Entries at or below this are treated as dropped by masked_softmax_rows.
inline constexpr double kMaskedThreshold = -1e8;

// ---- Plain kernels (no tape) ------------------------------------------------
namespace kernels {
// c (+)= a * b for row-major a [m x k], b [k x n].
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor softmax_rows(const Tensor& logits, const Tensor& additive_mask);
}  // namespace kernels

}  // namespace muan
