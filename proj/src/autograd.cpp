#include "muan/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace muan {

// ---- Var / Tape ---------------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(index_); }
bool Var::requires_grad() const { return tape_->requires_grad(index_); }

Tensor Var::grad() const {
  if (const Tensor* g = tape_->grad_if_any(index_)) return *g;
  return Tensor(value().shape());
}

Var Tape::constant(Tensor value) { return leaf(std::move(value), false); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const Tensor& external, std::size_t slot) {
  Node node;
  node.external = &external;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  bindings_.push_back({slot, nodes_.size() - 1});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw ContractError("op mixes variables from different tapes");
    node.requires_grad = node.requires_grad || nodes_[in.index()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(std::size_t index) const {
  const Node& node = nodes_[index];
  return node.external ? *node.external : node.value;
}

Tensor* Tape::grad_target(Var v) {
  Node& node = nodes_[v.index()];
  if (!node.requires_grad) return nullptr;
  if (!node.has_grad) {
    node.grad = Tensor(value(v.index()).shape());
    node.has_grad = true;
  }
  return &node.grad;
}

const Tensor* Tape::grad_if_any(std::size_t index) const {
  const Node& node = nodes_[index];
  return node.has_grad ? &node.grad : nullptr;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
  if (value(loss.index()).numel() != 1) {
    throw ContractError("backward: seed must be a scalar, got shape " + shape_string(value(loss.index()).shape()));
  }
  if (swept_) throw ContractError("backward: gradients already computed; call reset_grads() first");
  swept_ = true;
  Tensor* seed = grad_target(loss);
  if (!seed) return;
  (*seed)[0] = 1.0;
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.has_grad || !node.backward) continue;
    node.backward(*this, value(i), node.grad);
  }
}

void Tape::reset_grads() {
  for (Node& node : nodes_) {
    node.grad = Tensor();
    node.has_grad = false;
  }
  swept_ = false;
}

void Tape::accumulate_parameter_grads(std::vector<Tensor>& accum) const {
  for (const Binding& b : bindings_) {
    const Node& node = nodes_[b.node];
    if (node.has_grad) accum.at(b.slot) += node.grad;
  }
}

// ---- kernels ------------------------------------------------------------------

namespace kernels {

namespace {

// Four doubles; GCC/Clang lower this to whatever vector width the target has.
typedef double Vec4 __attribute__((vector_size(32)));

inline Vec4 load4(const double* p) {
  Vec4 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store4(double* p, const Vec4& v) { std::memcpy(p, &v, sizeof v); }

constexpr std::size_t kTileRows = 4;
constexpr std::size_t kTileVecs = 2;  // 8 columns
constexpr std::size_t kTileCols = 4 * kTileVecs;

// R rows by kTileCols columns, accumulated in registers across the k loop.
template <std::size_t R>
inline void gemm_tile(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc,
                      std::size_t k, bool accumulate) {
  Vec4 acc[R][kTileVecs];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < kTileVecs; ++v) acc[r][v] = accumulate ? load4(c + r * ldc + 4 * v) : Vec4{};
  for (std::size_t t = 0; t < k; ++t) {
    Vec4 bv[kTileVecs];
    for (std::size_t v = 0; v < kTileVecs; ++v) bv[v] = load4(b + t * ldb + 4 * v);
    for (std::size_t r = 0; r < R; ++r) {
      const double s = a[r * lda + t];
      for (std::size_t v = 0; v < kTileVecs; ++v) acc[r][v] += s * bv[v];
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < kTileVecs; ++v) store4(c + r * ldc + 4 * v, acc[r][v]);
}

// Leftover columns, one at a time.
inline void gemm_columns(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
                         std::size_t ldc, std::size_t rows, std::size_t cols, std::size_t k, bool accumulate) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) {
      double acc = accumulate ? c[r * ldc + j] : 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += a[r * lda + t] * b[t * ldb + j];
      c[r * ldc + j] = acc;
    }
  }
}

}  // namespace

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate) {
  // Every output element starts from 0 (or its previous value) and adds
  // a[i][t] * b[t][j] for t = 0..k-1 in order, whichever tile it lands in, so
  // a row's result never depends on its position or on the other rows.
  const std::size_t full_rows = m - m % kTileRows;
  const std::size_t full_cols = n - n % kTileCols;
  for (std::size_t i = 0; i < m; i += kTileRows) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    const bool whole = i < full_rows;
    for (std::size_t j = 0; j < full_cols; j += kTileCols) {
      if (whole) {
        gemm_tile<kTileRows>(ai, k, b + j, n, ci + j, n, k, accumulate);
      } else {
        for (std::size_t r = i; r < m; ++r) gemm_tile<1>(a + r * k, k, b + j, n, c + r * n + j, n, k, accumulate);
      }
    }
    if (full_cols < n) {
      gemm_columns(ai, k, b + full_cols, n, ci + full_cols, n, std::min(kTileRows, m - i), n - full_cols, k,
                   accumulate);
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor c({a.rows(), b.cols()});
  gemm(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols(), false);
  return c;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  Tensor t({c, r});
  const double* src = a.data();
  double* dst = t.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
  return t;
}

Tensor softmax_rows(const Tensor& logits, const Tensor& additive_mask) {
  require_matrix(logits, "masked_softmax_rows");
  require_same_shape(logits, additive_mask, "masked_softmax_rows");
  const std::size_t r = logits.rows(), c = logits.cols();
  Tensor y({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const double* x = logits.data() + i * c;
    const double* mk = additive_mask.data() + i * c;
    double* yi = y.data() + i * c;
    bool any_kept = false;
    double hi = -INFINITY;
    for (std::size_t j = 0; j < c; ++j) {
      if (mk[j] > kMaskedThreshold) any_kept = true;
      hi = std::max(hi, x[j] + mk[j]);
    }
    if (!any_kept) throw DegenerateRowError("masked_softmax_rows: row " + std::to_string(i) + " has every entry masked");
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      yi[j] = std::exp(x[j] + mk[j] - hi);
      total += yi[j];
    }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < c; ++j) yi[j] *= inv;
  }
  return y;
}

}  // namespace kernels

// ---- ops ----------------------------------------------------------------------

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_string(t.shape()));
  }
}

// g (+)= a^T * b  for a [m x k], b [m x n]  ->  [k x n]
void gemm_tn_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const Tensor at = kernels::transpose(a);
  kernels::gemm(at.data(), b.data(), out.data(), at.rows(), at.cols(), b.cols(), true);
}

// out (+)= a * b^T  for a [m x n], b [k x n]  ->  [m x k]
void gemm_nt_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  Tensor bt = kernels::transpose(b);
  kernels::gemm(a.data(), bt.data(), out.data(), a.rows(), a.cols(), bt.cols(), true);
}

template <typename F>
Var unary(Var a, F&& f, Tape::BackwardFn backward) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = f(x[i]);
  return a.tape().record(std::move(y), {a}, std::move(backward));
}

}  // namespace

Var matmul(Var a, Var b) {
  Tensor c = kernels::matmul(a.value(), b.value());
  return a.tape().record(std::move(c), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    if (Tensor* ga = t.grad_target(a)) gemm_nt_acc(g, b.value(), *ga);
    if (Tensor* gb = t.grad_target(b)) gemm_tn_acc(a.value(), g, *gb);
  });
}

Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul_nt");
  require_matrix(bv, "matmul_nt");
  if (av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt: inner extents differ, " + shape_string(av.shape()) + " x " +
                         shape_string(bv.shape()) + "^T");
  }
  Tensor bt = kernels::transpose(bv);
  Tensor c({av.rows(), bv.rows()});
  kernels::gemm(av.data(), bt.data(), c.data(), av.rows(), av.cols(), bv.rows(), false);
  return a.tape().record(std::move(c), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    if (Tensor* ga = t.grad_target(a)) {
      kernels::gemm(g.data(), b.value().data(), ga->data(), g.rows(), g.cols(), b.value().cols(), true);
    }
    if (Tensor* gb = t.grad_target(b)) gemm_tn_acc(g, a.value(), *gb);
  });
}

Var linear(Var x, Var weight, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  require_matrix(xv, "linear");
  require_matrix(wv, "linear");
  require_rank(bv, 1, "linear bias");
  if (xv.cols() != wv.rows() || bv.numel() != wv.cols()) {
    throw DimensionError("linear: input " + shape_string(xv.shape()) + " incompatible with weight " +
                         shape_string(wv.shape()) + " and bias " + shape_string(bv.shape()));
  }
  Tensor y = kernels::matmul(xv, wv);
  const std::size_t n = wv.cols();
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j) y.at(i, j) += bv[j];
  return x.tape().record(std::move(y), {x, weight, bias}, [x, weight, bias](Tape& t, const Tensor&, const Tensor& g) {
    if (Tensor* gx = t.grad_target(x)) gemm_nt_acc(g, weight.value(), *gx);
    if (Tensor* gw = t.grad_target(weight)) gemm_tn_acc(x.value(), g, *gw);
    if (Tensor* gb = t.grad_target(bias)) {
      const std::size_t n = g.cols();
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < n; ++j) (*gb)[j] += g.at(i, j);
    }
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  y += b.value();
  return a.tape().record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    if (Tensor* ga = t.grad_target(a)) *ga += g;
    if (Tensor* gb = t.grad_target(b)) *gb += g;
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= bv[i];
  return a.tape().record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    if (Tensor* ga = t.grad_target(a)) *ga += g;
    if (Tensor* gb = t.grad_target(b))
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= bv[i];
  return a.tape().record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    if (Tensor* ga = t.grad_target(a)) {
      const Tensor& bv = b.value();
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = t.grad_target(b)) {
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Var add_row(Var a, Var row) {
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  require_matrix(av, "add_row");
  require_rank(rv, 1, "add_row");
  if (rv.numel() != av.cols()) {
    throw DimensionError("add_row: row " + shape_string(rv.shape()) + " vs matrix " + shape_string(av.shape()));
  }
  Tensor y = av;
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y.at(i, j) += rv[j];
  return a.tape().record(std::move(y), {a, row}, [a, row](Tape& t, const Tensor&, const Tensor& g) {
    if (Tensor* ga = t.grad_target(a)) *ga += g;
    if (Tensor* gr = t.grad_target(row))
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) (*gr)[j] += g.at(i, j);
  });
}

Var scale(Var a, double factor) {
  Tensor y = a.value();
  y *= factor;
  return a.tape().record(std::move(y), {a}, [a, factor](Tape& t, const Tensor&, const Tensor& g) {
    if (Tensor* ga = t.grad_target(a))
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += factor * g[i];
  });
}

Var scale_rows(Var a, Var row_factors) {
  const Tensor& av = a.value();
  const Tensor& fv = row_factors.value();
  require_matrix(av, "scale_rows");
  require_matrix(fv, "scale_rows factors");
  if (fv.cols() != 1 || fv.rows() != av.rows()) {
    throw DimensionError("scale_rows: factors " + shape_string(fv.shape()) + " vs matrix " + shape_string(av.shape()));
  }
  Tensor y = av;
  const std::size_t c = av.cols();
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < c; ++j) y.at(i, j) *= fv[i];
  return a.tape().record(std::move(y), {a, row_factors}, [a, row_factors](Tape& t, const Tensor&, const Tensor& g) {
    const std::size_t c = g.cols();
    if (Tensor* ga = t.grad_target(a)) {
      const Tensor& fv = row_factors.value();
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < c; ++j) ga->at(i, j) += g.at(i, j) * fv[i];
    }
    if (Tensor* gf = t.grad_target(row_factors)) {
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < g.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += g.at(i, j) * av.at(i, j);
        (*gf)[i] += acc;
      }
    }
  });
}

Var mask_rows(Var a, const std::vector<bool>& keep) {
  const Tensor& av = a.value();
  require_matrix(av, "mask_rows");
  if (keep.size() != av.rows()) {
    throw DimensionError("mask_rows: " + std::to_string(keep.size()) + " flags for " + shape_string(av.shape()));
  }
  Tensor y = av;
  for (std::size_t i = 0; i < y.rows(); ++i)
    if (!keep[i]) std::fill(y.row(i).begin(), y.row(i).end(), 0.0);
  std::vector<bool> flags(keep.begin(), keep.end());
  return a.tape().record(std::move(y), {a}, [a, flags](Tape& t, const Tensor&, const Tensor& g) {
    if (Tensor* ga = t.grad_target(a)) {
      const std::size_t c = g.cols();
      for (std::size_t i = 0; i < g.rows(); ++i)
        if (flags[i])
          for (std::size_t j = 0; j < c; ++j) ga->at(i, j) += g.at(i, j);
    }
  });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [a](Tape& t, const Tensor& y, const Tensor& g) {
        if (Tensor* ga = t.grad_target(a))
          for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * y[i] * (1.0 - y[i]);
      });
}

Var tanh(Var a) {
  return unary(
      a, [](double x) { return std::tanh(x); },
      [a](Tape& t, const Tensor& y, const Tensor& g) {
        if (Tensor* ga = t.grad_target(a))
          for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * (1.0 - y[i] * y[i]);
      });
}

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [a](Tape& t, const Tensor& y, const Tensor& g) {
        if (Tensor* ga = t.grad_target(a))
          for (std::size_t i = 0; i < g.numel(); ++i)
            if (y[i] > 0.0) (*ga)[i] += g[i];
      });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  return a.tape().record(Tensor::scalar(total), {a}, [a](Tape& t, const Tensor&, const Tensor& g) {
    if (Tensor* ga = t.grad_target(a))
      for (std::size_t i = 0; i < ga->numel(); ++i) (*ga)[i] += g[0];
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().numel();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var masked_softmax_rows(Var logits, const Tensor& additive_mask) {
  Tensor y = kernels::softmax_rows(logits.value(), additive_mask);
  return logits.tape().record(std::move(y), {logits}, [logits](Tape& t, const Tensor& y, const Tensor& g) {
    Tensor* gx = t.grad_target(logits);
    if (!gx) return;
    const std::size_t c = y.cols();
    for (std::size_t i = 0; i < y.rows(); ++i) {
      const double* yi = y.data() + i * c;
      const double* gi = g.data() + i * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += gi[j] * yi[j];
      double* out = gx->data() + i * c;
      for (std::size_t j = 0; j < c; ++j) out[j] += yi[j] * (gi[j] - dot);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = x.value();
  require_matrix(xv, "layer_norm");
  const std::size_t r = xv.rows(), d = xv.cols();
  if (gain.value().shape() != Shape{d} || bias.value().shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain/bias must have shape [" + std::to_string(d) + "]");
  }
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  Tensor xhat({r, d});
  std::vector<double> rstd(r);
  Tensor y({r, d});
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = xv.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xi[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(d);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat.at(i, j) = (xi[j] - mu) * rstd[i];
      y.at(i, j) = xhat.at(i, j) * gv[j] + bv[j];
    }
  }
  return x.tape().record(
      std::move(y), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& t, const Tensor&, const Tensor& g) {
        const std::size_t r = g.rows(), d = g.cols();
        if (Tensor* gx = t.grad_target(x)) {
          const Tensor& gv = gain.value();
          std::vector<double> gxh(d);
          for (std::size_t i = 0; i < r; ++i) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              gxh[j] = g.at(i, j) * gv[j];
              m1 += gxh[j];
              m2 += gxh[j] * xhat.at(i, j);
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) gx->at(i, j) += rstd[i] * (gxh[j] - m1 - xhat.at(i, j) * m2);
          }
        }
        if (Tensor* gg = t.grad_target(gain))
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < d; ++j) (*gg)[j] += g.at(i, j) * xhat.at(i, j);
        if (Tensor* gb = t.grad_target(bias))
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < d; ++j) (*gb)[j] += g.at(i, j);
      });
}

Var dropout(Var x, double p, bool train, RngStream& rng) {
  if (!train || p == 0.0) return x;
  if (!(p > 0.0 && p < 1.0)) throw ContractError("dropout: p must lie in [0, 1)");
  const Tensor& xv = x.value();
  Tensor keep(xv.shape());
  const double scale_kept = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < keep.numel(); ++i) keep[i] = rng.uniform() < p ? 0.0 : scale_kept;
  Tensor y = xv;
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= keep[i];
  return x.tape().record(std::move(y), {x}, [x, keep = std::move(keep)](Tape& t, const Tensor&, const Tensor& g) {
    if (Tensor* gx = t.grad_target(x))
      for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i] * keep[i];
  });
}

Var col_slice(Var a, std::size_t start, std::size_t width) {
  const Tensor& av = a.value();
  require_matrix(av, "col_slice");
  if (start + width > av.cols()) {
    throw DimensionError("col_slice: columns [" + std::to_string(start) + ", " + std::to_string(start + width) +
                         ") out of " + shape_string(av.shape()));
  }
  Tensor y({av.rows(), width});
  for (std::size_t i = 0; i < av.rows(); ++i)
    std::copy_n(av.data() + i * av.cols() + start, width, y.data() + i * width);
  return a.tape().record(std::move(y), {a}, [a, start, width](Tape& t, const Tensor&, const Tensor& g) {
    if (Tensor* ga = t.grad_target(a)) {
      const std::size_t c = ga->cols();
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < width; ++j) (*ga)[i * c + start + j] += g.at(i, j);
    }
  });
}

Var row_slice(Var a, std::size_t start, std::size_t count) {
  const Tensor& av = a.value();
  require_matrix(av, "row_slice");
  if (start + count > av.rows()) {
    throw DimensionError("row_slice: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of " + shape_string(av.shape()));
  }
  const std::size_t c = av.cols();
  Tensor y({count, c});
  std::copy_n(av.data() + start * c, count * c, y.data());
  return a.tape().record(std::move(y), {a}, [a, start](Tape& t, const Tensor&, const Tensor& g) {
    if (Tensor* ga = t.grad_target(a))
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[start * g.cols() + i] += g[i];
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t r = parts[0].value().rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.value().rows() != r) throw DimensionError("concat_cols: row counts differ");
    total += p.value().cols();
  }
  Tensor y({r, total});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(pv.data() + i * pv.cols(), pv.cols(), y.data() + i * total + offset);
    offset += pv.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  Tape& tape = parts[0].tape();
  return tape.record(std::move(y), parts, [inputs](Tape& t, const Tensor&, const Tensor& g) {
    std::size_t offset = 0;
    const std::size_t total = g.cols();
    for (const Var& p : inputs) {
      const std::size_t w = p.value().cols();
      if (Tensor* gp = t.grad_target(p))
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < w; ++j) gp->at(i, j) += g[i * total + offset + j];
      offset += w;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t c = parts[0].value().cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.value().cols() != c) {
      throw DimensionError("concat_rows: column counts differ, " + shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    }
    total += p.value().rows();
  }
  Tensor y({total, c});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy_n(p.value().data(), p.value().numel(), y.data() + offset);
    offset += p.value().numel();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(y), parts, [inputs](Tape& t, const Tensor&, const Tensor& g) {
    std::size_t offset = 0;
    for (const Var& p : inputs) {
      const std::size_t n = p.value().numel();
      if (Tensor* gp = t.grad_target(p))
        for (std::size_t i = 0; i < n; ++i) (*gp)[i] += g[offset + i];
      offset += n;
    }
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const Tensor& av = a.value();
  require_matrix(av, "gather_rows");
  const std::size_t c = av.cols();
  Tensor y({rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows()) throw DimensionError("gather_rows: row index out of range");
    std::copy_n(av.data() + rows[i] * c, c, y.data() + i * c);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return a.tape().record(std::move(y), {a}, [a, idx](Tape& t, const Tensor&, const Tensor& g) {
    if (Tensor* ga = t.grad_target(a)) {
      const std::size_t c = g.cols();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) ga->at(idx[i], j) += g.at(i, j);
    }
  });
}

Var embedding(Var table, std::span<const std::size_t> ids, std::size_t frozen_id) {
  const Tensor& tv = table.value();
  require_matrix(tv, "embedding");
  for (std::size_t id : ids) {
    if (id >= tv.rows()) {
      throw VocabularyError("embedding: word id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(tv.rows()));
    }
  }
  const std::size_t c = tv.cols();
  Tensor y({ids.size(), c});
  for (std::size_t i = 0; i < ids.size(); ++i) std::copy_n(tv.data() + ids[i] * c, c, y.data() + i * c);
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return table.tape().record(std::move(y), {table}, [table, idx, frozen_id](Tape& t, const Tensor&, const Tensor& g) {
    if (Tensor* gt = t.grad_target(table)) {
      const std::size_t c = g.cols();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] == frozen_id) continue;
        for (std::size_t j = 0; j < c; ++j) gt->at(idx[i], j) += g.at(i, j);
      }
    }
  });
}

}  // namespace muan
