#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "muan/params.hpp"

namespace muan {

/// Axis-aligned box in image coordinates.
struct Box {
  double x_tl = 0.0;
  double y_tl = 0.0;
  double x_br = 0.0;
  double y_br = 0.0;

  double width() const { return x_br - x_tl; }
  double height() const { return y_br - y_tl; }
  double area() const { return width() * height(); }
  bool operator==(const Box&) const = default;
};

// Throws ContractError if a corner is not finite or x_br < x_tl / y_br < y_tl.
void validate_box(const Box& b);

// Intersection over union; 0 for disjoint boxes or a zero-area union.
double iou(const Box& a, const Box& b);

// (center-x, center-y, width, height), each divided by the canvas extent.
std::array<double, 4> encode_center_size(const Box& b, double canvas_w, double canvas_h);
Box decode_center_size(std::span<const double> t, double canvas_w, double canvas_h);

// ---- VQA ---------------------------------------------------------------------

// Single affine projection of the [ans] row: [1 x d] -> [1 x k].
Var vqa_head(Var z_ans, const Linear& classifier);

// Multi-label objective, minimized form: sum over answers of
// -[y log sigmoid(p) + (1 - y) log(1 - sigmoid(p))], evaluated as
// max(p, 0) - p y + log1p(exp(-|p|)). Targets must lie in [0, 1].
Var bce_loss(Var logits, const Tensor& target);

// -log softmax(p)[hot]. Throws LabelError unless `onehot` has exactly one
// entry equal to 1 and all others 0.
Var softmax_ce_loss(Var logits, const Tensor& onehot);

// min(count / 3, 1).
double vqa_accuracy(double annotator_count);
// Accuracy of `predicted` given per-answer annotator counts.
double vqa_accuracy(std::size_t predicted, std::span<const double> annotator_counts);

// ---- Grounding ---------------------------------------------------------------

struct GroundingHeadParams {
  Linear score;  // d -> 1
  Linear box;    // d -> 4
};

struct GroundingPrediction {
  Var scores;  // [n x 1]
  Var boxes;   // [n x 4], sigmoid-squashed normalized center-size
};

GroundingPrediction grounding_head(Var z_visual, const GroundingHeadParams& p);

struct GroundTruthScores {
  std::vector<double> s_star;  // n
  Tensor t_star;               // [n x 4]
  double eta = 0.5;

  // All-zero targets carry no ranking signal; such samples are skipped.
  bool usable() const;
};

// s*_i = IoU(proposal_i, gt) when it exceeds eta, else 0. Every row of t*
// holds the normalized center-size encoding of gt.
GroundTruthScores make_ground_truth_scores(std::span<const Box> proposals, const Box& gt, double eta,
                                           double canvas_w, double canvas_h);

// (1/n) sum_i q_i log(q_i / r_i) with q = softmax(s_star) and r = softmax(S),
// both taken over valid rows only; n is the number of valid rows.
Var kl_rank_loss(Var scores, std::span<const double> s_star, const std::vector<bool>& valid);

// rho(x) = 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
double smooth_l1(double x);

// (1/n) sum over valid rows and the 4 coordinates of rho(t - t*).
Var smooth_l1_loss(Var boxes, const Tensor& t_star, const std::vector<bool>& valid);

struct GroundingLoss {
  Var total;
  Var rank;
  Var regression;  // invalid when lambda == 0
};

// L_rank + lambda * L_reg. With lambda == 0 the regression term is not built.
GroundingLoss total_grounding_loss(const GroundingPrediction& pred, const GroundTruthScores& gt,
                                   const std::vector<bool>& valid, double lambda);

// Fraction of predictions overlapping their ground truth by IoU > 0.5.
double grounding_accuracy(std::span<const Box> predictions, std::span<const Box> ground_truth);

void register_vqa_head(ParameterSet& set, std::size_t d, std::size_t answers, const RngStream& init);
void register_grounding_head(ParameterSet& set, std::size_t d, const RngStream& init);
Linear bind_vqa_head(const Binder& bind);
GroundingHeadParams bind_grounding_head(const Binder& bind);

}  // namespace muan
