#include "muan/heads.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace muan {

void validate_box(const Box& b) {
  if (!std::isfinite(b.x_tl) || !std::isfinite(b.y_tl) || !std::isfinite(b.x_br) || !std::isfinite(b.y_br)) {
    throw ContractError("box has a non-finite corner");
  }
  if (b.x_br < b.x_tl || b.y_br < b.y_tl) throw ContractError("box corners are inverted");
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x_br, b.x_br) - std::max(a.x_tl, b.x_tl);
  const double ih = std::min(a.y_br, b.y_br) - std::max(a.y_tl, b.y_tl);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::array<double, 4> encode_center_size(const Box& b, double canvas_w, double canvas_h) {
  return {(b.x_tl + b.x_br) / (2.0 * canvas_w), (b.y_tl + b.y_br) / (2.0 * canvas_h), b.width() / canvas_w,
          b.height() / canvas_h};
}

Box decode_center_size(std::span<const double> t, double canvas_w, double canvas_h) {
  if (t.size() != 4) throw DimensionError("decode_center_size: expected 4 coordinates");
  const double cx = t[0] * canvas_w, cy = t[1] * canvas_h;
  const double hw = 0.5 * std::max(t[2], 0.0) * canvas_w, hh = 0.5 * std::max(t[3], 0.0) * canvas_h;
  return Box{cx - hw, cy - hh, cx + hw, cy + hh};
}

Var vqa_head(Var z_ans, const Linear& classifier) {
  if (z_ans.value().rank() != 2 || z_ans.value().rows() != 1) {
    throw DimensionError("vqa_head: expected a single [1 x d] row, got " + shape_string(z_ans.shape()));
  }
  return classifier(z_ans);
}

Var bce_loss(Var logits, const Tensor& target) {
  const Tensor& p = logits.value();
  require_same_shape(p, target, "bce_loss");
  double total = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double y = target[i];
    if (!(y >= 0.0 && y <= 1.0)) throw LabelError("bce_loss: target entry " + std::to_string(i) + " outside [0, 1]");
    const double x = p[i];
    total += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  return logits.tape().record(Tensor::scalar(total), {logits}, [logits, target](Tape& t, const Tensor&, const Tensor& g) {
    if (Tensor* gp = t.grad_target(logits)) {
      const Tensor& x = logits.value();
      const double up = g.item();
      for (std::size_t i = 0; i < x.numel(); ++i) {
        const double s = x[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[i])) : std::exp(x[i]) / (1.0 + std::exp(x[i]));
        (*gp)[i] += up * (s - target[i]);
      }
    }
  });
}

namespace {

std::size_t hot_index(const Tensor& onehot) {
  std::size_t hot = onehot.numel();
  for (std::size_t i = 0; i < onehot.numel(); ++i) {
    if (onehot[i] == 1.0) {
      if (hot != onehot.numel()) throw LabelError("softmax_ce_loss: target has more than one hot entry");
      hot = i;
    } else if (onehot[i] != 0.0) {
      throw LabelError("softmax_ce_loss: target entry " + std::to_string(i) + " is neither 0 nor 1");
    }
  }
  if (hot == onehot.numel()) throw LabelError("softmax_ce_loss: target has no hot entry");
  return hot;
}

// Softmax over the selected entries; unselected entries get probability 0.
std::vector<double> softmax_over(std::span<const double> x, const std::vector<bool>& keep, double* log_norm) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < x.size(); ++i)
    if (keep[i]) mx = std::max(mx, x[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (keep[i]) z += std::exp(x[i] - mx);
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i)
    if (keep[i]) out[i] = std::exp(x[i] - mx) / z;
  if (log_norm) *log_norm = mx + std::log(z);
  return out;
}

std::size_t count_valid(const std::vector<bool>& valid) {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), true));
}

}  // namespace

Var softmax_ce_loss(Var logits, const Tensor& onehot) {
  const Tensor& p = logits.value();
  require_same_shape(p, onehot, "softmax_ce_loss");
  const std::size_t hot = hot_index(onehot);
  const std::vector<bool> all(p.numel(), true);
  double log_norm = 0.0;
  std::vector<double> prob = softmax_over(p.span(), all, &log_norm);
  const double loss = log_norm - p[hot];
  return logits.tape().record(Tensor::scalar(loss), {logits},
                              [logits, prob = std::move(prob), hot](Tape& t, const Tensor&, const Tensor& g) {
                                if (Tensor* gp = t.grad_target(logits)) {
                                  const double up = g.item();
                                  for (std::size_t i = 0; i < prob.size(); ++i)
                                    (*gp)[i] += up * (prob[i] - (i == hot ? 1.0 : 0.0));
                                }
                              });
}

double vqa_accuracy(double annotator_count) {
  if (!(annotator_count >= 0.0)) throw ContractError("vqa_accuracy: annotator count must be non-negative");
  return std::min(annotator_count / 3.0, 1.0);
}

double vqa_accuracy(std::size_t predicted, std::span<const double> annotator_counts) {
  if (predicted >= annotator_counts.size()) throw LabelError("vqa_accuracy: predicted answer outside the vocabulary");
  return vqa_accuracy(annotator_counts[predicted]);
}

GroundingPrediction grounding_head(Var z_visual, const GroundingHeadParams& p) {
  return GroundingPrediction{p.score(z_visual), sigmoid(p.box(z_visual))};
}

bool GroundTruthScores::usable() const {
  return std::any_of(s_star.begin(), s_star.end(), [](double s) { return s > 0.0; });
}

GroundTruthScores make_ground_truth_scores(std::span<const Box> proposals, const Box& gt, double eta,
                                           double canvas_w, double canvas_h) {
  if (proposals.empty()) throw ContractError("make_ground_truth_scores: no proposals");
  if (!(eta > 0.0 && eta < 1.0)) throw ConfigError("make_ground_truth_scores: eta must lie in (0, 1)");
  GroundTruthScores out;
  out.eta = eta;
  out.s_star.resize(proposals.size());
  out.t_star = Tensor({proposals.size(), 4});
  const auto target = encode_center_size(gt, canvas_w, canvas_h);
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const double overlap = iou(proposals[i], gt);
    out.s_star[i] = overlap > eta ? overlap : 0.0;
    std::copy(target.begin(), target.end(), out.t_star.row(i).begin());
  }
  return out;
}

Var kl_rank_loss(Var scores, std::span<const double> s_star, const std::vector<bool>& valid) {
  const Tensor& s = scores.value();
  if (s.numel() != s_star.size() || valid.size() != s_star.size()) {
    throw DimensionError("kl_rank_loss: " + shape_string(s.shape()) + " scores, " + std::to_string(s_star.size()) +
                         " targets, " + std::to_string(valid.size()) + " flags");
  }
  const std::size_t n = count_valid(valid);
  if (n == 0) throw ContractError("kl_rank_loss: no valid proposals");
  double log_norm_pred = 0.0, log_norm_target = 0.0;
  std::vector<double> pred = softmax_over(s.span(), valid, &log_norm_pred);
  std::vector<double> target = softmax_over(s_star, valid, &log_norm_target);
  double loss = 0.0;
  for (std::size_t i = 0; i < s_star.size(); ++i) {
    if (!valid[i] || target[i] == 0.0) continue;
    const double log_q = s_star[i] - log_norm_target;
    const double log_r = s[i] - log_norm_pred;
    loss += target[i] * (log_q - log_r);
  }
  loss /= static_cast<double>(n);
  return scores.tape().record(
      Tensor::scalar(loss), {scores},
      [scores, pred = std::move(pred), target = std::move(target), n](Tape& t, const Tensor&, const Tensor& g) {
        if (Tensor* gs = t.grad_target(scores)) {
          const double up = g.item() / static_cast<double>(n);
          for (std::size_t i = 0; i < pred.size(); ++i) (*gs)[i] += up * (pred[i] - target[i]);
        }
      });
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

Var smooth_l1_loss(Var boxes, const Tensor& t_star, const std::vector<bool>& valid) {
  const Tensor& b = boxes.value();
  require_same_shape(b, t_star, "smooth_l1_loss");
  require_matrix(b, "smooth_l1_loss");
  if (valid.size() != b.rows()) throw DimensionError("smooth_l1_loss: validity flags do not match rows");
  const std::size_t n = count_valid(valid);
  if (n == 0) throw ContractError("smooth_l1_loss: no valid proposals");
  double loss = 0.0;
  for (std::size_t i = 0; i < b.rows(); ++i) {
    if (!valid[i]) continue;
    for (std::size_t c = 0; c < b.cols(); ++c) loss += smooth_l1(b.at(i, c) - t_star.at(i, c));
  }
  loss /= static_cast<double>(n);
  return boxes.tape().record(Tensor::scalar(loss), {boxes},
                             [boxes, t_star, valid, n](Tape& t, const Tensor&, const Tensor& g) {
                               if (Tensor* gb = t.grad_target(boxes)) {
                                 const Tensor& bv = boxes.value();
                                 const double up = g.item() / static_cast<double>(n);
                                 for (std::size_t i = 0; i < bv.rows(); ++i) {
                                   if (!valid[i]) continue;
                                   for (std::size_t c = 0; c < bv.cols(); ++c) {
                                     const double x = bv.at(i, c) - t_star.at(i, c);
                                     gb->at(i, c) += up * std::clamp(x, -1.0, 1.0);
                                   }
                                 }
                               }
                             });
}

GroundingLoss total_grounding_loss(const GroundingPrediction& pred, const GroundTruthScores& gt,
                                   const std::vector<bool>& valid, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("total_grounding_loss: lambda must be non-negative");
  GroundingLoss out;
  out.rank = kl_rank_loss(pred.scores, gt.s_star, valid);
  if (lambda == 0.0) {
    out.total = out.rank;
    return out;
  }
  out.regression = smooth_l1_loss(pred.boxes, gt.t_star, valid);
  out.total = add(out.rank, scale(out.regression, lambda));
  return out;
}

double grounding_accuracy(std::span<const Box> predictions, std::span<const Box> ground_truth) {
  if (predictions.size() != ground_truth.size()) {
    throw DimensionError("grounding_accuracy: prediction and ground-truth counts differ");
  }
  if (predictions.empty()) throw ContractError("grounding_accuracy: no samples");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (iou(predictions[i], ground_truth[i]) > 0.5) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

void register_vqa_head(ParameterSet& set, std::size_t d, std::size_t answers, const RngStream& init) {
  register_linear(set, "head.answer", d, answers, init);
}

void register_grounding_head(ParameterSet& set, std::size_t d, const RngStream& init) {
  register_linear(set, "head.score", d, 1, init);
  register_linear(set, "head.box", d, 4, init);
}

Linear bind_vqa_head(const Binder& bind) { return bind_linear(bind, "head.answer"); }

GroundingHeadParams bind_grounding_head(const Binder& bind) {
  return GroundingHeadParams{bind_linear(bind, "head.score"), bind_linear(bind, "head.box")};
}

}  // namespace muan
