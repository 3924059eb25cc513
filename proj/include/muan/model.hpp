#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "muan/encoders.hpp"
#include "muan/heads.hpp"
#include "muan/ua_net.hpp"

namespace muan {

/// Architecture plus its parameters. Parameter names:
///   enc.*            text/scene encoders
///   embed.*          projections into the unified space
///   block<l>.*       UA blocks, l = 0..L-1
///   head.*           task head
struct MuanModel {
  MuanConfig config;
  ParameterSet params;

  static MuanModel create(const MuanConfig& config, std::uint64_t seed);
};

std::string block_prefix(std::size_t layer);

/// A sample turned into constant model inputs and targets.
struct PreparedSample {
  Task task = Task::vqa;
  std::vector<std::size_t> text_ids;
  VisualInput visual;
  // vqa
  QuestionType type = QuestionType::count;
  std::size_t answer = 0;
  Tensor answer_target;            // [1 x k] one-hot, or annotator scores for BCE
  std::vector<double> answer_counts;  // k entries
  // grounding
  std::vector<Box> proposals;
  Box gt_box;
  GroundTruthScores gt;
  double canvas_w = 100.0;
  double canvas_h = 100.0;
};

enum class AnswerLoss { softmax, bce };
std::string to_string(AnswerLoss loss);
AnswerLoss parse_answer_loss(const std::string& name);

struct PrepareOptions {
  double eta = 0.5;
  AnswerLoss answer_loss = AnswerLoss::softmax;
  // Pad text to m_max(+1) and visual rows to n_max. Padding never changes
  // valid outputs, so training and evaluation run unpadded.
  bool pad = false;
};

PreparedSample prepare_sample(const ToySample& sample, const MuanConfig& config, const PrepareOptions& options);

struct ForwardResult {
  UnifiedSequence input;
  StackOutput stack;
  Var answer_logits;               // vqa, [1 x k]
  GroundingPrediction grounding;   // grounding, n rows
};

ForwardResult forward(Tape& tape, const MuanModel& model, const PreparedSample& sample, bool train, RngStream& rng);

struct LossTerms {
  Var total;
  double rank = 0.0;        // grounding
  double regression = 0.0;  // grounding, 0 when lambda == 0
};

LossTerms sample_loss(const ForwardResult& out, const PreparedSample& sample, AnswerLoss answer_loss, double lambda);

std::size_t predict_answer(const ForwardResult& out);

struct GroundingGuess {
  std::size_t proposal = 0;
  Box proposal_box;  // the top-ranked proposal as given
  Box refined_box;   // the box head's output for that proposal
};
GroundingGuess predict_box(const ForwardResult& out, const PreparedSample& sample);

}  // namespace muan
