#include "muan/model.hpp"

#include <algorithm>

namespace muan {

std::string block_prefix(std::size_t layer) { return "block" + std::to_string(layer); }

MuanModel MuanModel::create(const MuanConfig& config, std::uint64_t seed) {
  config.validate();
  if (config.vocab_size < 2) throw ConfigError("model.vocab_size must cover the pad and [ans] entries");
  MuanModel model;
  model.config = config;
  const RngStream init = RngStream(seed).split(name_hash("init"));
  register_encoder(model.params, config.task, config.vocab_size, config.d_embed, config.d_x, config.d_y, init);
  register_embed(model.params, config.d_x, config.d_y, config.d, init);
  for (std::size_t l = 0; l < config.layers; ++l) register_ua_block(model.params, block_prefix(l), config.d, config.d_gate, init);
  if (config.task == Task::vqa) {
    register_vqa_head(model.params, config.d, config.answers, init);
  } else {
    register_grounding_head(model.params, config.d, init);
  }
  return model;
}

std::string to_string(AnswerLoss loss) { return loss == AnswerLoss::softmax ? "softmax" : "bce"; }

AnswerLoss parse_answer_loss(const std::string& name) {
  if (name == "softmax") return AnswerLoss::softmax;
  if (name == "bce") return AnswerLoss::bce;
  throw ConfigError("unknown answer loss '" + name + "' (expected softmax or bce)");
}

PreparedSample prepare_sample(const ToySample& sample, const MuanConfig& config, const PrepareOptions& options) {
  if (sample.task != config.task) {
    throw ConfigError("sample task " + to_string(sample.task) + " does not match model task " + to_string(config.task));
  }
  PreparedSample p;
  p.task = sample.task;
  p.text_ids = prepare_tokens(sample.tokens, sample.task, config.m_max, options.pad);
  const std::size_t rows = sample.task == Task::vqa ? sample.scene.objects.size() : sample.scene.proposals.size();
  if (rows > config.n_max) {
    throw ConfigError("sample has " + std::to_string(rows) + " visual rows, more than model.n_max = " +
                      std::to_string(config.n_max));
  }
  if (rows == 0) throw ContractError("sample has no visual rows");
  p.visual = scene_inputs(sample.scene, sample.task, options.pad ? config.n_max : 0);
  p.canvas_w = sample.scene.width;
  p.canvas_h = sample.scene.height;

  if (sample.task == Task::vqa) {
    const VqaLabel& label = sample.vqa.value();
    if (label.answer >= config.answers) {
      throw LabelError("answer id " + std::to_string(label.answer) + " outside model.answers = " +
                       std::to_string(config.answers));
    }
    p.type = label.type;
    p.answer = label.answer;
    p.answer_counts.assign(config.answers, 0.0);
    for (const auto& [a, c] : label.annotator_counts) {
      if (a >= config.answers) throw LabelError("annotator answer outside model.answers");
      p.answer_counts[a] = static_cast<double>(c);
    }
    p.answer_target = Tensor({1, config.answers});
    if (options.answer_loss == AnswerLoss::softmax) {
      p.answer_target[label.answer] = 1.0;
    } else {
      for (std::size_t a = 0; a < config.answers; ++a) p.answer_target[a] = vqa_accuracy(p.answer_counts[a]);
    }
  } else {
    const GroundingLabel& label = sample.grounding.value();
    for (const Proposal& prop : sample.scene.proposals) p.proposals.push_back(prop.box);
    p.gt_box = label.box;
    p.gt = make_ground_truth_scores(p.proposals, label.box, options.eta, p.canvas_w, p.canvas_h);
    const std::size_t n = p.visual.valid.size();
    if (n > p.proposals.size()) {
      p.gt.s_star.resize(n, 0.0);
      Tensor t({n, 4});
      std::copy(p.gt.t_star.values().begin(), p.gt.t_star.values().end(), t.data());
      p.gt.t_star = std::move(t);
    }
  }
  return p;
}

ForwardResult forward(Tape& tape, const MuanModel& model, const PreparedSample& sample, bool train, RngStream& rng) {
  const MuanConfig& cfg = model.config;
  if (sample.task != cfg.task) throw ConfigError("forward: sample task differs from model task");
  Binder bind(tape, model.params);
  const EncoderParams enc = bind_encoder(bind);
  TextEncoding text = encode_text(sample.text_ids, enc);
  Var visual = encode_scene(tape, sample.visual, enc);

  ForwardResult out;
  out.input = embed_unify(text.features, text.valid, visual, sample.visual.valid, bind_embed(bind));
  std::vector<UABlockParams> blocks;
  blocks.reserve(cfg.layers);
  for (std::size_t l = 0; l < cfg.layers; ++l) blocks.push_back(bind_ua_block(bind, block_prefix(l)));
  out.stack = muan_forward(out.input, blocks, StackOptions::from(cfg), train, rng);

  const UnifiedSequence& z = out.stack.z;
  if (cfg.task == Task::vqa) {
    out.answer_logits = vqa_head(row_slice(z.z, 0, 1), bind_vqa_head(bind));
  } else {
    out.grounding = grounding_head(row_slice(z.z, z.m, z.n), bind_grounding_head(bind));
  }
  return out;
}

LossTerms sample_loss(const ForwardResult& out, const PreparedSample& sample, AnswerLoss answer_loss, double lambda) {
  LossTerms terms;
  if (sample.task == Task::vqa) {
    terms.total = answer_loss == AnswerLoss::softmax ? softmax_ce_loss(out.answer_logits, sample.answer_target)
                                                     : bce_loss(out.answer_logits, sample.answer_target);
    return terms;
  }
  GroundingLoss g = total_grounding_loss(out.grounding, sample.gt, sample.visual.valid, lambda);
  terms.total = g.total;
  terms.rank = g.rank.value().item();
  if (g.regression.valid()) terms.regression = g.regression.value().item();
  return terms;
}

std::size_t predict_answer(const ForwardResult& out) {
  const Tensor& logits = out.answer_logits.value();
  return static_cast<std::size_t>(std::max_element(logits.values().begin(), logits.values().end()) -
                                  logits.values().begin());
}

GroundingGuess predict_box(const ForwardResult& out, const PreparedSample& sample) {
  const Tensor& scores = out.grounding.scores.value();
  GroundingGuess g;
  bool found = false;
  for (std::size_t i = 0; i < sample.proposals.size(); ++i) {
    if (!sample.visual.valid[i]) continue;
    if (!found || scores[i] > scores[g.proposal]) g.proposal = i, found = true;
  }
  if (!found) throw ContractError("predict_box: no valid proposals");
  g.proposal_box = sample.proposals[g.proposal];
  g.refined_box = decode_center_size(out.grounding.boxes.value().row(g.proposal), sample.canvas_w, sample.canvas_h);
  return g;
}

}  // namespace muan
