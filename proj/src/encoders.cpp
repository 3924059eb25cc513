#include "muan/encoders.hpp"

#include <algorithm>

namespace muan {

std::size_t raw_visual_width(Task task) {
  return task == Task::vqa ? kAppearanceWidth + kSpatialWidth : 2 * kAppearanceWidth;
}

std::vector<std::size_t> prepare_tokens(std::span<const std::size_t> words, Task task, std::size_t m_max, bool pad) {
  std::vector<std::size_t> ids;
  if (task == Task::vqa) ids.push_back(Vocabulary::kAns);
  const std::size_t kept = std::min(words.size(), m_max);
  ids.insert(ids.end(), words.begin(), words.begin() + static_cast<std::ptrdiff_t>(kept));
  if (pad) ids.resize(m_max + (task == Task::vqa ? 1 : 0), Vocabulary::kPad);
  return ids;
}

TextEncoding encode_text(std::span<const std::size_t> ids, const EncoderParams& enc) {
  Tape& tape = enc.embedding.tape();
  const std::size_t d = enc.gru_hidden.weight.value().rows();
  TextEncoding out;
  out.valid.resize(ids.size());
  for (std::size_t t = 0; t < ids.size(); ++t) out.valid[t] = ids[t] != Vocabulary::kPad;
  if (ids.empty()) {
    out.features = tape.constant(Tensor({0, d}));
    return out;
  }
  Var embedded = embedding(enc.embedding, ids, Vocabulary::kPad);
  Var inputs = enc.gru_input(embedded);  // [m x 3d], input contributions for every step at once

  const Var zero_row = tape.constant(Tensor({1, d}));
  Var h = zero_row;
  std::vector<Var> rows;
  rows.reserve(ids.size());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (!out.valid[t]) {
      rows.push_back(zero_row);
      continue;
    }
    Var x = row_slice(inputs, t, 1);
    Var hh = enc.gru_hidden(h);
    Var reset = sigmoid(add(col_slice(x, 0, d), col_slice(hh, 0, d)));
    Var update = sigmoid(add(col_slice(x, d, d), col_slice(hh, d, d)));
    Var candidate = tanh(add(col_slice(x, 2 * d, d), mul(reset, col_slice(hh, 2 * d, d))));
    h = add(candidate, mul(update, sub(h, candidate)));
    rows.push_back(h);
  }
  out.features = concat_rows(rows);
  return out;
}

VisualInput scene_inputs(const Scene& scene, Task task, std::size_t pad_to) {
  const bool grounding = task == Task::grounding;
  const std::size_t count = grounding ? scene.proposals.size() : scene.objects.size();
  const std::size_t n = std::max(count, pad_to);
  VisualInput in;
  in.appearance = Tensor({n, kAppearanceWidth});
  in.spatial = Tensor({n, kSpatialWidth});
  in.valid.assign(n, false);
  for (std::size_t i = 0; i < count; ++i) {
    const SceneObject& o = grounding ? scene.objects.at(scene.proposals[i].object) : scene.objects[i];
    const Box& box = grounding ? scene.proposals[i].box : o.box;
    in.appearance.at(i, o.shape) = 1.0;
    in.appearance.at(i, kShapeNames.size() + o.color) = 1.0;
    in.appearance.at(i, kShapeNames.size() + kColorNames.size() + o.size) = 1.0;
    const auto sp = spatial_feature(box, scene.width, scene.height);
    std::copy(sp.begin(), sp.end(), in.spatial.row(i).begin());
    in.valid[i] = true;
  }
  return in;
}

Var encode_scene(Tape& tape, const VisualInput& input, const EncoderParams& enc) {
  Var appearance = tape.constant(input.appearance);
  Var spatial = tape.constant(input.spatial);
  Var parts[] = {appearance, enc.spatial ? (*enc.spatial)(spatial) : spatial};
  Var features = enc.visual(concat_cols(parts));
  const bool padded = std::find(input.valid.begin(), input.valid.end(), false) != input.valid.end();
  return padded ? mask_rows(features, input.valid) : features;
}

void register_encoder(ParameterSet& set, Task task, std::size_t vocab_size, std::size_t d_embed, std::size_t d_x,
                      std::size_t d_y, const RngStream& init) {
  if (vocab_size < 2) throw ConfigError("encoder vocabulary must include the pad and [ans] entries");
  RngStream rng = init.split(name_hash("enc.embedding"));
  Tensor table = xavier_uniform(vocab_size, d_embed, rng);
  std::fill(table.row(Vocabulary::kPad).begin(), table.row(Vocabulary::kPad).end(), 0.0);
  set.add("enc.embedding", std::move(table));
  register_linear(set, "enc.gru.input", d_embed, 3 * d_x, init);
  register_linear(set, "enc.gru.hidden", d_x, 3 * d_x, init);
  register_linear(set, "enc.visual", raw_visual_width(task), d_y, init);
  if (task == Task::grounding) register_linear(set, "enc.spatial", kSpatialWidth, kAppearanceWidth, init);
}

EncoderParams bind_encoder(const Binder& bind) {
  EncoderParams p;
  p.embedding = bind("enc.embedding");
  p.gru_input = bind_linear(bind, "enc.gru.input");
  p.gru_hidden = bind_linear(bind, "enc.gru.hidden");
  p.visual = bind_linear(bind, "enc.visual");
  if (bind.parameters().contains("enc.spatial.w")) p.spatial = bind_linear(bind, "enc.spatial");
  return p;
}

}  // namespace muan
