#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "muan/params.hpp"
#include "muan/task.hpp"
#include "muan/toy_data.hpp"

namespace muan {

/// Learned stand-ins for pretrained feature extractors: a word embedding and
/// a single-layer GRU for text, an affine projection for scene features.
struct EncoderParams {
  Var embedding;            // [vocab x d_e], row 0 (padding) frozen at zero
  Linear gru_input;         // d_e -> 3 d_x, column blocks: reset, update, candidate
  Linear gru_hidden;        // d_x -> 3 d_x
  Linear visual;            // raw -> d_y
  std::optional<Linear> spatial;  // grounding: 5-D spatial -> appearance width
};

// Raw per-object width fed to EncoderParams::visual for each task.
std::size_t raw_visual_width(Task task);

// Truncates to m_max words, prepends [ans] for vqa, then pads with the pad id
// up to the full text length when `pad` is set.
std::vector<std::size_t> prepare_tokens(std::span<const std::size_t> words, Task task, std::size_t m_max, bool pad);

struct TextEncoding {
  Var features;             // [m x d_x]
  std::vector<bool> valid;  // false at pad positions, whose rows are zero
};

// Throws VocabularyError for ids outside the embedding table.
TextEncoding encode_text(std::span<const std::size_t> ids, const EncoderParams& enc);

/// Constant per-row scene features before any learned projection.
struct VisualInput {
  Tensor appearance;        // [n x 13] shape/color/size one-hots
  Tensor spatial;           // [n x 5]
  std::vector<bool> valid;
};

// One row per object (vqa) or per proposal (grounding), padded with zero
// invalid rows up to `pad_to`.
VisualInput scene_inputs(const Scene& scene, Task task, std::size_t pad_to = 0);

// vqa: visual([appearance, spatial]); grounding:
// visual([appearance, spatial_proj(spatial)]). Invalid rows are zeroed.
Var encode_scene(Tape& tape, const VisualInput& input, const EncoderParams& enc);

void register_encoder(ParameterSet& set, Task task, std::size_t vocab_size, std::size_t d_embed, std::size_t d_x,
                      std::size_t d_y, const RngStream& init);
EncoderParams bind_encoder(const Binder& bind);

}  // namespace muan
