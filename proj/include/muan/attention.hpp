#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "muan/autograd.hpp"
#include "muan/params.hpp"

namespace muan {

/// Three independent affine maps producing queries, keys and values.
struct ProjectionSet {
  Linear query;
  Linear key;
  Linear value;
};

/// Low-rank bilinear gate: two d -> d_g projections multiplied elementwise,
/// then a d_g -> 2 projection whose sigmoid gives one mask per position for
/// the queries (column 0) and for the keys (column 1).
struct GateParams {
  Linear query_gate;
  Linear key_gate;
  Linear output_gate;
};

struct GsaParams {
  ProjectionSet projection;
  GateParams gate;
  Linear output;  // d x d, applied after head concatenation
};

struct AttentionState {
  Tensor logits;   // [h x s x s], scaled dot products before masking
  Tensor weights;  // [h x s x s], row-stochastic over unmasked keys
  Tensor gate_q;   // [s], empty when gating is off
  Tensor gate_k;   // [s]

  std::size_t heads() const { return weights.empty() ? 0 : weights.shape()[0]; }
  std::size_t positions() const { return weights.empty() ? 0 : weights.shape()[1]; }
  double weight(std::size_t head, std::size_t query, std::size_t key) const;
};

/// Which quadrants of the unified attention map to disable. The sequence is
/// m text positions followed by n visual positions; "self" is text-text and
/// visual-visual, "co" is text-visual and visual-text.
struct QuadrantMask {
  bool disable_self = false;
  bool disable_co = false;
  std::size_t m = 0;
  std::size_t n = 0;

  // Throws ConfigError when both quadrant kinds are disabled.
  void validate() const;
};

struct Qkv {
  Var q;
  Var k;
  Var v;
};

struct Gates {
  Var query;  // [s x 1]
  Var key;    // [s x 1]
};

struct HeadOutput {
  Var features;    // [s x d_head]
  Tensor logits;   // [s x s]
  Tensor weights;  // [s x s]
};

struct GsaOptions {
  std::size_t heads = 1;
  bool gated = true;
};

struct GsaOutput {
  Var features;
  AttentionState state;
};

Qkv project_qkv(Var z, const ProjectionSet& p);
Gates compute_gates(Var q, Var k, const GateParams& g);

// Additive s x s mask: kMaskedLogit on disabled quadrants, 0 elsewhere.
Tensor build_quadrant_mask(const QuadrantMask& quad);
// Quadrant mask plus kMaskedLogit on every column whose key is invalid.
Tensor build_attention_mask(const std::vector<bool>& valid, const QuadrantMask& quad);

/// Scaled dot-product attention for one head. With `gates` non-null the rows
/// of q and k are reweighted by the gate masks before the dot products; v is
/// never gated. The scale is 1/sqrt(width of q).
///
/// Reductions over keys run in a canonical order determined by key content,
/// so the result is bitwise independent of the order keys are stored in.
HeadOutput gated_attention(Var q, Var k, Var v, const Gates* gates, const Tensor& additive_mask);

/// Multi-head gated self-attention over a unified sequence. Gates are
/// computed once from full-width Q and K and shared by every head; head
/// outputs are concatenated and passed through the output projection.
GsaOutput multi_head_gsa(Var z, const GsaParams& p, const std::vector<bool>& valid, const QuadrantMask& quad,
                         const GsaOptions& options);

void register_gsa(ParameterSet& set, const std::string& prefix, std::size_t d, std::size_t d_gate,
                  const RngStream& init);
GsaParams bind_gsa(const Binder& bind, const std::string& prefix);

// Content order used by gated_attention; exposed for tests.
std::vector<std::size_t> canonical_key_order(const Tensor& keys, const Tensor& values, const Tensor& additive_mask);

/// Describes the positions of an exported attention map.
struct AttentionExportInfo {
  std::size_t m = 0;  // text positions
  std::size_t n = 0;  // visual positions
  std::vector<std::string> tokens;        // m entries
  std::vector<long long> object_ids;      // n entries, -1 for non-object rows
};

// Writes <out_dir>/block_<l>/head_<h>.csv (s rows of s weights) and a
// <out_dir>/block_<l>/meta.json sidecar for each block state.
void export_attention_maps(const std::filesystem::path& out_dir, std::span<const AttentionState> states,
                           const AttentionExportInfo& info);

}  // namespace muan
