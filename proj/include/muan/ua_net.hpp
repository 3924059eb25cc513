#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "muan/attention.hpp"
#include "muan/task.hpp"

namespace muan {

/// Row-concatenation of m text positions followed by n visual positions.
/// Invalid (padded) rows hold zero features.
struct UnifiedSequence {
  Var z;  // [s x d]
  std::size_t m = 0;
  std::size_t n = 0;
  std::vector<bool> valid;  // s flags

  std::size_t size() const { return m + n; }
};

struct FfnParams {
  Linear expand;    // d -> 4d
  Linear contract;  // 4d -> d
};

struct LayerNormParams {
  Var gain;
  Var bias;
};

struct UABlockParams {
  GsaParams gsa;
  FfnParams ffn;
  LayerNormParams norm1;  // after attention
  LayerNormParams norm2;  // after FFN
};

/// Projections into the unified space. `text` is absent when the text width
/// already equals d, in which case text rows pass through unchanged.
struct EmbedParams {
  std::optional<Linear> text;
  Linear visual;
};

/// Architecture hyper-parameters. Defaults are the reference configuration;
/// toy_profile() gives the desk-scale widths used for synthetic tasks.
struct MuanConfig {
  std::size_t layers = 10;
  std::size_t d = 768;
  std::size_t heads = 8;
  std::size_t d_gate = 96;
  double dropout = 0.1;
  Task task = Task::vqa;
  std::size_t d_x = 768;  // text encoder output width
  std::size_t d_y = 2048; // visual input width
  std::size_t d_embed = 300;
  std::size_t vocab_size = 0;
  std::size_t answers = 3129;
  std::size_t m_max = 14;
  std::size_t n_max = 100;
  bool gated = true;
  bool disable_self = false;
  bool disable_co = false;
  double ln_eps = 1e-6;

  // Throws ConfigError describing the first violated constraint.
  void validate() const;
  static MuanConfig toy_profile(Task task);
};

struct StackOptions {
  std::size_t heads = 1;
  bool gated = true;
  bool disable_self = false;
  bool disable_co = false;
  double dropout = 0.1;
  double ln_eps = 1e-6;

  static StackOptions from(const MuanConfig& config);
};

UnifiedSequence embed_unify(Var x, const std::vector<bool>& x_valid, Var y, const std::vector<bool>& y_valid,
                            const EmbedParams& p);

/// Position-wise FC(4d) - ReLU - Dropout(p) - FC(d).
Var ffn(Var x, const FfnParams& p, double drop, bool train, RngStream& rng);

struct BlockOutput {
  UnifiedSequence z;
  AttentionState state;
};

/// z1 = LN(z + GSA(z)); z2 = LN(z1 + FFN(z1)); padded rows re-zeroed.
BlockOutput ua_block(const UnifiedSequence& z, const UABlockParams& p, const StackOptions& options, bool train,
                     RngStream& rng);

struct StackOutput {
  UnifiedSequence z;
  std::vector<AttentionState> states;
};

StackOutput muan_forward(const UnifiedSequence& z0, std::span<const UABlockParams> blocks, const StackOptions& options,
                         bool train, RngStream& rng);

void register_ua_block(ParameterSet& set, const std::string& prefix, std::size_t d, std::size_t d_gate,
                       const RngStream& init);
UABlockParams bind_ua_block(const Binder& bind, const std::string& prefix);

void register_embed(ParameterSet& set, std::size_t d_x, std::size_t d_y, std::size_t d, const RngStream& init);
EmbedParams bind_embed(const Binder& bind);

}  // namespace muan
