#include "muan/ua_net.hpp"

#include <algorithm>

namespace muan {

std::string to_string(Task task) { return task == Task::vqa ? "vqa" : "grounding"; }

Task parse_task(const std::string& name) {
  if (name == "vqa") return Task::vqa;
  if (name == "grounding") return Task::grounding;
  throw ConfigError("unknown task '" + name + "' (expected vqa or grounding)");
}

void MuanConfig::validate() const {
  if (layers < 1) throw ConfigError("model.layers must be at least 1");
  if (d == 0 || heads == 0 || d % heads != 0) {
    throw ConfigError("model.d (" + std::to_string(d) + ") must be divisible by model.heads (" +
                      std::to_string(heads) + ")");
  }
  if (d_gate == 0) throw ConfigError("model.d_gate must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must lie in [0, 1)");
  if (d_x == 0 || d_y == 0 || d_embed == 0) throw ConfigError("model widths must be positive");
  if (answers == 0) throw ConfigError("model.answers must be positive");
  if (m_max == 0 || n_max == 0) throw ConfigError("model.m_max and model.n_max must be positive");
  if (!(ln_eps > 0.0)) throw ConfigError("model.ln_eps must be positive");
  QuadrantMask{disable_self, disable_co, 0, 0}.validate();
}

MuanConfig MuanConfig::toy_profile(Task task) {
  MuanConfig c;
  c.task = task;
  c.layers = 2;
  c.d = 64;
  c.heads = 4;
  c.d_gate = 16;
  c.d_x = 64;
  c.d_y = 32;
  c.d_embed = 32;
  c.answers = 26;
  c.m_max = task == Task::vqa ? 14 : 15;
  c.n_max = task == Task::vqa ? 10 : 100;
  return c;
}

StackOptions StackOptions::from(const MuanConfig& config) {
  StackOptions o;
  o.heads = config.heads;
  o.gated = config.gated;
  o.disable_self = config.disable_self;
  o.disable_co = config.disable_co;
  o.dropout = config.dropout;
  o.ln_eps = config.ln_eps;
  return o;
}

UnifiedSequence embed_unify(Var x, const std::vector<bool>& x_valid, Var y, const std::vector<bool>& y_valid,
                            const EmbedParams& p) {
  if (x.value().rows() != x_valid.size() || y.value().rows() != y_valid.size()) {
    throw DimensionError("embed_unify: validity flags do not match row counts");
  }
  Var text = p.text ? (*p.text)(x) : x;
  Var visual = p.visual(y);
  Var parts[] = {text, visual};
  UnifiedSequence seq;
  seq.m = x_valid.size();
  seq.n = y_valid.size();
  seq.valid.assign(x_valid.begin(), x_valid.end());
  seq.valid.insert(seq.valid.end(), y_valid.begin(), y_valid.end());
  seq.z = mask_rows(concat_rows(parts), seq.valid);
  return seq;
}

Var ffn(Var x, const FfnParams& p, double drop, bool train, RngStream& rng) {
  Var hidden = relu(p.expand(x));
  hidden = dropout(hidden, drop, train, rng);
  return p.contract(hidden);
}

BlockOutput ua_block(const UnifiedSequence& z, const UABlockParams& p, const StackOptions& options, bool train,
                     RngStream& rng) {
  const QuadrantMask quad{options.disable_self, options.disable_co, z.m, z.n};
  GsaOutput attended = multi_head_gsa(z.z, p.gsa, z.valid, quad, GsaOptions{options.heads, options.gated});
  Var z1 = layer_norm(add(z.z, attended.features), p.norm1.gain, p.norm1.bias, options.ln_eps);
  Var z2 = layer_norm(add(z1, ffn(z1, p.ffn, options.dropout, train, rng)), p.norm2.gain, p.norm2.bias, options.ln_eps);
  const bool any_padding = std::find(z.valid.begin(), z.valid.end(), false) != z.valid.end();
  if (any_padding) z2 = mask_rows(z2, z.valid);
  BlockOutput out;
  out.z = UnifiedSequence{z2, z.m, z.n, z.valid};
  out.state = std::move(attended.state);
  return out;
}

StackOutput muan_forward(const UnifiedSequence& z0, std::span<const UABlockParams> blocks, const StackOptions& options,
                         bool train, RngStream& rng) {
  if (blocks.empty()) throw ConfigError("muan_forward: at least one UA block is required");
  StackOutput out;
  out.z = z0;
  out.states.reserve(blocks.size());
  for (const UABlockParams& block : blocks) {
    BlockOutput b = ua_block(out.z, block, options, train, rng);
    out.z = std::move(b.z);
    out.states.push_back(std::move(b.state));
  }
  return out;
}

void register_ua_block(ParameterSet& set, const std::string& prefix, std::size_t d, std::size_t d_gate,
                       const RngStream& init) {
  register_gsa(set, prefix + ".gsa", d, d_gate, init);
  register_linear(set, prefix + ".ffn.expand", d, 4 * d, init);
  register_linear(set, prefix + ".ffn.contract", 4 * d, d, init);
  for (const char* norm : {".norm1", ".norm2"}) {
    set.add(prefix + norm + ".gain", Tensor({d}, 1.0));
    set.add(prefix + norm + ".bias", Tensor({d}));
  }
}

UABlockParams bind_ua_block(const Binder& bind, const std::string& prefix) {
  UABlockParams p;
  p.gsa = bind_gsa(bind, prefix + ".gsa");
  p.ffn = FfnParams{bind_linear(bind, prefix + ".ffn.expand"), bind_linear(bind, prefix + ".ffn.contract")};
  p.norm1 = LayerNormParams{bind(prefix + ".norm1.gain"), bind(prefix + ".norm1.bias")};
  p.norm2 = LayerNormParams{bind(prefix + ".norm2.gain"), bind(prefix + ".norm2.bias")};
  return p;
}

void register_embed(ParameterSet& set, std::size_t d_x, std::size_t d_y, std::size_t d, const RngStream& init) {
  if (d_x != d) register_linear(set, "embed.text", d_x, d, init);
  register_linear(set, "embed.visual", d_y, d, init);
}

EmbedParams bind_embed(const Binder& bind) {
  EmbedParams p;
  if (bind.parameters().contains("embed.text.w")) p.text = bind_linear(bind, "embed.text");
  p.visual = bind_linear(bind, "embed.visual");
  return p;
}

}  // namespace muan
