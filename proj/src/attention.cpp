#include "muan/attention.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>

#include "json.hpp"

namespace muan {

double AttentionState::weight(std::size_t head, std::size_t query, std::size_t key) const {
  const std::size_t s = positions();
  return weights[(head * s + query) * s + key];
}

void QuadrantMask::validate() const {
  if (disable_self && disable_co) {
    throw ConfigError("quadrant mask cannot disable both self- and co-attention (every entry would be masked)");
  }
}

Qkv project_qkv(Var z, const ProjectionSet& p) {
  const Tensor& zv = z.value();
  require_matrix(zv, "project_qkv");
  if (zv.cols() != p.query.weight.value().rows()) {
    throw DimensionError("project_qkv: sequence width " + std::to_string(zv.cols()) + " does not match projection " +
                         shape_string(p.query.weight.shape()));
  }
  return Qkv{p.query(z), p.key(z), p.value(z)};
}

Gates compute_gates(Var q, Var k, const GateParams& g) {
  if (q.value().rows() != k.value().rows()) {
    throw DimensionError("compute_gates: query/key position counts differ, " + shape_string(q.shape()) + " vs " +
                         shape_string(k.shape()));
  }
  Var joint = mul(g.query_gate(q), g.key_gate(k));
  Var masks = sigmoid(g.output_gate(joint));
  return Gates{col_slice(masks, 0, 1), col_slice(masks, 1, 1)};
}

Tensor build_quadrant_mask(const QuadrantMask& quad) {
  quad.validate();
  const std::size_t s = quad.m + quad.n;
  Tensor mask({s, s});
  if (!quad.disable_self && !quad.disable_co) return mask;
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = 0; j < s; ++j) {
      const bool same_modality = (i < quad.m) == (j < quad.m);
      if ((same_modality && quad.disable_self) || (!same_modality && quad.disable_co)) mask.at(i, j) = kMaskedLogit;
    }
  }
  return mask;
}

Tensor build_attention_mask(const std::vector<bool>& valid, const QuadrantMask& quad) {
  if (valid.size() != quad.m + quad.n) {
    throw DimensionError("build_attention_mask: " + std::to_string(valid.size()) + " validity flags for m+n = " +
                         std::to_string(quad.m + quad.n));
  }
  Tensor mask = build_quadrant_mask(quad);
  const std::size_t s = valid.size();
  for (std::size_t j = 0; j < s; ++j) {
    if (valid[j]) continue;
    for (std::size_t i = 0; i < s; ++i) mask.at(i, j) = kMaskedLogit;
  }
  return mask;
}

std::vector<std::size_t> canonical_key_order(const Tensor& keys, const Tensor& values, const Tensor& additive_mask) {
  const std::size_t s = keys.rows();
  if (values.rows() != s || additive_mask.cols() != s) throw DimensionError("canonical_key_order: extents differ");
  const auto bits = [](double x) { return std::bit_cast<std::uint64_t>(x); };
  const auto compare_rows = [&](const Tensor& t, std::size_t a, std::size_t b) {
    const double* ra = t.data() + a * t.cols();
    const double* rb = t.data() + b * t.cols();
    for (std::size_t c = 0; c < t.cols(); ++c) {
      if (bits(ra[c]) != bits(rb[c])) return bits(ra[c]) < bits(rb[c]) ? -1 : 1;
    }
    return 0;
  };
  std::vector<std::size_t> order(s);
  for (std::size_t j = 0; j < s; ++j) order[j] = j;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (int c = compare_rows(keys, a, b)) return c < 0;
    if (int c = compare_rows(values, a, b)) return c < 0;
    for (std::size_t i = 0; i < additive_mask.rows(); ++i) {
      const double ma = additive_mask.at(i, a), mb = additive_mask.at(i, b);
      if (bits(ma) != bits(mb)) return bits(ma) < bits(mb);
    }
    return false;
  });
  return order;
}

namespace {

Tensor permute_columns(const Tensor& t, std::span<const std::size_t> order) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < order.size(); ++j) out.at(i, j) = t.at(i, order[j]);
  return out;
}

Tensor unpermute_columns(const Tensor& t, std::span<const std::size_t> order) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < order.size(); ++j) out.at(i, order[j]) = t.at(i, j);
  return out;
}

}  // namespace

HeadOutput gated_attention(Var q, Var k, Var v, const Gates* gates, const Tensor& additive_mask) {
  const Tensor& qv = q.value();
  require_matrix(qv, "gated_attention");
  const std::size_t s = qv.rows();
  if (k.value().shape() != qv.shape() || v.value().rows() != s) {
    throw DimensionError("gated_attention: q " + shape_string(qv.shape()) + ", k " + shape_string(k.shape()) + ", v " +
                         shape_string(v.shape()));
  }
  if (additive_mask.shape() != Shape{s, s}) {
    throw DimensionError("gated_attention: mask " + shape_string(additive_mask.shape()) + " for " + std::to_string(s) +
                         " positions");
  }
  Var qg = gates ? scale_rows(q, gates->query) : q;
  Var kg = gates ? scale_rows(k, gates->key) : k;

  const std::vector<std::size_t> order = canonical_key_order(kg.value(), v.value(), additive_mask);
  Var keys = gather_rows(kg, order);
  Var values = gather_rows(v, order);
  const Tensor mask = permute_columns(additive_mask, order);

  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(qv.cols()));
  Var logits = scale(matmul_nt(qg, keys), inv_scale);
  Var weights = masked_softmax_rows(logits, mask);
  Var features = matmul(weights, values);
  return HeadOutput{features, unpermute_columns(logits.value(), order), unpermute_columns(weights.value(), order)};
}

GsaOutput multi_head_gsa(Var z, const GsaParams& p, const std::vector<bool>& valid, const QuadrantMask& quad,
                         const GsaOptions& options) {
  const Tensor& zv = z.value();
  require_matrix(zv, "multi_head_gsa");
  const std::size_t s = zv.rows();
  const std::size_t d = p.projection.query.weight.value().cols();
  if (options.heads == 0 || d % options.heads != 0) {
    throw ConfigError("multi_head_gsa: width " + std::to_string(d) + " is not divisible by " +
                      std::to_string(options.heads) + " heads");
  }
  const std::size_t width = d / options.heads;

  Qkv qkv = project_qkv(z, p.projection);
  Gates gates;
  if (options.gated) gates = compute_gates(qkv.q, qkv.k, p.gate);
  const Tensor mask = build_attention_mask(valid, quad);

  GsaOutput out;
  out.state.logits = Tensor({options.heads, s, s});
  out.state.weights = Tensor({options.heads, s, s});
  std::vector<Var> heads;
  heads.reserve(options.heads);
  for (std::size_t h = 0; h < options.heads; ++h) {
    Var qh = options.heads == 1 ? qkv.q : col_slice(qkv.q, h * width, width);
    Var kh = options.heads == 1 ? qkv.k : col_slice(qkv.k, h * width, width);
    Var vh = options.heads == 1 ? qkv.v : col_slice(qkv.v, h * width, width);
    HeadOutput head = gated_attention(qh, kh, vh, options.gated ? &gates : nullptr, mask);
    std::copy_n(head.logits.data(), s * s, out.state.logits.data() + h * s * s);
    std::copy_n(head.weights.data(), s * s, out.state.weights.data() + h * s * s);
    heads.push_back(head.features);
  }
  Var joined = options.heads == 1 ? heads[0] : concat_cols(heads);
  out.features = p.output(joined);
  if (options.gated) {
    out.state.gate_q = gates.query.value().reshaped({s});
    out.state.gate_k = gates.key.value().reshaped({s});
  }
  return out;
}

void register_gsa(ParameterSet& set, const std::string& prefix, std::size_t d, std::size_t d_gate,
                  const RngStream& init) {
  register_linear(set, prefix + ".q", d, d, init);
  register_linear(set, prefix + ".k", d, d, init);
  register_linear(set, prefix + ".v", d, d, init);
  register_linear(set, prefix + ".gate_q", d, d_gate, init);
  register_linear(set, prefix + ".gate_k", d, d_gate, init);
  register_linear(set, prefix + ".gate_out", d_gate, 2, init);
  register_linear(set, prefix + ".out", d, d, init);
}

GsaParams bind_gsa(const Binder& bind, const std::string& prefix) {
  GsaParams p;
  p.projection = ProjectionSet{bind_linear(bind, prefix + ".q"), bind_linear(bind, prefix + ".k"),
                               bind_linear(bind, prefix + ".v")};
  p.gate = GateParams{bind_linear(bind, prefix + ".gate_q"), bind_linear(bind, prefix + ".gate_k"),
                      bind_linear(bind, prefix + ".gate_out")};
  p.output = bind_linear(bind, prefix + ".out");
  return p;
}

namespace {

void append_number(std::string& out, double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, end);
}

}  // namespace

void export_attention_maps(const std::filesystem::path& out_dir, std::span<const AttentionState> states,
                           const AttentionExportInfo& info) {
  const std::size_t s = info.m + info.n;
  if (info.tokens.size() != info.m || info.object_ids.size() != info.n) {
    throw DimensionError("export_attention_maps: token/object labels do not match m/n");
  }
  for (std::size_t l = 0; l < states.size(); ++l) {
    const AttentionState& st = states[l];
    if (st.positions() != s) throw DimensionError("export_attention_maps: state positions differ from m+n");
    char name[32];
    std::snprintf(name, sizeof(name), "block_%02zu", l);
    const std::filesystem::path dir = out_dir / name;
    std::filesystem::create_directories(dir);
    for (std::size_t h = 0; h < st.heads(); ++h) {
      std::string csv;
      for (std::size_t i = 0; i < s; ++i) {
        for (std::size_t j = 0; j < s; ++j) {
          if (j) csv.push_back(',');
          append_number(csv, st.weight(h, i, j));
        }
        csv.push_back('\n');
      }
      std::ofstream(dir / ("head_" + std::to_string(h) + ".csv"), std::ios::binary) << csv;
    }
    nlohmann::json meta;
    meta["block"] = l;
    meta["heads"] = st.heads();
    meta["m"] = info.m;
    meta["n"] = info.n;
    meta["tokens"] = info.tokens;
    meta["object_ids"] = info.object_ids;
    meta["quadrants"] = {{"TT", {{0, info.m}, {0, info.m}}},
                         {"TV", {{0, info.m}, {info.m, s}}},
                         {"VT", {{info.m, s}, {0, info.m}}},
                         {"VV", {{info.m, s}, {info.m, s}}}};
    if (!st.gate_q.empty()) {
      meta["gate_q"] = st.gate_q.values();
      meta["gate_k"] = st.gate_k.values();
    }
    std::ofstream(dir / "meta.json", std::ios::binary) << meta.dump(2) << '\n';
  }
}

}  // namespace muan
