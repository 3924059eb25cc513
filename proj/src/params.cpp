#include "muan/params.hpp"

#include <cmath>

namespace muan {

std::size_t ParameterSet::add(std::string name, Tensor value) {
  if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), std::move(value)});
  return params_.size() - 1;
}

std::size_t ParameterSet::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.value.numel();
  return n;
}

std::vector<Tensor> ParameterSet::zero_grads() const {
  std::vector<Tensor> grads;
  grads.reserve(params_.size());
  for (const Parameter& p : params_) grads.emplace_back(p.value.shape());
  return grads;
}

Var Binder::operator()(const std::string& name) const {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const std::size_t slot = set_->index_of(name);
  Var v = tape_->param((*set_)[slot].value, slot);
  bound_.emplace(name, v);
  return v;
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w({fan_in, fan_out});
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
  return w;
}

std::uint64_t name_hash(const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void register_linear(ParameterSet& set, const std::string& prefix, std::size_t in, std::size_t out,
                     const RngStream& init) {
  RngStream rng = init.split(name_hash(prefix));
  set.add(prefix + ".w", xavier_uniform(in, out, rng));
  set.add(prefix + ".b", Tensor({out}));
}

Linear bind_linear(const Binder& bind, const std::string& prefix) {
  return Linear{bind(prefix + ".w"), bind(prefix + ".b")};
}

}  // namespace muan
