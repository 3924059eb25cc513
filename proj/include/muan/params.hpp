#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "muan/autograd.hpp"
#include "muan/rng.hpp"
#include "muan/tensor.hpp"

namespace muan {

struct Parameter {
  std::string name;
  Tensor value;
};

/// Named, ordered collection of trainable tensors. Indices are stable and
/// double as gradient-buffer slots.
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Tensor& value(const std::string& name) { return params_[index_of(name)].value; }
  const Tensor& value(const std::string& name) const { return params_[index_of(name)].value; }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  std::vector<Tensor> zero_grads() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Binds parameters onto one tape by name; repeated lookups share a node.
class Binder {
 public:
  Binder(Tape& tape, const ParameterSet& set) : tape_(&tape), set_(&set) {}
  Var operator()(const std::string& name) const;
  Tape& tape() const { return *tape_; }
  const ParameterSet& parameters() const { return *set_; }

 private:
  Tape* tape_;
  const ParameterSet* set_;
  mutable std::unordered_map<std::string, Var> bound_;
};

struct Linear {
  Var weight;  // [in x out]
  Var bias;    // [out]
  Var operator()(Var x) const { return linear(x, weight, bias); }
};

// Zero-mean uniform with bound sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, RngStream& rng);

// Registers `<prefix>.w` [in x out] (Xavier) and `<prefix>.b` [out] (zeros).
// The init stream is derived from the prefix, so results do not depend on
// registration order.
void register_linear(ParameterSet& set, const std::string& prefix, std::size_t in, std::size_t out,
                     const RngStream& init);
Linear bind_linear(const Binder& bind, const std::string& prefix);

std::uint64_t name_hash(const std::string& name);

}  // namespace muan
