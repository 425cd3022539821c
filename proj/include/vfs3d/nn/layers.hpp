#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vfs3d/core/hash.hpp"
#include "vfs3d/core/rng.hpp"
#include "vfs3d/nn/attention.hpp"
#include "vfs3d/nn/image_ops.hpp"
#include "vfs3d/nn/ops.hpp"

namespace vfs3d::nn {

/// Learning-rate group: backbone encoders/decoders train in `block`, fusion
/// layers and heads in `main`.
enum class ParamGroup : std::uint8_t { main = 0, block = 1 };

inline std::string_view to_string(ParamGroup g) { return g == ParamGroup::main ? "main" : "block"; }

struct Parameter {
  std::string name;
  Var var;
  ParamGroup group = ParamGroup::main;
};

struct InitSpec {
  enum class Kind { zeros, ones, normal } kind = Kind::normal;
  double stddev = 0.0;

  static InitSpec zeros() { return {Kind::zeros, 0}; }
  static InitSpec ones() { return {Kind::ones, 0}; }
  static InitSpec normal(double s) { return {Kind::normal, s}; }
  /// N(0, gain / sqrt(fan_in)).
  static InitSpec fan_in(std::size_t fan, double gain = 1.0) {
    return {Kind::normal, gain / std::sqrt(static_cast<double>(fan))};
  }
};

/// Owns every named parameter of a model. Initial values depend only on the
/// store seed and the parameter name, so construction order does not matter.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  Var add(const std::string& name, Shape shape, InitSpec init, ParamGroup group) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    std::vector<real> values(numel(shape), real(0));
    switch (init.kind) {
      case InitSpec::Kind::zeros: break;
      case InitSpec::Kind::ones: std::fill(values.begin(), values.end(), real(1)); break;
      case InitSpec::Kind::normal: {
        Rng rng = Rng(seed_).split(fnv1a(name));
        for (auto& v : values) v = static_cast<real>(rng.normal(0.0, init.stddev));
        break;
      }
    }
    Var v = Var::parameter(std::move(shape), std::move(values));
    index_[name] = params_.size();
    params_.push_back({name, v, group});
    return v;
  }

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  std::size_t size() const { return params_.size(); }

  const Parameter* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  std::vector<const Parameter*> with_prefix(std::string_view prefix) const {
    std::vector<const Parameter*> out;
    for (const auto& p : params_)
      if (std::string_view(p.name).starts_with(prefix)) out.push_back(&p);
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------

/// y = x W + b with W: in x out.
struct Linear {
  Var weight, bias;

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, ParamGroup group,
         bool with_bias = true, double gain = 1.0) {
    weight = store.add(name + ".weight", {in, out}, InitSpec::fan_in(in, gain), group);
    if (with_bias) bias = store.add(name + ".bias", {out}, InitSpec::zeros(), group);
  }

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  Var operator()(const Var& x) const {
    Var y = matmul(x, weight);
    return bias.defined() ? add(y, bias) : y;
  }
};

inline Var linear_forward(const Var& x, const Var& weight, const Var& bias) {
  Var y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

struct LayerNorm {
  Var gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, std::size_t width, ParamGroup group) {
    gamma = store.add(name + ".gamma", {width}, InitSpec::ones(), group);
    beta = store.add(name + ".beta", {width}, InitSpec::zeros(), group);
  }

  Var operator()(const Var& x) const { return layer_norm(x, gamma, beta); }
};

struct Conv2d {
  Var weight, bias;
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
         int stride_, ParamGroup group, double gain = std::sqrt(2.0))
      : stride(stride_), pad(static_cast<int>(kernel / 2)) {
    weight = store.add(name + ".weight", {out, in, kernel, kernel}, InitSpec::fan_in(in * kernel * kernel, gain), group);
    bias = store.add(name + ".bias", {out}, InitSpec::zeros(), group);
  }

  Var operator()(const Var& x) const { return conv2d(x, weight, bias, stride, pad); }
};

/// Two-layer GELU perceptron.
struct FeedForward {
  Linear fc1, fc2;

  FeedForward() = default;
  FeedForward(ParamStore& store, const std::string& name, std::size_t width, std::size_t hidden, ParamGroup group)
      : fc1(store, name + ".fc1", width, hidden, group), fc2(store, name + ".fc2", hidden, width, group) {}

  Var operator()(const Var& x) const { return fc2(gelu(fc1(x))); }
};

/// Multi-head attention with input projections and an output projection.
/// The key projection has no bias: softmax is invariant to it.
struct MultiHeadAttention {
  Linear q_proj, k_proj, v_proj, o_proj;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, std::size_t q_in, std::size_t kv_in,
                     std::size_t width, std::size_t heads_, ParamGroup group)
      : heads(heads_) {
    if (heads_ == 0 || width % heads_ != 0)
      throw ConfigError("attention width " + std::to_string(width) + " not divisible by " + std::to_string(heads_) +
                        " heads");
    q_proj = Linear(store, name + ".q", q_in, width, group);
    k_proj = Linear(store, name + ".k", kv_in, width, group, false);
    v_proj = Linear(store, name + ".v", kv_in, width, group);
    o_proj = Linear(store, name + ".o", width, width, group);
  }

  std::size_t width() const { return o_proj.out_features(); }

  /// Cross-attention: every query attends to every unmasked key.
  Var operator()(const Var& q, const Var& k, const Var& v, std::span<const std::uint8_t> key_mask = {},
                 AttentionWeights* weights = nullptr) const {
    if (k.dim(0) != v.dim(0)) throw ShapeError("mha: key and value row counts differ");
    std::vector<AttentionBlock> blocks{dense_block(q.dim(0), k.dim(0))};
    Var ctx = attention(q_proj(q), k_proj(k), v_proj(v), heads, std::move(blocks), key_mask, weights);
    return o_proj(ctx);
  }

  /// Self-attention restricted to disjoint groups of rows.
  Var grouped(const Var& x, const std::vector<std::vector<std::size_t>>& groups,
              AttentionWeights* weights = nullptr) const {
    std::vector<AttentionBlock> blocks;
    blocks.reserve(groups.size());
    for (const auto& g : groups) blocks.push_back({g, g});
    Var ctx = attention(q_proj(x), k_proj(x), v_proj(x), heads, std::move(blocks), {}, weights);
    return o_proj(ctx);
  }
};

}  // namespace vfs3d::nn
