#pragma once

// Parameter storage and the primitive layers (conv, batchnorm, CBS) that the
// network blocks are assembled from. Layers are plain structs of indices into
// a ParamStore; forward functions take a Context bound to one tape.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "shcanet/ad/ops.hpp"

namespace shcanet::nn {

enum class ParamRole { conv_weight, conv_bias, bn_gamma, bn_beta, fusion_weight };

// Weight decay applies to convolution weights only.
inline bool decays(ParamRole role) { return role == ParamRole::conv_weight; }

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  ParamRole role;
};

// Non-trainable state saved with the model (batchnorm running statistics).
template <typename T>
struct Buffer {
  std::string name;
  Tensor<T> value;
};

struct Init {
  enum class Kind { uniform, constant } kind = Kind::constant;
  double value = 0.0;  // half-width for uniform, fill value for constant
  static Init uniform(double bound) { return {Kind::uniform, bound}; }
  static Init constant(double v) { return {Kind::constant, v}; }
};

// Owns every parameter and buffer of a model. Each tensor is initialized from
// an RNG stream derived from (seed, name), so adding or removing a layer never
// changes the initial values of the others.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  std::size_t add(const std::string& name, Shape shape, ParamRole role, Init init);
  std::size_t add_buffer(const std::string& name, Tensor<T> value);

  std::vector<Parameter<T>>& params() { return params_; }
  const std::vector<Parameter<T>>& params() const { return params_; }
  std::vector<Buffer<T>>& buffers() { return buffers_; }
  const std::vector<Buffer<T>>& buffers() const { return buffers_; }

  std::size_t count_parameters() const;
  std::uint64_t seed() const { return seed_; }

  // Same names/shapes, values converted to another precision.
  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out(seed_);
    for (const auto& p : params_) out.params().push_back({p.name, p.value.template cast<U>(), p.role});
    for (const auto& b : buffers_) out.buffers().push_back({b.name, b.value.template cast<U>()});
    return out;
  }

 private:
  std::uint64_t seed_;
  std::vector<Parameter<T>> params_;
  std::vector<Buffer<T>> buffers_;
};

// Forward-pass environment: one tape, one store, one batchnorm mode.
template <typename T>
class Context {
 public:
  Context(ad::Tape<T>& tape, ParamStore<T>& store, ad::BnMode mode, T bn_momentum = T(0.03), T bn_eps = T(1e-3))
      : tape_(tape), store_(store), mode_(mode), bn_momentum_(bn_momentum), bn_eps_(bn_eps),
        leaves_(store.params().size()) {}

  ad::Tape<T>& tape() { return tape_; }
  ad::BnMode mode() const { return mode_; }
  T bn_momentum() const { return bn_momentum_; }
  T bn_eps() const { return bn_eps_; }

  // Leaf for parameter `index`, created on first use and reused afterwards.
  ad::Var<T> param(std::size_t index) {
    auto& slot = leaves_[index];
    if (!slot) slot = tape_.leaf(store_.params()[index].value, true);
    return *slot;
  }
  // Use `v` in place of parameter `index` (gradient checks feed their own leaves).
  void bind(std::size_t index, ad::Var<T> v) { leaves_[index] = v; }
  Tensor<T>* buffer(std::size_t index) { return &store_.buffers()[index].value; }

  // Per-parameter gradients after tape().backward(); zeros for unused parameters.
  std::vector<Tensor<T>> gradients() const;

 private:
  ad::Tape<T>& tape_;
  ParamStore<T>& store_;
  ad::BnMode mode_;
  T bn_momentum_;
  T bn_eps_;
  std::vector<std::optional<ad::Var<T>>> leaves_;
};

struct Conv {
  std::size_t weight = 0;
  std::optional<std::size_t> bias;
  int in_channels = 0, out_channels = 0, kernel = 1;
  ad::Conv2dOptions opt;
};

struct BatchNorm {
  std::size_t gamma = 0, beta = 0, running_mean = 0, running_var = 0;
};

// Conv2d (no bias) + BatchNorm, optionally followed by SiLU.
struct ConvBn {
  Conv conv;
  BatchNorm bn;
  bool silu = true;
};

// Kaiming-uniform style bound 1/sqrt(fan_in), as used for conv layers by common frameworks.
template <typename T>
Conv make_conv(ParamStore<T>& store, const std::string& name, int in, int out, int kernel, int stride, int groups, bool bias);

template <typename T>
BatchNorm make_batchnorm(ParamStore<T>& store, const std::string& name, int channels);

// CBS: Conv + BatchNorm + SiLU with "same" padding kernel/2. Kernel in {1,3,5}, stride in {1,2}.
template <typename T>
ConvBn make_cbs(ParamStore<T>& store, const std::string& name, int in, int out, int kernel, int stride);

// Depthwise conv + BatchNorm, no activation.
template <typename T>
ConvBn make_dw_bn(ParamStore<T>& store, const std::string& name, int channels, int kernel, int stride);

template <typename T>
ad::Var<T> forward(Context<T>& ctx, const Conv& conv, ad::Var<T> x);
template <typename T>
ad::Var<T> forward(Context<T>& ctx, const BatchNorm& bn, ad::Var<T> x);
template <typename T>
ad::Var<T> forward(Context<T>& ctx, const ConvBn& block, ad::Var<T> x);

std::uint64_t name_seed(std::uint64_t seed, const std::string& name);

}  // namespace shcanet::nn
