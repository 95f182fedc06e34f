#include "shcanet/nn/module.hpp"

#include <cmath>
#include <random>

namespace shcanet::nn {

std::uint64_t name_seed(std::uint64_t seed, const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = h ^ (seed + 0x9e3779b97f4a7c15ULL);  // splitmix64 finalizer
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename T>
std::size_t ParamStore<T>::add(const std::string& name, Shape shape, ParamRole role, Init init) {
  for (const auto& p : params_) require(p.name != name, "duplicate parameter name " + name);
  Tensor<T> value(shape);
  if (init.kind == Init::Kind::constant) {
    value.fill(static_cast<T>(init.value));
  } else {
    std::mt19937_64 rng(name_seed(seed_, name));
    for (auto& v : value.data()) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
      v = static_cast<T>((2.0 * u - 1.0) * init.value);
    }
  }
  params_.push_back({name, std::move(value), role});
  return params_.size() - 1;
}

template <typename T>
std::size_t ParamStore<T>::add_buffer(const std::string& name, Tensor<T> value) {
  buffers_.push_back({name, std::move(value)});
  return buffers_.size() - 1;
}

template <typename T>
std::size_t ParamStore<T>::count_parameters() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
std::vector<Tensor<T>> Context<T>::gradients() const {
  std::vector<Tensor<T>> out;
  out.reserve(leaves_.size());
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    if (leaves_[i])
      out.push_back(tape_.grad(*leaves_[i]));
    else
      out.emplace_back(store_.params()[i].value.shape());
  }
  return out;
}

template <typename T>
Conv make_conv(ParamStore<T>& store, const std::string& name, int in, int out, int kernel, int stride, int groups, bool bias) {
  require(in > 0 && out > 0 && in % groups == 0 && out % groups == 0, name + ": channels incompatible with groups");
  require(kernel % 2 == 1, name + ": kernel must be odd");
  Conv c;
  c.in_channels = in;
  c.out_channels = out;
  c.kernel = kernel;
  c.opt = {stride, kernel / 2, groups};
  const double bound = 1.0 / std::sqrt(static_cast<double>(in / groups * kernel * kernel));
  c.weight = store.add(name + ".weight", Shape{out, in / groups, kernel, kernel}, ParamRole::conv_weight, Init::uniform(bound));
  if (bias) c.bias = store.add(name + ".bias", Shape{out}, ParamRole::conv_bias, Init::uniform(bound));
  return c;
}

template <typename T>
BatchNorm make_batchnorm(ParamStore<T>& store, const std::string& name, int channels) {
  BatchNorm bn;
  bn.gamma = store.add(name + ".gamma", Shape{channels}, ParamRole::bn_gamma, Init::constant(1.0));
  bn.beta = store.add(name + ".beta", Shape{channels}, ParamRole::bn_beta, Init::constant(0.0));
  bn.running_mean = store.add_buffer(name + ".running_mean", Tensor<T>(Shape{channels}, T{0}));
  bn.running_var = store.add_buffer(name + ".running_var", Tensor<T>(Shape{channels}, T{1}));
  return bn;
}

template <typename T>
ConvBn make_cbs(ParamStore<T>& store, const std::string& name, int in, int out, int kernel, int stride) {
  require(kernel == 1 || kernel == 3 || kernel == 5, name + ": CBS kernel must be 1, 3 or 5");
  require(stride == 1 || stride == 2, name + ": CBS stride must be 1 or 2");
  return {make_conv(store, name + ".conv", in, out, kernel, stride, 1, false), make_batchnorm(store, name + ".bn", out), true};
}

template <typename T>
ConvBn make_dw_bn(ParamStore<T>& store, const std::string& name, int channels, int kernel, int stride) {
  return {make_conv(store, name + ".conv", channels, channels, kernel, stride, channels, false),
          make_batchnorm(store, name + ".bn", channels), false};
}

template <typename T>
ad::Var<T> forward(Context<T>& ctx, const Conv& conv, ad::Var<T> x) {
  std::optional<ad::Var<T>> bias;
  if (conv.bias) bias = ctx.param(*conv.bias);
  return ad::conv2d(x, ctx.param(conv.weight), bias, conv.opt);
}

template <typename T>
ad::Var<T> forward(Context<T>& ctx, const BatchNorm& bn, ad::Var<T> x) {
  return ad::batchnorm2d(x, ctx.param(bn.gamma), ctx.param(bn.beta),
                         ad::BnRunningStats<T>{ctx.buffer(bn.running_mean), ctx.buffer(bn.running_var)}, ctx.mode(),
                         ctx.bn_momentum(), ctx.bn_eps());
}

template <typename T>
ad::Var<T> forward(Context<T>& ctx, const ConvBn& block, ad::Var<T> x) {
  auto y = forward(ctx, block.bn, forward(ctx, block.conv, x));
  return block.silu ? ad::silu(y) : y;
}

#define SHCANET_INSTANTIATE(T)                                                                         \
  template class ParamStore<T>;                                                                        \
  template class Context<T>;                                                                           \
  template Conv make_conv(ParamStore<T>&, const std::string&, int, int, int, int, int, bool);          \
  template BatchNorm make_batchnorm(ParamStore<T>&, const std::string&, int);                          \
  template ConvBn make_cbs(ParamStore<T>&, const std::string&, int, int, int, int);                    \
  template ConvBn make_dw_bn(ParamStore<T>&, const std::string&, int, int, int);                       \
  template ad::Var<T> forward(Context<T>&, const Conv&, ad::Var<T>);                                   \
  template ad::Var<T> forward(Context<T>&, const BatchNorm&, ad::Var<T>);                              \
  template ad::Var<T> forward(Context<T>&, const ConvBn&, ad::Var<T>);

SHCANET_INSTANTIATE(float)
SHCANET_INSTANTIATE(double)

#undef SHCANET_INSTANTIATE

}  // namespace shcanet::nn
