#include "shcanet/nn/blocks.hpp"

namespace shcanet::nn {

void BackboneConfig::validate() const {
  for (const auto& s : stem) {
    require(s.kernel == 1 || s.kernel == 3 || s.kernel == 5, "stem kernel must be 1, 3 or 5");
    require(s.stride == 2, "stem blocks must have stride 2");
    require(s.in_channels > 0 && s.out_channels > 0, "stem channels must be positive");
  }
  require(stem[0].in_channels == 3, "stem input must have 3 channels");
  require(stem[1].in_channels == stem[0].out_channels, "stem blocks do not chain");
  for (const auto& s : stages) {
    require(s.channels > 0 && s.channels % 2 == 0, "stage channels must be positive and even");
    require(s.repeats >= 1, "stage repeats must be >= 1");
  }
  require(dw_kernel % 2 == 1 && dw_kernel > 0, "depthwise kernel must be odd");
  require(ca_reduction > 0, "attention reduction must be positive");
}

BackboneConfig BackboneConfig::desk() { return {}; }

BackboneConfig BackboneConfig::full_scale() {
  BackboneConfig c;
  c.stem = {CbsConfig{3, 24, 3, 2}, CbsConfig{24, 24, 3, 2}};
  c.stages = {StageConfig{116, 4}, StageConfig{232, 8}, StageConfig{464, 4}};
  return c;
}

template <typename T>
ShuffleUnit make_shuffle_unit(ParamStore<T>& store, const std::string& name, const ShuffleUnitConfig& cfg) {
  require(cfg.stride == 1 || cfg.stride == 2, name + ": shuffle unit stride must be 1 or 2");
  ShuffleUnit u;
  u.cfg = cfg;
  if (cfg.stride == 1) {
    require(cfg.channels % 2 == 0, name + ": stride-1 shuffle unit needs an even channel count, got " +
                                       std::to_string(cfg.channels));
    const int half = cfg.channels / 2;
    u.pw1 = make_cbs(store, name + ".right.pw1", half, half, 1, 1);
    u.dw = make_dw_bn(store, name + ".right.dw", half, cfg.dw_kernel, 1);
    u.pw2 = make_cbs(store, name + ".right.pw2", half, half, 1, 1);
  } else {
    const int out = cfg.output_channels();
    require(out % 2 == 0, name + ": stride-2 shuffle unit output channels must be even");
    const int half = out / 2;
    u.left_dw = make_dw_bn(store, name + ".left.dw", cfg.channels, cfg.dw_kernel, 2);
    u.left_pw = make_cbs(store, name + ".left.pw", cfg.channels, half, 1, 1);
    u.pw1 = make_cbs(store, name + ".right.pw1", cfg.channels, half, 1, 1);
    u.dw = make_dw_bn(store, name + ".right.dw", half, cfg.dw_kernel, 2);
    u.pw2 = make_cbs(store, name + ".right.pw2", half, half, 1, 1);
  }
  return u;
}

template <typename T>
CoordAtt make_coordatt(ParamStore<T>& store, const std::string& name, const CoordAttConfig& cfg) {
  require(cfg.channels > 0 && cfg.reduction > 0, name + ": bad attention config");
  const int mid = cfg.mid_channels();
  require(mid >= 8, name + ": attention needs at least 8 intermediate channels");
  CoordAtt ca;
  ca.cfg = cfg;
  ca.reduce = make_conv(store, name + ".reduce", cfg.channels, mid, 1, 1, 1, true);
  ca.gate_h = make_conv(store, name + ".gate_h", mid, cfg.channels, 1, 1, 1, true);
  ca.gate_w = make_conv(store, name + ".gate_w", mid, cfg.channels, 1, 1, 1, true);
  return ca;
}

template <typename T>
Stage make_stage(ParamStore<T>& store, const std::string& name, int in_channels, const StageConfig& cfg,
                 int dw_kernel, bool attention, int ca_reduction, Activation ca_activation) {
  Stage s;
  s.units.push_back(make_shuffle_unit(store, name + ".unit0", ShuffleUnitConfig{in_channels, 2, dw_kernel, cfg.channels}));
  for (int r = 1; r < cfg.repeats; ++r)
    s.units.push_back(make_shuffle_unit(store, name + ".unit" + std::to_string(r),
                                        ShuffleUnitConfig{cfg.channels, 1, dw_kernel, 0}));
  if (attention)
    s.attention = make_coordatt(store, name + ".attention", CoordAttConfig{cfg.channels, ca_reduction, 8, ca_activation});
  return s;
}

template <typename T>
Backbone make_backbone(ParamStore<T>& store, const std::string& name, const BackboneConfig& cfg) {
  cfg.validate();
  Backbone b;
  b.cfg = cfg;
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& s = cfg.stem[i];
    b.stem[i] = make_cbs(store, name + ".stem" + std::to_string(i), s.in_channels, s.out_channels, s.kernel, s.stride);
  }
  int in = cfg.stem[1].out_channels;
  for (std::size_t i = 0; i < 3; ++i) {
    b.stages[i] = make_stage(store, name + ".stage" + std::to_string(i + 1), in, cfg.stages[i], cfg.dw_kernel,
                             cfg.attention, cfg.ca_reduction, cfg.ca_activation);
    in = cfg.stages[i].channels;
  }
  return b;
}

template <typename T>
ad::Var<T> activate(ad::Var<T> x, Activation kind) {
  switch (kind) {
    case Activation::hardswish: return ad::hardswish(x);
    case Activation::relu: return ad::relu(x);
    case Activation::silu: return ad::silu(x);
  }
  return x;
}

template <typename T>
ad::Var<T> forward(Context<T>& ctx, const ShuffleUnit& unit, ad::Var<T> x) {
  require(x.shape().rank() == 4, "shuffle unit expects NCHW input");
  require(x.shape().c() == unit.cfg.channels, "shuffle unit expects " + std::to_string(unit.cfg.channels) +
                                                  " channels, got " + std::to_string(x.shape().c()));
  auto right_branch = [&](ad::Var<T> r) { return forward(ctx, unit.pw2, forward(ctx, unit.dw, forward(ctx, unit.pw1, r))); };
  if (unit.cfg.stride == 1) {
    const int half = unit.cfg.channels / 2;
    auto halves = ad::split(x, 1, {half, half});
    return ad::channel_shuffle(ad::concat<T>({halves[0], right_branch(halves[1])}, 1), 2);
  }
  auto left = forward(ctx, unit.left_pw, forward(ctx, unit.left_dw, x));
  return ad::channel_shuffle(ad::concat<T>({left, right_branch(x)}, 1), 2);
}

template <typename T>
std::pair<ad::Var<T>, ad::Var<T>> coordatt_gates(Context<T>& ctx, const CoordAtt& ca, ad::Var<T> x) {
  const Shape s = x.shape();
  require(s.rank() == 4 && s.c() == ca.cfg.channels, "attention expects " + std::to_string(ca.cfg.channels) + " channels");
  const int n = s.n(), c = s.c(), h = s.h(), w = s.w();
  // Pool each axis, lay the two descriptors end to end along one spatial axis.
  auto along_h = ad::global_pool_h(x);                                          // (N,C,H,1)
  auto along_w = ad::reshape(ad::global_pool_w(x), Shape{n, c, w, 1});          // (N,C,W,1)
  auto joint = activate(forward(ctx, ca.reduce, ad::concat<T>({along_h, along_w}, 2)), ca.cfg.activation);
  auto parts = ad::split(joint, 2, {h, w});
  const int mid = ca.cfg.mid_channels();
  auto gh = ad::sigmoid(forward(ctx, ca.gate_h, parts[0]));
  auto gw = ad::sigmoid(forward(ctx, ca.gate_w, ad::reshape(parts[1], Shape{n, mid, 1, w})));
  return {gh, gw};
}

template <typename T>
ad::Var<T> forward(Context<T>& ctx, const CoordAtt& ca, ad::Var<T> x) {
  auto [gh, gw] = coordatt_gates(ctx, ca, x);
  return ad::coord_gate(x, gh, gw);
}

template <typename T>
ad::Var<T> forward(Context<T>& ctx, const Stage& stage, ad::Var<T> x) {
  for (const auto& u : stage.units) x = forward(ctx, u, x);
  if (stage.attention) x = forward(ctx, *stage.attention, x);
  return x;
}

template <typename T>
std::array<ad::Var<T>, 3> forward(Context<T>& ctx, const Backbone& backbone, ad::Var<T> x) {
  const Shape s = x.shape();
  require(s.rank() == 4 && s.c() == 3, "backbone expects an N x 3 x H x W image batch, got " + s.str());
  require(s.h() % 32 == 0 && s.w() % 32 == 0,
          "input size " + std::to_string(s.h()) + "x" + std::to_string(s.w()) + " is not divisible by 32");
  x = forward(ctx, backbone.stem[1], forward(ctx, backbone.stem[0], x));
  std::array<ad::Var<T>, 3> out;
  for (std::size_t i = 0; i < 3; ++i) out[i] = x = forward(ctx, backbone.stages[i], x);
  return out;
}

#define SHCANET_INSTANTIATE(T)                                                                                   \
  template ShuffleUnit make_shuffle_unit(ParamStore<T>&, const std::string&, const ShuffleUnitConfig&);          \
  template CoordAtt make_coordatt(ParamStore<T>&, const std::string&, const CoordAttConfig&);                   \
  template Stage make_stage(ParamStore<T>&, const std::string&, int, const StageConfig&, int, bool, int,         \
                            Activation);                                                                         \
  template Backbone make_backbone(ParamStore<T>&, const std::string&, const BackboneConfig&);                    \
  template ad::Var<T> activate(ad::Var<T>, Activation);                                                          \
  template ad::Var<T> forward(Context<T>&, const ShuffleUnit&, ad::Var<T>);                                      \
  template std::pair<ad::Var<T>, ad::Var<T>> coordatt_gates(Context<T>&, const CoordAtt&, ad::Var<T>);           \
  template ad::Var<T> forward(Context<T>&, const CoordAtt&, ad::Var<T>);                                         \
  template ad::Var<T> forward(Context<T>&, const Stage&, ad::Var<T>);                                            \
  template std::array<ad::Var<T>, 3> forward(Context<T>&, const Backbone&, ad::Var<T>);

SHCANET_INSTANTIATE(float)
SHCANET_INSTANTIATE(double)

#undef SHCANET_INSTANTIATE

}  // namespace shcanet::nn
