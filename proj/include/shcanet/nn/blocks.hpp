#pragma once

// Shuffle units, coordinate attention and the backbone built from them.

#include <array>
#include <string>
#include <vector>

#include "shcanet/nn/module.hpp"

namespace shcanet::nn {

struct CbsConfig {
  int in_channels = 3, out_channels = 16, kernel = 3, stride = 1;
};

// Stride 1 keeps `channels` (must be even). Stride 2 maps `channels` to
// `out_channels`, which defaults to 2*channels when left at 0.
struct ShuffleUnitConfig {
  int channels = 32;
  int stride = 1;
  int dw_kernel = 5;
  int out_channels = 0;
  int output_channels() const { return stride == 1 ? channels : (out_channels > 0 ? out_channels : 2 * channels); }
};

enum class Activation { hardswish, relu, silu };

struct CoordAttConfig {
  int channels = 64;
  int reduction = 32;
  int min_mid = 8;
  Activation activation = Activation::hardswish;
  int mid_channels() const { return std::max(min_mid, channels / reduction); }
};

struct StageConfig {
  int channels = 64;
  int repeats = 1;
};

struct BackboneConfig {
  std::array<CbsConfig, 2> stem{CbsConfig{3, 16, 3, 2}, CbsConfig{16, 32, 3, 2}};
  std::array<StageConfig, 3> stages{StageConfig{64, 2}, StageConfig{128, 3}, StageConfig{256, 2}};
  int dw_kernel = 5;
  bool attention = true;
  int ca_reduction = 32;
  Activation ca_activation = Activation::hardswish;

  void validate() const;
  static BackboneConfig desk();
  static BackboneConfig full_scale();
};

struct ShuffleUnit {
  ShuffleUnitConfig cfg;
  // stride 1: right = pw1, dw, pw2.  stride 2: left = left_dw, left_pw; right = pw1, dw, pw2.
  ConvBn pw1, dw, pw2, left_dw, left_pw;
};

struct CoordAtt {
  CoordAttConfig cfg;
  Conv reduce, gate_h, gate_w;  // all 1x1 with bias
};

struct Stage {
  std::vector<ShuffleUnit> units;
  std::optional<CoordAtt> attention;
};

struct Backbone {
  BackboneConfig cfg;
  std::array<ConvBn, 2> stem;
  std::array<Stage, 3> stages;
};

template <typename T>
ShuffleUnit make_shuffle_unit(ParamStore<T>& store, const std::string& name, const ShuffleUnitConfig& cfg);
template <typename T>
CoordAtt make_coordatt(ParamStore<T>& store, const std::string& name, const CoordAttConfig& cfg);
template <typename T>
Stage make_stage(ParamStore<T>& store, const std::string& name, int in_channels, const StageConfig& cfg,
                 int dw_kernel, bool attention, int ca_reduction, Activation ca_activation);
template <typename T>
Backbone make_backbone(ParamStore<T>& store, const std::string& name, const BackboneConfig& cfg);

template <typename T>
ad::Var<T> activate(ad::Var<T> x, Activation kind);

template <typename T>
ad::Var<T> forward(Context<T>& ctx, const ShuffleUnit& unit, ad::Var<T> x);

// Row gates (N,C,H,1) and column gates (N,C,1,W), both after the sigmoid.
template <typename T>
std::pair<ad::Var<T>, ad::Var<T>> coordatt_gates(Context<T>& ctx, const CoordAtt& ca, ad::Var<T> x);
template <typename T>
ad::Var<T> forward(Context<T>& ctx, const CoordAtt& ca, ad::Var<T> x);

template <typename T>
ad::Var<T> forward(Context<T>& ctx, const Stage& stage, ad::Var<T> x);

// Returns the three stage outputs at strides 8, 16 and 32.
template <typename T>
std::array<ad::Var<T>, 3> forward(Context<T>& ctx, const Backbone& backbone, ad::Var<T> x);

}  // namespace shcanet::nn
