#pragma once

// Three-level bidirectional fusion neck and the per-level prediction convs.

#include <array>
#include <string>
#include <vector>

#include "shcanet/nn/module.hpp"

namespace shcanet::nn {

struct BiFpnConfig {
  int neck_channels = 64;
  int repeats = 1;
  ad::FusionMode fusion = ad::FusionMode::fast_normalized;
  double epsilon = 1e-4;
  bool skip_edges = true;  // off: the mid-level bottom-up node loses its direct input edge

  void validate() const;
};

// One weighted fusion followed by a 3x3 CBS.
struct FuseNode {
  std::string name;
  std::optional<std::size_t> weights;  // one entry per input; absent for plain sums
  int inputs = 0;
  ConvBn conv;
};

struct BiFpnLayer {
  FuseNode mid2, out1, out2, out3;  // top-down node at level 2, then the three outputs
  ConvBn down1, down2;              // stride-2 edges from level 1 to 2 and 2 to 3
};

struct BiFpn {
  BiFpnConfig cfg;
  std::array<ConvBn, 3> project;
  std::vector<BiFpnLayer> layers;
};

// Structural view of the fusion graph, used for topology assertions.
struct FusionGraphNode {
  std::string name;
  std::vector<std::string> inputs;
};
std::vector<FusionGraphNode> describe(const BiFpn& neck);

struct HeadConfig {
  int num_classes = 2;
  // Per level, three (width, height) anchors in input pixels.
  std::array<std::array<std::array<double, 2>, 3>, 3> anchors{{
      {{{10, 13}, {16, 30}, {33, 23}}},
      {{{30, 61}, {62, 45}, {59, 119}}},
      {{{116, 90}, {156, 198}, {373, 326}}},
  }};
  std::array<int, 3> strides{8, 16, 32};

  int outputs_per_anchor() const { return 5 + num_classes; }
  int channels() const { return 3 * outputs_per_anchor(); }
  void validate() const;
};

struct Head {
  HeadConfig cfg;
  std::array<Conv, 3> predict;
};

template <typename T>
BiFpn make_bifpn(ParamStore<T>& store, const std::string& name, std::array<int, 3> in_channels, const BiFpnConfig& cfg);

// Objectness and class biases start from priors so early losses are sane:
// about 8 objects per 640x640 image and a 0.6 class prior.
template <typename T>
Head make_head(ParamStore<T>& store, const std::string& name, int in_channels, const HeadConfig& cfg, int input_size);

template <typename T>
ad::Var<T> fuse(Context<T>& ctx, const FuseNode& node, const std::vector<ad::Var<T>>& inputs, const BiFpnConfig& cfg);

template <typename T>
std::array<ad::Var<T>, 3> forward(Context<T>& ctx, const BiFpn& neck, const std::array<ad::Var<T>, 3>& levels);

// Raw logits per level, (N, 3*(5+nc), H, W). Channel a*(5+nc)+k holds
// output k (tx, ty, tw, th, obj, classes...) of anchor a.
template <typename T>
std::array<ad::Var<T>, 3> forward(Context<T>& ctx, const Head& head, const std::array<ad::Var<T>, 3>& levels);

}  // namespace shcanet::nn
