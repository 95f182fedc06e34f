#pragma once

#include <array>
#include <cstdint>

#include "shcanet/nn/blocks.hpp"
#include "shcanet/nn/neck_head.hpp"
#include "shcanet/nn/postprocess.hpp"

namespace shcanet::nn {

struct ModelConfig {
  BackboneConfig backbone;
  BiFpnConfig neck;
  HeadConfig head;
  int input_size = 640;
  double bn_eps = 1e-3;
  double bn_momentum = 0.03;

  void validate() const;
};

template <typename T>
class Detector {
 public:
  Detector(const ModelConfig& cfg, std::uint64_t seed);

  // Raw head logits for an (N, 3, S, S) batch.
  std::array<ad::Var<T>, 3> forward(Context<T>& ctx, ad::Var<T> images) const;

  Context<T> context(ad::Tape<T>& tape, ad::BnMode mode) {
    return Context<T>(tape, store_, mode, static_cast<T>(cfg_.bn_momentum), static_cast<T>(cfg_.bn_eps));
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }
  const Backbone& backbone() const { return backbone_; }
  const BiFpn& neck() const { return neck_; }
  const Head& head() const { return head_; }
  std::size_t count_parameters() const { return store_.count_parameters(); }

 private:
  ModelConfig cfg_;
  ParamStore<T> store_;
  Backbone backbone_;
  BiFpn neck_;
  Head head_;
};

// Inference on a batch in eval mode without recording gradients.
template <typename T>
std::array<Tensor<T>, 3> infer(Detector<T>& model, const Tensor<T>& images);

struct PredictOptions {
  double conf = 0.25;
  double iou = 0.45;
  std::size_t max_det = 300;  // per image, after suppression
};

// infer + decode + nms; boxes in network-input pixels.
template <typename T>
std::vector<std::vector<Detection>> predict(Detector<T>& model, const Tensor<T>& images, const PredictOptions& opt);

}  // namespace shcanet::nn
