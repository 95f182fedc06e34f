#include "shcanet/nn/detector.hpp"

namespace shcanet::nn {

void ModelConfig::validate() const {
  backbone.validate();
  neck.validate();
  head.validate();
  require(input_size > 0 && input_size % 32 == 0, "input_size must be a positive multiple of 32");
  require(bn_eps > 0, "bn_eps must be positive");
  require(bn_momentum > 0 && bn_momentum <= 1, "bn_momentum must be in (0, 1]");
}

template <typename T>
Detector<T>::Detector(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), store_(seed) {
  cfg_.validate();
  backbone_ = make_backbone(store_, "backbone", cfg_.backbone);
  const auto& st = cfg_.backbone.stages;
  neck_ = make_bifpn(store_, "neck", {st[0].channels, st[1].channels, st[2].channels}, cfg_.neck);
  head_ = make_head(store_, "head", cfg_.neck.neck_channels, cfg_.head, cfg_.input_size);
}

template <typename T>
std::array<ad::Var<T>, 3> Detector<T>::forward(Context<T>& ctx, ad::Var<T> images) const {
  const auto c = nn::forward(ctx, backbone_, images);
  const auto p = nn::forward(ctx, neck_, c);
  return nn::forward(ctx, head_, p);
}

template <typename T>
std::array<Tensor<T>, 3> infer(Detector<T>& model, const Tensor<T>& images) {
  ad::Tape<T> tape(false);
  auto ctx = model.context(tape, ad::BnMode::eval);
  const auto out = model.forward(ctx, tape.constant(images));
  return {out[0].value(), out[1].value(), out[2].value()};
}

template <typename T>
std::vector<std::vector<Detection>> predict(Detector<T>& model, const Tensor<T>& images, const PredictOptions& opt) {
  auto cands = decode(infer(model, images), model.config().head, opt.conf);
  for (auto& c : cands) {
    c = nms(std::move(c), opt.iou);
    if (c.size() > opt.max_det) c.resize(opt.max_det);
  }
  return cands;
}

template class Detector<float>;
template class Detector<double>;
template std::array<Tensor<float>, 3> infer(Detector<float>&, const Tensor<float>&);
template std::array<Tensor<double>, 3> infer(Detector<double>&, const Tensor<double>&);

template std::vector<std::vector<Detection>> predict(Detector<float>&, const Tensor<float>&, const PredictOptions&);
template std::vector<std::vector<Detection>> predict(Detector<double>&, const Tensor<double>&, const PredictOptions&);

}  // namespace shcanet::nn
