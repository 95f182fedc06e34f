#include "shcanet/train/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "shcanet/simd/kernels.hpp"

namespace shcanet::train {

void OptimConfig::validate() const {
  require(lrf > 0 && lrf <= lr0, "optimizer: need 0 < lrf <= lr0");
  require(weight_decay >= 0, "optimizer: weight decay must be non-negative");
  require(momentum >= 0 && momentum < 1 && warmup_momentum >= 0 && warmup_momentum < 1,
          "optimizer: momentum must lie in [0, 1)");
  require(epochs > 0, "optimizer: epochs must be positive");
  require(warmup_epochs >= 0 && warmup_epochs < epochs, "optimizer: warmup_epochs must be below epochs");
  require(batch_size > 0, "optimizer: batch size must be positive");
}

double cosine_lr(double epoch, const OptimConfig& cfg) {
  require(epoch >= 0 && epoch <= cfg.epochs, "cosine_lr: epoch outside [0, epochs]");
  if (epoch == cfg.epochs) return cfg.lrf;  // cos(pi) is not exactly -1
  return cfg.lrf + (cfg.lr0 - cfg.lrf) * (1 + std::cos(std::numbers::pi * epoch / cfg.epochs)) / 2;
}

std::size_t warmup_steps(std::size_t steps_per_epoch, const OptimConfig& cfg) {
  return static_cast<std::size_t>(std::llround(cfg.warmup_epochs * static_cast<double>(steps_per_epoch)));
}

Schedule warmup_schedule(std::size_t step, std::size_t steps_per_epoch, const OptimConfig& cfg) {
  const std::size_t w = warmup_steps(steps_per_epoch, cfg);
  require(step < w, "warmup_schedule: step " + std::to_string(step) + " is past the warmup window");
  const double frac = w > 1 ? static_cast<double>(step) / static_cast<double>(w - 1) : 1.0;
  const double target = cosine_lr(cfg.warmup_epochs, cfg);
  return {frac * target, cfg.warmup_momentum + frac * (cfg.momentum - cfg.warmup_momentum)};
}

Schedule schedule_at(std::size_t step, std::size_t steps_per_epoch, const OptimConfig& cfg) {
  require(steps_per_epoch > 0, "schedule: steps_per_epoch must be positive");
  if (step < warmup_steps(steps_per_epoch, cfg)) return warmup_schedule(step, steps_per_epoch, cfg);
  const double epoch = std::min<double>(static_cast<double>(step / steps_per_epoch), cfg.epochs);
  return {cosine_lr(std::max(epoch, cfg.warmup_epochs), cfg), cfg.momentum};
}

template <typename T>
OptimState<T> make_state(const nn::ParamStore<T>& store) {
  OptimState<T> s;
  for (const auto& p : store.params()) s.velocity.emplace_back(p.value.shape());
  return s;
}

template <typename T>
void sgd_update(Tensor<T>& param, Tensor<T>& velocity, const Tensor<T>& grad, double lr, double momentum,
                double weight_decay, bool decay) {
  require(param.shape() == velocity.shape() && param.shape() == grad.shape(),
          "sgd: shape mismatch " + param.shape().str() + " vs " + grad.shape().str());
  const T* g = grad.ptr();
  Tensor<T> decayed;
  if (decay && weight_decay != 0) {
    decayed = grad;
    simd::kernels<T>().axpy(decayed.ptr(), param.ptr(), static_cast<T>(weight_decay), param.size(), 1);
    g = decayed.ptr();
  }
  simd::kernels<T>().sgd(param.ptr(), velocity.ptr(), g, static_cast<T>(lr), static_cast<T>(momentum),
                         param.size());
}

template <typename T>
void sgd_step(nn::ParamStore<T>& store, const std::vector<Tensor<T>>& grads, OptimState<T>& state, double lr,
              double momentum, double weight_decay) {
  auto& params = store.params();
  require(grads.size() == params.size() && state.velocity.size() == params.size(),
          "sgd: " + std::to_string(grads.size()) + " gradients for " + std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    try {
      sgd_update(params[i].value, state.velocity[i], grads[i], lr, momentum, weight_decay, nn::decays(params[i].role));
    } catch (const InvalidInput& e) {
      throw InvalidInput(params[i].name + ": " + e.what());
    }
  }
  ++state.step;
  state.current = {lr, momentum};
}

template OptimState<float> make_state(const nn::ParamStore<float>&);
template OptimState<double> make_state(const nn::ParamStore<double>&);
template void sgd_update(Tensor<float>&, Tensor<float>&, const Tensor<float>&, double, double, double, bool);
template void sgd_update(Tensor<double>&, Tensor<double>&, const Tensor<double>&, double, double, double, bool);
template void sgd_step(nn::ParamStore<float>&, const std::vector<Tensor<float>>&, OptimState<float>&, double, double, double);
template void sgd_step(nn::ParamStore<double>&, const std::vector<Tensor<double>>&, OptimState<double>&, double, double,
                       double);

}  // namespace shcanet::train
