#pragma once

#include <cstddef>
#include <vector>

#include "shcanet/nn/module.hpp"

namespace shcanet::train {

struct OptimConfig {
  double lr0 = 1e-2;
  double lrf = 1e-5;  // final learning rate (absolute, not a fraction of lr0)
  double weight_decay = 5e-3;
  double momentum = 0.937;
  double warmup_epochs = 3;
  double warmup_momentum = 0.8;
  int epochs = 200;
  int batch_size = 16;

  void validate() const;
};

// lrf + (lr0 - lrf) * (1 + cos(pi * epoch / epochs)) / 2
double cosine_lr(double epoch, const OptimConfig& cfg);

struct Schedule {
  double lr = 0;
  double momentum = 0;
};

// Warmup covers the first round(warmup_epochs * steps_per_epoch) steps. Over
// them lr rises linearly from 0 and momentum from warmup_momentum, both
// reaching their post-warmup values (cosine_lr(warmup_epochs), momentum) on
// the last warmup step. Afterwards lr follows cosine_lr of the whole epoch.
Schedule schedule_at(std::size_t step, std::size_t steps_per_epoch, const OptimConfig& cfg);

// Warmup part alone; `step` must lie inside the warmup window.
Schedule warmup_schedule(std::size_t step, std::size_t steps_per_epoch, const OptimConfig& cfg);

std::size_t warmup_steps(std::size_t steps_per_epoch, const OptimConfig& cfg);

template <typename T>
struct OptimState {
  std::vector<Tensor<T>> velocity;  // mirrors the parameter list
  std::size_t step = 0;
  Schedule current;
};

template <typename T>
OptimState<T> make_state(const nn::ParamStore<T>& store);

// One tensor: g' = g + wd * p (when `decay`), v = momentum * v + g', p -= lr * v.
template <typename T>
void sgd_update(Tensor<T>& param, Tensor<T>& velocity, const Tensor<T>& grad, double lr, double momentum,
                double weight_decay, bool decay);

// Whole store; decay applies only to conv weights.
template <typename T>
void sgd_step(nn::ParamStore<T>& store, const std::vector<Tensor<T>>& grads, OptimState<T>& state, double lr,
              double momentum, double weight_decay);

}  // namespace shcanet::train
