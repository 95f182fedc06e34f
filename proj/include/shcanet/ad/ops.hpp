#pragma once

// Differentiable tensor operations recorded on a Tape. All rank-4 tensors are
// (N, C, H, W). Forward results are deterministic: each output element is
// accumulated in a fixed order that does not depend on the active SIMD ISA.

#include <optional>
#include <vector>

#include "shcanet/ad/tape.hpp"

namespace shcanet::ad {

struct Conv2dOptions {
  int stride = 1;
  int pad = 0;
  int groups = 1;
};

// Cross-correlation with zero padding. weight is (out_c, in_c/groups, k, k).
// Each output element is 0 + sum over (input channel, kernel row, kernel col)
// in that order, with the bias added last; padded taps are skipped.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, std::optional<Var<T>> bias, Conv2dOptions opt);

enum class BnMode { train, eval };

// Running statistics owned by the model, updated in place in train mode.
template <typename T>
struct BnRunningStats {
  Tensor<T>* mean = nullptr;
  Tensor<T>* var = nullptr;
};

template <typename T>
Var<T> batchnorm2d(Var<T> x, Var<T> gamma, Var<T> beta, BnRunningStats<T> stats, BnMode mode, T momentum, T eps);

template <typename T>
Var<T> sigmoid(Var<T> x);
template <typename T>
Var<T> silu(Var<T> x);
template <typename T>
Var<T> hardswish(Var<T> x);
template <typename T>
Var<T> relu(Var<T> x);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T s);

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis);
template <typename T>
std::vector<Var<T>> split(Var<T> x, int axis, const std::vector<int>& sizes);
template <typename T>
Var<T> reshape(Var<T> x, Shape shape);

// Reshape (g, C/g) -> transpose -> flatten: output channel p takes input
// channel (p mod g)*(C/g) + p/g.
template <typename T>
Var<T> channel_shuffle(Var<T> x, int groups);

// Mean over width: (N,C,H,W) -> (N,C,H,1).
template <typename T>
Var<T> global_pool_h(Var<T> x);
// Mean over height: (N,C,H,W) -> (N,C,1,W).
template <typename T>
Var<T> global_pool_w(Var<T> x);

template <typename T>
Var<T> upsample_nearest2x(Var<T> x);
// 2x2 window, stride 2. Ties route the gradient to the first maximum in row-major order.
template <typename T>
Var<T> maxpool2x2(Var<T> x);

// y(n,c,i,j) = x(n,c,i,j) * gate_h(n,c,i,0) * gate_w(n,c,0,j)
template <typename T>
Var<T> coord_gate(Var<T> x, Var<T> gate_h, Var<T> gate_w);

enum class FusionMode { fast_normalized, plain_sum };

// fast_normalized: sum_i relu(w_i) x_i / (sum_j relu(w_j) + eps); plain_sum: sum_i x_i.
// weights is a rank-1 tensor with one entry per input (ignored for plain_sum).
template <typename T>
Var<T> weighted_fusion(const std::vector<Var<T>>& inputs, std::optional<Var<T>> weights, FusionMode mode, T eps);

// Scalar (shape {1}) reductions.
template <typename T>
Var<T> sum(Var<T> x);
template <typename T>
Var<T> dot_constant(Var<T> x, const Tensor<T>& coeffs);

}  // namespace shcanet::ad
