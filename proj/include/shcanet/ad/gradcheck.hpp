#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "shcanet/ad/tape.hpp"

namespace shcanet::ad {

// Builds a scalar-valued graph on `tape` from leaves holding the inputs.
using GraphFn = std::function<Var<double>(Tape<double>& tape, std::span<const Var<double>> leaves)>;

struct GradcheckOptions {
  double step = 1e-5;
  // Largest number of coordinates probed per input; 0 probes every element.
  // When limited, coordinates are sampled with `seed`.
  std::size_t max_probes_per_input = 0;
  std::uint64_t seed = 0;
  // Denominator floor of the error metric. Raise it when some coordinates have
  // an exactly-zero true gradient (e.g. the shift of a batchnorm feeding another
  // batchnorm), where central differences leave only rounding noise.
  double denom_floor = 1e-8;
};

struct GradcheckResult {
  // max over probed coordinates of |analytic - numeric| / max(denom_floor, |analytic| + |numeric|)
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t probes = 0;
};

// Compares reverse-mode gradients against central differences in double precision.
GradcheckResult gradcheck(const GraphFn& graph, const std::vector<Tensor<double>>& inputs, GradcheckOptions opt = {});

}  // namespace shcanet::ad
