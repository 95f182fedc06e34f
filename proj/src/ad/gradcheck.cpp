#include "shcanet/ad/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace shcanet::ad {
namespace {

double evaluate(const GraphFn& graph, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape(false);
  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& in : inputs) leaves.push_back(tape.leaf(in, false));
  const Var<double> out = graph(tape, leaves);
  require(out.value().size() == 1, "gradcheck: graph must produce a scalar");
  return out.value()[0];
}

std::vector<std::size_t> probe_indices(std::size_t size, std::size_t limit, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), 0);
  if (limit == 0 || limit >= size) return idx;
  for (std::size_t i = 0; i < limit; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (size - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradcheckResult gradcheck(const GraphFn& graph, const std::vector<Tensor<double>>& inputs, GradcheckOptions opt) {
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  for (const auto& in : inputs) leaves.push_back(tape.leaf(in));
  const Var<double> loss = graph(tape, leaves);
  tape.backward(loss);

  GradcheckResult result;
  std::mt19937_64 rng(opt.seed);
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double> analytic = tape.grad(leaves[k]);
    for (std::size_t i : probe_indices(inputs[k].size(), opt.max_probes_per_input, rng)) {
      const double original = probe[k][i];
      probe[k][i] = original + opt.step;
      const double plus = evaluate(graph, probe);
      probe[k][i] = original - opt.step;
      const double minus = evaluate(graph, probe);
      probe[k][i] = original;
      const double numeric = (plus - minus) / (2.0 * opt.step);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / std::max(opt.denom_floor, std::abs(a) + std::abs(numeric));
      ++result.probes;
      if (err > result.max_rel_error || std::isnan(err)) {
        result.max_rel_error = std::isnan(err) ? INFINITY : err;
        result.worst_input = k;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace shcanet::ad
