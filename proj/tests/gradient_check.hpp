#pragma once

// Central finite-difference gradient oracle, independent of the backward
// pass: the loss is re-evaluated from scratch at theta +/- eps per entry.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "irmlab/graph.hpp"
#include "irmlab/tensor.hpp"

namespace irmlab::test {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

// build(g, leaves, leaf_vars): creates one graph leaf per input tensor (in
// order, appending the Var when leaf_vars is non-null) and returns the scalar
// loss. Relative error uses max(|fd|, |ad|, 1e-6) as the denominator so
// near-zero gradients are compared absolutely.
using LossBuilder =
    std::function<Var(Graph&, const std::vector<Tensor>&, std::vector<Var>*)>;

inline GradCheckResult check_gradients(std::vector<Tensor> leaves, const LossBuilder& build,
                                       double eps = 1e-5) {
  for (Tensor& t : leaves) t.requires_grad = true;

  Graph g;
  std::vector<Var> leaf_vars;
  Var loss = build(g, leaves, &leaf_vars);
  g.backward(loss);
  std::vector<Tensor> autodiff;
  autodiff.reserve(leaf_vars.size());
  for (Var v : leaf_vars) autodiff.push_back(g.grad(v));

  GradCheckResult result;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    for (std::size_t idx = 0; idx < leaves[li].size(); ++idx) {
      const double orig = leaves[li].at(idx);
      leaves[li].at(idx) = orig + eps;
      Graph gp;
      const double fp = build(gp, leaves, nullptr).value().item();
      leaves[li].at(idx) = orig - eps;
      Graph gm;
      const double fm = build(gm, leaves, nullptr).value().item();
      leaves[li].at(idx) = orig;

      const double fd = (fp - fm) / (2.0 * eps);
      const double ad = autodiff[li].at(idx);
      const double denom = std::max({std::abs(fd), std::abs(ad), 1e-6});
      result.max_rel_err = std::max(result.max_rel_err, std::abs(fd - ad) / denom);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace irmlab::test
