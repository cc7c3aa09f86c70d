#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "irmlab/graph.hpp"
#include "irmlab/tensor.hpp"

namespace irmlab {

/// Blocks that receive injection rows, in strictly increasing order.
struct InjectionPlan {
  std::vector<std::size_t> blocks;

  static InjectionPlan all(std::size_t n_layers);
  std::size_t size() const { return blocks.size(); }
  bool contains(std::size_t block) const;
  /// Row of the injection matrix assigned to `block`; size() if absent.
  std::size_t row_of(std::size_t block) const;
  void validate(std::size_t n_layers) const;  // ConfigError on violation
};

struct IrmConfig {
  std::size_t input_dim = 64;  // d_model of the host
  std::array<std::size_t, 4> hidden_dims{128, 256, 256, 256};
  InjectionPlan plan;

  std::size_t output_dim() const { return plan.size() * input_dim; }
  void validate() const;
};

/// Five-layer feed-forward injection network: four ReLU hidden layers, linear
/// output reshaped row-major into one row per planned block. The output layer
/// stays linear so injections can be negative.
struct IrmNet {
  IrmConfig config;
  std::vector<Tensor> weights;  // 5 matrices, [out x in]
  std::vector<Tensor> biases;   // 5 vectors

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<std::pair<std::string, Tensor*>> named_parameters();
  std::size_t parameter_count() const;
};

/// One forward-pass injection matrix M_i: one row per planned block.
struct InjectionMatrix {
  Tensor values;      // [|plan| x d_model]
  std::size_t step = 0;
  const InjectionPlan* plan = nullptr;
};

/// Hidden weights uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); biases zero; the
/// output layer is zeroed entirely so a fresh IRM is an exact no-op.
IrmNet init_irm(const IrmConfig& config, std::uint64_t seed);

/// Single-vector forward pass: a0 of length d_model -> [|plan| x d_model].
InjectionMatrix irm_forward(const Tensor& a0, const IrmNet& net, std::size_t step = 0);

/// Leaves for building the IRM into a loss graph.
struct IrmGraphLeaves {
  std::vector<Var> weights;
  std::vector<Var> biases;
};

IrmGraphLeaves irm_leaves(Graph& g, const IrmNet& net, bool requires_grad);

/// Batched forward over rows of a0 (t x d_model) -> t x (|plan| * d_model).
/// Row p is the flattened injection matrix of position p.
Var irm_forward_rows(Graph& g, const IrmGraphLeaves& leaves, Var a0_rows);

}  // namespace irmlab
