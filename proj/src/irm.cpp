#include "irmlab/irm.hpp"

#include <cmath>
#include <string>

#include "irmlab/errors.hpp"
#include "irmlab/kernels.hpp"
#include "irmlab/rng.hpp"

namespace irmlab {

InjectionPlan InjectionPlan::all(std::size_t n_layers) {
  InjectionPlan p;
  p.blocks.resize(n_layers);
  for (std::size_t i = 0; i < n_layers; ++i) p.blocks[i] = i;
  return p;
}

bool InjectionPlan::contains(std::size_t block) const { return row_of(block) < size(); }

std::size_t InjectionPlan::row_of(std::size_t block) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i] == block) return i;
  }
  return blocks.size();
}

void InjectionPlan::validate(std::size_t n_layers) const {
  if (blocks.empty()) throw ConfigError("injection plan is empty");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i] >= n_layers) {
      throw ConfigError("injection plan block " + std::to_string(blocks[i]) +
                        " out of range for " + std::to_string(n_layers) + " layers");
    }
    if (i > 0 && blocks[i] <= blocks[i - 1]) {
      throw ConfigError("injection plan indices must be strictly increasing");
    }
  }
}

void IrmConfig::validate() const {
  if (input_dim == 0) throw ConfigError("irm input_dim must be positive");
  for (std::size_t h : hidden_dims) {
    if (h == 0) throw ConfigError("irm hidden dims must be positive");
  }
  if (plan.blocks.empty()) throw ConfigError("irm plan must name at least one block");
}

std::vector<Tensor*> IrmNet::parameters() {
  std::vector<Tensor*> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(&weights[i]);
    out.push_back(&biases[i]);
  }
  return out;
}

std::vector<const Tensor*> IrmNet::parameters() const {
  std::vector<const Tensor*> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(&weights[i]);
    out.push_back(&biases[i]);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> IrmNet::named_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.emplace_back("layers." + std::to_string(i) + ".weight", &weights[i]);
    out.emplace_back("layers." + std::to_string(i) + ".bias", &biases[i]);
  }
  return out;
}

std::size_t IrmNet::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : parameters()) n += t->size();
  return n;
}

IrmNet init_irm(const IrmConfig& config, std::uint64_t seed) {
  config.validate();
  IrmNet net;
  net.config = config;
  const std::size_t dims[6] = {config.input_dim,     config.hidden_dims[0],
                               config.hidden_dims[1], config.hidden_dims[2],
                               config.hidden_dims[3], config.output_dim()};
  CounterRng rng = CounterRng(seed).derive("irm-init");
  for (std::size_t layer = 0; layer < 5; ++layer) {
    const std::size_t fan_in = dims[layer];
    const std::size_t fan_out = dims[layer + 1];
    Tensor w({fan_out, fan_in});
    if (layer < 4) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (std::size_t i = 0; i < w.size(); ++i) w.at(i) = rng.next_uniform(-bound, bound);
    }
    // layer 4 (output) stays zero: a fresh IRM must not perturb the host.
    w.requires_grad = true;
    net.weights.push_back(std::move(w));
    Tensor b({fan_out});
    b.requires_grad = true;
    net.biases.push_back(std::move(b));
  }
  return net;
}

InjectionMatrix irm_forward(const Tensor& a0, const IrmNet& net, std::size_t step) {
  const IrmConfig& cfg = net.config;
  if (a0.size() != cfg.input_dim) {
    throw DimensionError("irm_forward: input " + a0.shape_str() + " vs d_model " +
                         std::to_string(cfg.input_dim));
  }
  std::vector<double> cur(a0.data(), a0.data() + a0.size());
  std::vector<double> next;
  for (std::size_t layer = 0; layer < 5; ++layer) {
    const Tensor& w = net.weights[layer];
    const Tensor& b = net.biases[layer];
    next.resize(w.rows());
    kern::linear_row(w, cur.data(), next.data());
    for (std::size_t i = 0; i < next.size(); ++i) {
      next[i] += b.at(i);
      if (layer < 4 && next[i] < 0.0) next[i] = 0.0;  // ReLU on hidden layers only
    }
    cur.swap(next);
  }
  InjectionMatrix m;
  m.values = Tensor({cfg.plan.size(), cfg.input_dim}, std::move(cur));
  m.step = step;
  m.plan = &net.config.plan;
  if (!m.values.all_finite()) throw NumericsError("irm_forward: non-finite output");
  return m;
}

IrmGraphLeaves irm_leaves(Graph& g, const IrmNet& net, bool requires_grad) {
  IrmGraphLeaves leaves;
  for (std::size_t i = 0; i < net.weights.size(); ++i) {
    leaves.weights.push_back(g.leaf(net.weights[i], requires_grad));
    leaves.biases.push_back(g.leaf(net.biases[i], requires_grad));
  }
  return leaves;
}

Var irm_forward_rows(Graph& g, const IrmGraphLeaves& leaves, Var a0_rows) {
  Var h = a0_rows;
  for (std::size_t layer = 0; layer < 5; ++layer) {
    h = g.add_row_bias(g.linear(h, leaves.weights[layer]), leaves.biases[layer]);
    if (layer < 4) h = g.relu(h);
  }
  return h;
}

}  // namespace irmlab
