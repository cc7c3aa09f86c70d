#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "irmlab/errors.hpp"
#include "irmlab/rng.hpp"
#include "irmlab/host_model.hpp"
#include "irmlab/irm.hpp"

using namespace irmlab;

namespace {

IrmConfig small_config() {
  IrmConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden_dims = {2, 2, 2, 2};
  cfg.plan.blocks = {0, 1};  // output_dim = 4
  return cfg;
}

}  // namespace

TEST_CASE("injection plan validation") {
  InjectionPlan p = InjectionPlan::all(8);
  CHECK(p.size() == 8);
  CHECK(p.contains(0));
  CHECK(p.contains(7));
  CHECK(p.row_of(3) == 3);
  p.validate(8);

  InjectionPlan subset;
  subset.blocks = {1, 4, 6};
  subset.validate(8);
  CHECK(subset.row_of(4) == 1);
  CHECK_FALSE(subset.contains(0));
  CHECK(subset.row_of(0) == subset.size());

  InjectionPlan bad;
  bad.blocks = {2, 2};
  CHECK_THROWS_AS(bad.validate(8), ConfigError);
  bad.blocks = {3, 1};
  CHECK_THROWS_AS(bad.validate(8), ConfigError);
  bad.blocks = {9};
  CHECK_THROWS_AS(bad.validate(8), ConfigError);
  bad.blocks = {};
  CHECK_THROWS_AS(bad.validate(8), ConfigError);
}

TEST_CASE("fresh IRM is an exact no-op") {
  IrmConfig cfg = small_config();
  IrmNet net = init_irm(cfg, 42);
  Tensor a0 = Tensor::vector({0.3, -1.7});
  InjectionMatrix m = irm_forward(a0, net);
  CHECK(m.values.rows() == 2);
  CHECK(m.values.cols() == 2);
  for (std::size_t i = 0; i < m.values.size(); ++i) CHECK(m.values.at(i) == 0.0);
}

TEST_CASE("initialization is deterministic in the seed") {
  IrmConfig cfg = small_config();
  IrmNet a = init_irm(cfg, 7);
  IrmNet b = init_irm(cfg, 7);
  IrmNet c = init_irm(cfg, 8);
  for (std::size_t i = 0; i < a.weights.size(); ++i) {
    CHECK(a.weights[i] == b.weights[i]);
    CHECK(a.biases[i] == b.biases[i]);
  }
  bool any_diff = false;
  for (std::size_t i = 0; i < 4; ++i) {
    if (!(a.weights[i] == c.weights[i])) any_diff = true;
  }
  CHECK(any_diff);

  // biases zero, output layer fully zero, hidden weights within the fan-in bound
  for (std::size_t l = 0; l < 5; ++l) {
    for (std::size_t i = 0; i < a.biases[l].size(); ++i) CHECK(a.biases[l].at(i) == 0.0);
  }
  for (std::size_t i = 0; i < a.weights[4].size(); ++i) CHECK(a.weights[4].at(i) == 0.0);
  const double bound0 = 1.0 / std::sqrt(2.0);
  for (std::size_t i = 0; i < a.weights[0].size(); ++i) {
    CHECK(std::abs(a.weights[0].at(i)) <= bound0);
  }
}

TEST_CASE("irm_forward matches a hand-computed affine chain") {
  // dims 2 -> 2 -> 2 -> 2 -> 2 -> 4, weights set by hand; ReLU on the four
  // hidden layers, final layer linear.
  IrmConfig cfg = small_config();
  IrmNet net = init_irm(cfg, 0);
  auto set = [](Tensor& t, std::initializer_list<double> vals) {
    std::size_t i = 0;
    for (double v : vals) t.at(i++) = v;
  };
  set(net.weights[0], {1.0, -1.0, 0.5, 0.25});
  set(net.biases[0], {0.1, -0.2});
  set(net.weights[1], {-2.0, 1.0, 1.0, 1.0});
  set(net.biases[1], {0.0, 0.3});
  set(net.weights[2], {0.5, 0.5, -0.5, 1.5});
  set(net.biases[2], {-0.05, 0.0});
  set(net.weights[3], {1.0, 2.0, 3.0, -4.0});
  set(net.biases[3], {0.0, 0.1});
  set(net.weights[4], {1.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, 0.5});
  set(net.biases[4], {0.01, 0.02, 0.03, 0.04});

  const double x0 = 0.4, x1 = -0.6;
  // hand-computed chain, layer by layer
  auto relu = [](double v) { return v > 0.0 ? v : 0.0; };
  const double h1a = relu(1.0 * x0 + -1.0 * x1 + 0.1);    // 1.1
  const double h1b = relu(0.5 * x0 + 0.25 * x1 + -0.2);   // relu(-0.15) = 0
  const double h2a = relu(-2.0 * h1a + 1.0 * h1b + 0.0);  // relu(-2.2) = 0
  const double h2b = relu(1.0 * h1a + 1.0 * h1b + 0.3);   // 1.4
  const double h3a = relu(0.5 * h2a + 0.5 * h2b - 0.05);  // 0.65
  const double h3b = relu(-0.5 * h2a + 1.5 * h2b + 0.0);  // 2.1
  const double h4a = relu(1.0 * h3a + 2.0 * h3b + 0.0);   // 4.85
  const double h4b = relu(3.0 * h3a + -4.0 * h3b + 0.1);  // relu(-6.35) = 0
  const double y0 = 1.0 * h4a + 0.0 * h4b + 0.01;
  const double y1 = 0.0 * h4a + 1.0 * h4b + 0.02;
  const double y2 = 1.0 * h4a + 1.0 * h4b + 0.03;
  const double y3 = -1.0 * h4a + 0.5 * h4b + 0.04;

  InjectionMatrix m = irm_forward(Tensor::vector({x0, x1}), net);
  CHECK(m.values.at(0, 0) == doctest::Approx(y0).epsilon(1e-15));
  CHECK(m.values.at(0, 1) == doctest::Approx(y1).epsilon(1e-15));
  CHECK(m.values.at(1, 0) == doctest::Approx(y2).epsilon(1e-15));
  CHECK(m.values.at(1, 1) == doctest::Approx(y3).epsilon(1e-15));

  // negative outputs are representable (final layer is linear)
  CHECK(m.values.at(1, 1) < 0.0);
}

TEST_CASE("irm_forward shape contract and purity") {
  IrmConfig cfg;
  cfg.input_dim = 6;
  cfg.hidden_dims = {5, 7, 7, 9};
  cfg.plan.blocks = {0, 2, 3};
  IrmNet net = init_irm(cfg, 11);
  CounterRng rng(3);
  for (std::size_t i = 0; i < net.weights[4].size(); ++i) {
    net.weights[4].at(i) = rng.next_uniform(-0.5, 0.5);
  }
  Tensor a0({6});
  for (std::size_t i = 0; i < 6; ++i) a0.at(i) = rng.next_uniform(-1.0, 1.0);

  InjectionMatrix m1 = irm_forward(a0, net, 4);
  CHECK(m1.values.rows() == 3);
  CHECK(m1.values.cols() == 6);
  CHECK(m1.step == 4);
  CHECK(m1.plan == &net.config.plan);
  InjectionMatrix m2 = irm_forward(a0, net, 4);
  CHECK(m1.values == m2.values);

  CHECK_THROWS_AS(irm_forward(Tensor({5}), net), DimensionError);
}

TEST_CASE("batched graph forward agrees with the vector path bitwise") {
  IrmConfig cfg;
  cfg.input_dim = 8;
  cfg.hidden_dims = {6, 10, 10, 12};
  cfg.plan.blocks = {0, 1, 3};
  IrmNet net = init_irm(cfg, 5);
  CounterRng rng(17);
  for (std::size_t i = 0; i < net.weights[4].size(); ++i) {
    net.weights[4].at(i) = rng.next_uniform(-0.4, 0.4);
  }
  Tensor rows({4, 8});
  for (std::size_t i = 0; i < rows.size(); ++i) rows.at(i) = rng.next_uniform(-1.0, 1.0);

  Graph g;
  IrmGraphLeaves leaves = irm_leaves(g, net, false);
  Var out = irm_forward_rows(g, leaves, g.leaf(rows));
  REQUIRE(out.value().rows() == 4);
  REQUIRE(out.value().cols() == cfg.output_dim());

  for (std::size_t p = 0; p < 4; ++p) {
    Tensor a0({8}, std::vector<double>(rows.row(p), rows.row(p) + 8));
    InjectionMatrix m = irm_forward(a0, net);
    for (std::size_t i = 0; i < m.values.size(); ++i) {
      CHECK(out.value().at(p, i) == m.values.at(i));
    }
  }
}
