#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradient_check.hpp"
#include "irmlab/errors.hpp"
#include "irmlab/graph.hpp"
#include "irmlab/rng.hpp"

using namespace irmlab;
using irmlab::test::check_gradients;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, CounterRng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = rng.next_uniform(lo, hi);
  return t;
}

// Random values bounded away from the ReLU kink at zero.
Tensor random_away_from_zero(std::vector<std::size_t> shape, CounterRng& rng, double margin) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double mag = rng.next_uniform(margin, 1.0);
    t.at(i) = rng.next_coin(0.5) ? mag : -mag;
  }
  return t;
}

// loss = sum(out * w) with a fixed random weighting so every output entry
// receives a distinct gradient.
Var weighted_sum(Graph& g, Var out, const Tensor& w) {
  return g.sum(g.hadamard(out, g.leaf(w, false)));
}

}  // namespace

TEST_CASE("matmul values") {
  CounterRng rng(1);
  Graph g;
  const Tensor a = random_tensor({3, 4}, rng);
  Var va = g.leaf(a);
  Var vi = g.leaf(Tensor::identity(4));
  Var prod = g.matmul(va, vi);
  CHECK(prod.value() == a);  // A * I == A

  Var vb = g.leaf(Tensor::matrix({{1}, {1}}));
  Var v2 = g.leaf(Tensor::matrix({{1, 2}, {3, 4}}));
  Var r = g.matmul(v2, vb);
  CHECK(r.value().at(0, 0) == 3.0);
  CHECK(r.value().at(1, 0) == 7.0);

  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(g.matmul(v2, g.leaf(Tensor({3, 2}))), DimensionError);
  }
}

TEST_CASE("matmul identity associativity is exact") {
  CounterRng rng(2);
  const Tensor a = random_tensor({4, 5}, rng);
  const Tensor b = random_tensor({5, 3}, rng);
  Graph g;
  Var va = g.leaf(a);
  Var vb = g.leaf(b);
  Var direct = g.matmul(va, vb);
  Var via_identity = g.matmul(g.matmul(va, g.leaf(Tensor::identity(5))), vb);
  CHECK(direct.value() == via_identity.value());
}

TEST_CASE("matmul gradient vs central differences") {
  CounterRng rng(3);
  const Tensor a = random_tensor({5, 4}, rng);
  const Tensor b = random_tensor({4, 3}, rng);
  const Tensor w = random_tensor({5, 3}, rng);
  auto res = check_gradients(
      {a, b},
      [&](Graph& g, const std::vector<Tensor>& ts, std::vector<Var>* lv) {
        Var va = g.leaf(ts[0]);
        Var vb = g.leaf(ts[1]);
        if (lv) {
          lv->push_back(va);
          lv->push_back(vb);
        }
        return weighted_sum(g, g.matmul(va, vb), w);
      });
  CHECK(res.checked == 32);
  CHECK(res.max_rel_err < 1e-6);  // bilinear: central differences are exact up to roundoff
}

TEST_CASE("relu values and gradient") {
  Graph g;
  Var x = g.leaf(Tensor::vector({-1.0, 0.0, 2.0}));
  Var y = g.relu(x);
  CHECK(y.value().at(0) == 0.0);
  CHECK(y.value().at(1) == 0.0);
  CHECK(y.value().at(2) == 2.0);

  Var all_neg = g.relu(g.leaf(Tensor::vector({-3.0, -0.5, -1e9})));
  for (std::size_t i = 0; i < 3; ++i) CHECK(all_neg.value().at(i) == 0.0);

  CounterRng rng(4);
  const Tensor input = random_away_from_zero({2, 6}, rng, 1e-3 * 10);
  const Tensor w = random_tensor({2, 6}, rng);
  auto res = check_gradients({input},
                             [&](Graph& gg, const std::vector<Tensor>& ts, std::vector<Var>* lv) {
                               Var v = gg.leaf(ts[0]);
                               if (lv) lv->push_back(v);
                               return weighted_sum(gg, gg.relu(v), w);
                             });
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("rmsnorm values") {
  Graph g;
  SUBCASE("constant positive vector with unit gain is all ones") {
    Var x = g.leaf(Tensor::vector({2.5, 2.5, 2.5, 2.5}));
    Var gain = g.leaf(Tensor::full({4}, 1.0));
    Var y = g.rmsnorm_rows(x, gain, 0.0);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(y.value().at(i) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("zero vector stays zero with eps") {
    Var x = g.leaf(Tensor({5}));
    Var gain = g.leaf(Tensor::full({5}, 1.0));
    Var y = g.rmsnorm_rows(x, gain, 1e-5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(y.value().at(i) == 0.0);
  }
}

TEST_CASE("rmsnorm gradient") {
  CounterRng rng(5);
  const Tensor x = random_tensor({8}, rng, 0.2, 1.5);
  const Tensor gain = random_tensor({8}, rng, 0.5, 1.5);
  const Tensor w = random_tensor({8}, rng);
  auto res = check_gradients(
      {x, gain},
      [&](Graph& g, const std::vector<Tensor>& ts, std::vector<Var>* lv) {
        Var vx = g.leaf(ts[0]);
        Var vg = g.leaf(ts[1]);
        if (lv) {
          lv->push_back(vx);
          lv->push_back(vg);
        }
        return weighted_sum(g, g.rmsnorm_rows(vx, vg, 1e-5), w);
      });
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("softmax rows") {
  Graph g;
  SUBCASE("uniform row") {
    Var y = g.softmax_rows(g.leaf(Tensor::vector({0.7, 0.7, 0.7, 0.7, 0.7})));
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(y.value().at(i) == doctest::Approx(0.2).epsilon(1e-12));
    }
  }
  SUBCASE("offset by ln 2 gives 1/3, 2/3") {
    const double x = 0.31;
    Var y = g.softmax_rows(g.leaf(Tensor::vector({x, x + std::log(2.0)})));
    CHECK(y.value().at(0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(y.value().at(1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  }
  SUBCASE("rows sum to one within 1e-12") {
    CounterRng rng(6);
    Var y = g.softmax_rows(g.leaf(random_tensor({6, 9}, rng, -30.0, 30.0)));
    for (std::size_t r = 0; r < 6; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 9; ++c) s += y.value().at(r, c);
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("softmax gradient") {
  CounterRng rng(7);
  const Tensor x = random_tensor({3, 4}, rng, -2.0, 2.0);
  const Tensor w = random_tensor({3, 4}, rng);
  auto res = check_gradients({x},
                             [&](Graph& g, const std::vector<Tensor>& ts, std::vector<Var>* lv) {
                               Var vx = g.leaf(ts[0]);
                               if (lv) lv->push_back(vx);
                               return weighted_sum(g, g.softmax_rows(vx), w);
                             });
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("swiglu feed-forward") {
  SUBCASE("all-zero weights give zero output") {
    Graph g;
    Var x = g.leaf(Tensor::vector({1.0, -2.0, 0.5, 3.0}));
    Var out = swiglu_ffn(g, x, g.leaf(Tensor({6, 4})), g.leaf(Tensor({6, 4})),
                         g.leaf(Tensor({4, 6})));
    for (std::size_t i = 0; i < 4; ++i) CHECK(out.value().at(i) == 0.0);
  }
  SUBCASE("zero gate path gives zero output") {
    // silu(W1 x) == 0 when W1 == 0, so the product vanishes regardless of W3.
    CounterRng rng(8);
    Graph g;
    Var x = g.leaf(random_tensor({4}, rng));
    Var out = swiglu_ffn(g, x, g.leaf(Tensor({6, 4})), g.leaf(random_tensor({6, 4}, rng)),
                         g.leaf(random_tensor({4, 6}, rng)));
    for (std::size_t i = 0; i < 4; ++i) CHECK(out.value().at(i) == 0.0);
  }
  SUBCASE("gradient") {
    CounterRng rng(9);
    const Tensor x = random_tensor({4}, rng);
    const Tensor w1 = random_tensor({6, 4}, rng);
    const Tensor w3 = random_tensor({6, 4}, rng);
    const Tensor w2 = random_tensor({4, 6}, rng);
    const Tensor w = random_tensor({4}, rng);
    auto res = check_gradients(
        {x, w1, w3, w2},
        [&](Graph& g, const std::vector<Tensor>& ts, std::vector<Var>* lv) {
          Var vx = g.leaf(ts[0]);
          Var v1 = g.leaf(ts[1]);
          Var v3 = g.leaf(ts[2]);
          Var v2 = g.leaf(ts[3]);
          if (lv) {
            lv->push_back(vx);
            lv->push_back(v1);
            lv->push_back(v3);
            lv->push_back(v2);
          }
          return weighted_sum(g, swiglu_ffn(g, vx, v1, v3, v2), w);
        });
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("rotary positions") {
  CounterRng rng(10);
  const std::size_t d_head = 8;
  SUBCASE("position zero is the identity") {
    Graph g;
    const Tensor x = random_tensor({1, d_head}, rng);
    const std::size_t pos[] = {0};
    Var y = g.rope_rows(g.leaf(x), 1, pos, 10000.0);
    for (std::size_t i = 0; i < d_head; ++i) CHECK(y.value().at(i) == x.at(i));
  }
  SUBCASE("rotation preserves pair norms") {
    Graph g;
    const Tensor x = random_tensor({1, d_head}, rng);
    const std::size_t pos[] = {17};
    Var y = g.rope_rows(g.leaf(x), 1, pos, 10000.0);
    for (std::size_t i = 0; i + 1 < d_head; i += 2) {
      const double before = x.at(i) * x.at(i) + x.at(i + 1) * x.at(i + 1);
      const double after =
          y.value().at(i) * y.value().at(i) + y.value().at(i + 1) * y.value().at(i + 1);
      CHECK(std::abs(before - after) < 1e-12);
    }
  }
  SUBCASE("attention score depends only on relative offset") {
    const Tensor q = random_tensor({1, d_head}, rng);
    const Tensor k = random_tensor({1, d_head}, rng);
    auto rotated_dot = [&](std::size_t pq, std::size_t pk) {
      Graph g;
      const std::size_t pos_q[] = {pq};
      const std::size_t pos_k[] = {pk};
      Var vq = g.rope_rows(g.leaf(q), 1, pos_q, 10000.0);
      Var vk = g.rope_rows(g.leaf(k), 1, pos_k, 10000.0);
      double dot = 0.0;
      for (std::size_t i = 0; i < d_head; ++i) dot += vq.value().at(i) * vk.value().at(i);
      return dot;
    };
    CHECK(std::abs(rotated_dot(3, 1) - rotated_dot(5, 3)) < 1e-9);
  }
  SUBCASE("odd head dimension is rejected") {
    Graph g;
    const std::size_t pos[] = {0};
    CHECK_THROWS_AS(g.rope_rows(g.leaf(Tensor({1, 6})), 2, pos, 10000.0), ConfigError);
  }
  SUBCASE("gradient") {
    const Tensor x = random_tensor({3, 8}, rng);
    const Tensor w = random_tensor({3, 8}, rng);
    const std::vector<std::size_t> pos = {0, 1, 2};
    auto res = check_gradients(
        {x},
        [&](Graph& g, const std::vector<Tensor>& ts, std::vector<Var>* lv) {
          Var vx = g.leaf(ts[0]);
          if (lv) lv->push_back(vx);
          return weighted_sum(g, g.rope_rows(vx, 2, pos, 10000.0), w);
        });
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("cross entropy values") {
  Graph g;
  SUBCASE("uniform logits give ln V") {
    const std::size_t v = 7;
    Var logits = g.leaf(Tensor::full({2, v}, 0.3));
    const int targets[] = {4, 0};
    const std::uint8_t mask[] = {1, 1};
    Var loss = g.cross_entropy(logits, targets, mask);
    CHECK(loss.value().item() ==
          doctest::Approx(std::log(static_cast<double>(v))).epsilon(1e-12));
  }
  SUBCASE("dominant logit gives about zero") {
    Tensor t({1, 5});
    t.at(0, 2) = 1e4;
    Var logits = g.leaf(t);
    const int targets[] = {2};
    const std::uint8_t mask[] = {1};
    CHECK(g.cross_entropy(logits, targets, mask).value().item() < 1e-6);
  }
  SUBCASE("out-of-range target") {
    Var logits = g.leaf(Tensor({1, 5}));
    const int targets[] = {5};
    const std::uint8_t mask[] = {1};
    CHECK_THROWS_AS(g.cross_entropy(logits, targets, mask), DimensionError);
  }
  SUBCASE("masked positions are excluded") {
    Tensor t({2, 4});
    t.at(1, 1) = 50.0;  // would dominate if counted
    Var logits = g.leaf(t);
    const int targets[] = {0, 0};
    const std::uint8_t mask[] = {1, 0};
    CHECK(g.cross_entropy(logits, targets, mask).value().item() ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
}

TEST_CASE("cross entropy gradient") {
  CounterRng rng(11);
  const Tensor logits = random_tensor({2, 5}, rng, -2.0, 2.0);
  const std::vector<int> targets = {3, 1};
  const std::vector<std::uint8_t> mask = {1, 1};
  auto res = check_gradients(
      {logits},
      [&](Graph& g, const std::vector<Tensor>& ts, std::vector<Var>* lv) {
        Var vl = g.leaf(ts[0]);
        if (lv) lv->push_back(vl);
        return g.cross_entropy(vl, targets, mask);
      });
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("backward basics") {
  SUBCASE("loss = sum(x) gives ones") {
    Graph g;
    Tensor x = Tensor::vector({1.0, -2.0, 3.0});
    x.requires_grad = true;
    Var vx = g.leaf(x);
    g.backward(g.sum(vx));
    for (std::size_t i = 0; i < 3; ++i) CHECK(g.grad(vx).at(i) == 1.0);
  }
  SUBCASE("loss = sum(x*x) gives 2x") {
    Graph g;
    Tensor x = Tensor::vector({1.5, -0.5, 2.0});
    x.requires_grad = true;
    Var vx = g.leaf(x);
    g.backward(g.sum(g.hadamard(vx, vx)));
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(g.grad(vx).at(i) == doctest::Approx(2.0 * x.at(i)).epsilon(1e-15));
    }
  }
  SUBCASE("fan-out accumulates: sum(x) + sum(2x) gives 3") {
    Graph g;
    Tensor x = Tensor::vector({0.25, -4.0});
    x.requires_grad = true;
    Var vx = g.leaf(x);
    Var loss = g.add(g.sum(vx), g.sum(g.scale(vx, 2.0)));
    g.backward(loss);
    CHECK(g.grad(vx).at(0) == 3.0);
    CHECK(g.grad(vx).at(1) == 3.0);
  }
  SUBCASE("double backward without reset is an error") {
    Graph g;
    Tensor x = Tensor::vector({1.0});
    x.requires_grad = true;
    Var vx = g.leaf(x);
    Var loss = g.sum(vx);
    g.backward(loss);
    CHECK_THROWS_AS(g.backward(loss), NumericsError);
    g.reset_grads();
    g.backward(loss);  // fine after reset
    CHECK(g.grad(vx).at(0) == 1.0);
  }
  SUBCASE("non-scalar loss is an error") {
    Graph g;
    Tensor x = Tensor::vector({1.0, 2.0});
    x.requires_grad = true;
    Var vx = g.leaf(x);
    CHECK_THROWS_AS(g.backward(vx), NumericsError);
  }
  SUBCASE("node from another graph is rejected") {
    Graph g1, g2;
    Tensor x = Tensor::vector({1.0});
    x.requires_grad = true;
    Var vx = g1.leaf(x);
    CHECK_THROWS_AS(g2.backward(vx), NumericsError);
    CHECK_THROWS_AS(g2.sum(vx), NumericsError);
  }
}

TEST_CASE("non-finite values are rejected, never silent") {
  Graph g;
  SUBCASE("leaf") {
    Tensor bad = Tensor::vector({1.0, std::numeric_limits<double>::infinity()});
    CHECK_THROWS_AS(g.leaf(bad), NumericsError);
  }
  SUBCASE("overflow in an op") {
    Var huge = g.leaf(Tensor::full({2, 2}, 1e200));
    CHECK_THROWS_AS(g.matmul(huge, huge), NumericsError);
  }
}
