#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "irmlab/tensor.hpp"

namespace irmlab {

class Graph;

/// Handle to a node on a Graph's tape. Cheap to copy; only valid for the
/// graph that created it.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const Tensor& grad() const;
  Graph* graph() const { return graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Dynamic tape for reverse-mode differentiation. Nodes are appended in
/// execution order, which is already a topological order, so backward() is a
/// single reverse sweep. One graph is single-writer; distinct graphs are
/// independent.
///
/// Shapes are explicit everywhere. The only broadcast is add_row_bias. Every
/// op validates that its output is finite and throws NumericsError otherwise.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Copies `t` onto the tape. requires_grad is taken from the tensor.
  Var leaf(const Tensor& t);
  Var leaf(const Tensor& t, bool requires_grad);

  // --- elementwise and structural ---
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var hadamard(Var a, Var b);
  Var scale(Var a, double c);
  Var relu(Var a);
  Var silu(Var a);
  Var sum(Var a);                        // scalar
  Var add_row_bias(Var x, Var bias);     // x: [t x d], bias: [d]
  Var transpose(Var a);                  // rank-2
  Var col_slice(Var x, std::size_t from, std::size_t width);

  // --- linear algebra ---
  Var matmul(Var a, Var b);              // [m x k] . [k x n]
  Var linear(Var x, Var w);              // x . w^T; x: [t x i], w: [o x i]

  // --- model building blocks ---
  Var rmsnorm_rows(Var x, Var gain, double eps);
  Var softmax_rows(Var x);
  Var rope_rows(Var x, std::size_t n_heads, std::span<const std::size_t> positions,
                double theta);
  Var causal_attention(Var q, Var k, Var v, std::size_t n_heads);
  Var embedding_rows(Var table, std::span<const int> ids);

  /// Mean negative log-likelihood over positions where mask is nonzero.
  Var cross_entropy(Var logits, std::span<const int> targets,
                    std::span<const std::uint8_t> mask);
  /// Same, but the sum instead of the mean (for token-weighted batching).
  Var cross_entropy_sum(Var logits, std::span<const int> targets,
                        std::span<const std::uint8_t> mask);

  /// Reverse sweep from a scalar loss. Each node is visited exactly once, in
  /// reverse topological (= reverse creation) order. Calling twice without
  /// reset_grads() is an error.
  void backward(Var loss);
  void reset_grads();

  std::size_t node_count() const { return nodes_.size(); }
  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;

 private:
  friend class Var;
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  struct Node {
    Tensor value;
    Tensor grad;              // allocated lazily during backward
    bool requires_grad = false;
    bool grad_live = false;   // grad tensor allocated
    std::vector<std::size_t> inputs;
    BackwardFn backward;      // empty for leaves
    const char* op = "leaf";
    std::vector<double> saved;  // op-specific stash (softmax probs, rope angles, ...)
  };

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  Tensor& grad_buffer(std::size_t id);  // allocate-on-first-use
  bool wants_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  Var emit(Tensor value, std::vector<std::size_t> inputs, const char* op, BackwardFn fn,
           std::vector<double> saved = {});
  Var make_cross_entropy(Var logits, std::span<const int> targets,
                         std::span<const std::uint8_t> mask, bool mean, const char* op);
  void check_same_graph(Var v, const char* op) const;
  std::size_t checked_id(Var v, const char* op) const;

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

/// Plain-value cross-entropy over logit rows; shares the row math with the
/// graph op so evaluation and training losses agree bitwise.
double cross_entropy_rows(const Tensor& logits, std::span<const int> targets,
                          std::span<const std::uint8_t> mask);

/// w2 . (silu(w1 . x) * (w3 . x)) applied per row of x.
/// x: [t x d], w1/w3: [f x d], w2: [d x f].
Var swiglu_ffn(Graph& g, Var x, Var w1, Var w3, Var w2);

}  // namespace irmlab
