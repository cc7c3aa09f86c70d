#include "irmlab/graph.hpp"

#include <cmath>
#include <string>

#include "irmlab/errors.hpp"
#include "irmlab/kernels.hpp"

namespace irmlab {

namespace {

// Shared forward for cross_entropy / cross_entropy_sum / cross_entropy_rows.
// Returns the summed NLL over unmasked rows; fills probs (t x V) when asked.
double ce_forward(const Tensor& logits, std::span<const int> targets,
                  std::span<const std::uint8_t> mask, std::size_t* count_out,
                  Tensor* probs_out) {
  const std::size_t t = logits.rows();
  const std::size_t v = logits.cols();
  if (targets.size() != t || mask.size() != t) {
    throw DimensionError("cross_entropy: targets/mask length " + std::to_string(targets.size()) +
                         "/" + std::to_string(mask.size()) + " vs " + std::to_string(t) +
                         " logit rows");
  }
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < t; ++p) {
    const int tgt = targets[p];
    if (tgt < 0 || static_cast<std::size_t>(tgt) >= v) {
      throw DimensionError("cross_entropy: target " + std::to_string(tgt) +
                           " out of range for vocab " + std::to_string(v));
    }
    const double* row = logits.row(p);
    const double lse = kern::log_sum_exp(row, v);
    if (probs_out != nullptr) {
      double* pr = probs_out->row(p);
      for (std::size_t i = 0; i < v; ++i) pr[i] = std::exp(row[i] - lse);
    }
    if (mask[p]) {
      total += lse - row[static_cast<std::size_t>(tgt)];
      ++count;
    }
  }
  if (count == 0) throw DimensionError("cross_entropy: every position is masked out");
  *count_out = count;
  return total;
}

void rope_rotate_grad(double* row, std::size_t d_model, std::size_t n_heads, std::size_t pos,
                      double theta) {
  // Inverse rotation: transpose of the forward rotation matrix.
  const std::size_t d_head = d_model / n_heads;
  const double p = static_cast<double>(pos);
  for (std::size_t h = 0; h < n_heads; ++h) {
    double* head = row + h * d_head;
    for (std::size_t i = 0; i + 1 < d_head; i += 2) {
      const double freq =
          std::pow(theta, -static_cast<double>(i) / static_cast<double>(d_head));
      const double angle = p * freq;
      const double c = std::cos(angle);
      const double s = std::sin(angle);
      const double g0 = head[i];
      const double g1 = head[i + 1];
      head[i] = g0 * c + g1 * s;
      head[i + 1] = -g0 * s + g1 * c;
    }
  }
}

struct RowsView {
  std::size_t rows;
  std::size_t cols;
};

// Rank-1 tensors are treated as a single row; rank-2 as-is.
RowsView rows_view(const Tensor& t, const char* op) {
  if (t.rank() == 1) return {1, t.shape()[0]};
  if (t.rank() == 2) return {t.shape()[0], t.shape()[1]};
  throw DimensionError(std::string(op) + ": expected rank 1 or 2, got " + t.shape_str());
}

}  // namespace

const Tensor& Var::value() const { return graph_->value(*this); }
const Tensor& Var::grad() const { return graph_->grad(*this); }

void Graph::check_same_graph(Var v, const char* op) const {
  if (v.graph() != this) {
    throw NumericsError(std::string(op) + ": node belongs to a different graph (detached)");
  }
  if (v.id() >= nodes_.size()) {
    throw NumericsError(std::string(op) + ": dangling node id");
  }
}

std::size_t Graph::checked_id(Var v, const char* op) const {
  check_same_graph(v, op);
  return v.id();
}

const Tensor& Graph::value(Var v) const { return nodes_[checked_id(v, "value")].value; }

const Tensor& Graph::grad(Var v) const {
  const Node& n = nodes_[checked_id(v, "grad")];
  if (!backward_done_) throw NumericsError("grad: backward has not run");
  if (!n.grad_live) {
    throw NumericsError("grad: node has no gradient (not on a path that requires grad)");
  }
  return n.grad;
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.grad_live) {
    n.grad = Tensor(n.value.shape());
    n.grad_live = true;
  }
  return n.grad;
}

Var Graph::emit(Tensor value, std::vector<std::size_t> inputs, const char* op, BackwardFn fn,
                std::vector<double> saved) {
  if (!value.all_finite()) {
    throw NumericsError(std::string(op) + ": produced non-finite values");
  }
  Node n;
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.op = op;
  n.backward = std::move(fn);
  n.saved = std::move(saved);
  for (std::size_t in : n.inputs) {
    if (nodes_[in].requires_grad) {
      n.requires_grad = true;
      break;
    }
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::leaf(const Tensor& t) { return leaf(t, t.requires_grad); }

Var Graph::leaf(const Tensor& t, bool requires_grad) {
  if (!t.all_finite()) throw NumericsError("leaf: tensor contains non-finite values");
  Node n;
  n.value = t;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::add(Var a, Var b) {
  const std::size_t ia = checked_id(a, "add");
  const std::size_t ib = checked_id(b, "add");
  const Tensor& ta = nodes_[ia].value;
  const Tensor& tb = nodes_[ib].value;
  if (!ta.same_shape(tb)) {
    throw DimensionError("add: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  }
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) += tb.at(i);
  return emit(std::move(out), {ia, ib}, "add", [](Graph& g, std::size_t id) {
    const Node& n = g.node(id);
    for (std::size_t in : n.inputs) {
      if (!g.wants_grad(in)) continue;
      Tensor& gi = g.grad_buffer(in);
      kern::axpy(1.0, n.grad.data(), gi.data(), gi.size());
    }
  });
}

Var Graph::sub(Var a, Var b) {
  const std::size_t ia = checked_id(a, "sub");
  const std::size_t ib = checked_id(b, "sub");
  const Tensor& ta = nodes_[ia].value;
  const Tensor& tb = nodes_[ib].value;
  if (!ta.same_shape(tb)) {
    throw DimensionError("sub: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  }
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) -= tb.at(i);
  return emit(std::move(out), {ia, ib}, "sub", [](Graph& g, std::size_t id) {
    const Node& n = g.node(id);
    if (g.wants_grad(n.inputs[0])) {
      Tensor& ga = g.grad_buffer(n.inputs[0]);
      kern::axpy(1.0, n.grad.data(), ga.data(), ga.size());
    }
    if (g.wants_grad(n.inputs[1])) {
      Tensor& gb = g.grad_buffer(n.inputs[1]);
      kern::axpy(-1.0, n.grad.data(), gb.data(), gb.size());
    }
  });
}

Var Graph::hadamard(Var a, Var b) {
  const std::size_t ia = checked_id(a, "hadamard");
  const std::size_t ib = checked_id(b, "hadamard");
  const Tensor& ta = nodes_[ia].value;
  const Tensor& tb = nodes_[ib].value;
  if (!ta.same_shape(tb)) {
    throw DimensionError("hadamard: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  }
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) *= tb.at(i);
  return emit(std::move(out), {ia, ib}, "hadamard", [](Graph& g, std::size_t id) {
    const Node& n = g.node(id);
    const Tensor& va = g.node(n.inputs[0]).value;
    const Tensor& vb = g.node(n.inputs[1]).value;
    if (g.wants_grad(n.inputs[0])) {
      Tensor& ga = g.grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < ga.size(); ++i) ga.at(i) += n.grad.at(i) * vb.at(i);
    }
    if (g.wants_grad(n.inputs[1])) {
      Tensor& gb = g.grad_buffer(n.inputs[1]);
      for (std::size_t i = 0; i < gb.size(); ++i) gb.at(i) += n.grad.at(i) * va.at(i);
    }
  });
}

Var Graph::scale(Var a, double c) {
  const std::size_t ia = checked_id(a, "scale");
  Tensor out = nodes_[ia].value;
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) *= c;
  return emit(std::move(out), {ia}, "scale",
              [](Graph& g, std::size_t id) {
                const Node& n = g.node(id);
                if (!g.wants_grad(n.inputs[0])) return;
                Tensor& ga = g.grad_buffer(n.inputs[0]);
                kern::axpy(n.saved[0], n.grad.data(), ga.data(), ga.size());
              },
              {c});
}

Var Graph::relu(Var a) {
  const std::size_t ia = checked_id(a, "relu");
  Tensor out = nodes_[ia].value;
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = out.at(i) > 0.0 ? out.at(i) : 0.0;
  return emit(std::move(out), {ia}, "relu", [](Graph& g, std::size_t id) {
    const Node& n = g.node(id);
    if (!g.wants_grad(n.inputs[0])) return;
    const Tensor& x = g.node(n.inputs[0]).value;
    Tensor& ga = g.grad_buffer(n.inputs[0]);
    // Subgradient 0 at x == 0.
    for (std::size_t i = 0; i < ga.size(); ++i) {
      if (x.at(i) > 0.0) ga.at(i) += n.grad.at(i);
    }
  });
}

Var Graph::silu(Var a) {
  const std::size_t ia = checked_id(a, "silu");
  Tensor out = nodes_[ia].value;
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = kern::silu(out.at(i));
  return emit(std::move(out), {ia}, "silu", [](Graph& g, std::size_t id) {
    const Node& n = g.node(id);
    if (!g.wants_grad(n.inputs[0])) return;
    const Tensor& x = g.node(n.inputs[0]).value;
    Tensor& ga = g.grad_buffer(n.inputs[0]);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const double s = kern::sigmoid(x.at(i));
      ga.at(i) += n.grad.at(i) * s * (1.0 + x.at(i) * (1.0 - s));
    }
  });
}

Var Graph::sum(Var a) {
  const std::size_t ia = checked_id(a, "sum");
  const Tensor& ta = nodes_[ia].value;
  double s = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) s += ta.at(i);
  return emit(Tensor::scalar(s), {ia}, "sum", [](Graph& g, std::size_t id) {
    const Node& n = g.node(id);
    if (!g.wants_grad(n.inputs[0])) return;
    const double gs = n.grad.at(0);
    Tensor& ga = g.grad_buffer(n.inputs[0]);
    for (std::size_t i = 0; i < ga.size(); ++i) ga.at(i) += gs;
  });
}

Var Graph::add_row_bias(Var x, Var bias) {
  const std::size_t ix = checked_id(x, "add_row_bias");
  const std::size_t ib = checked_id(bias, "add_row_bias");
  const Tensor& tx = nodes_[ix].value;
  const Tensor& tb = nodes_[ib].value;
  const RowsView v = rows_view(tx, "add_row_bias");
  if (tb.rank() != 1 || tb.shape()[0] != v.cols) {
    throw DimensionError("add_row_bias: bias " + tb.shape_str() + " vs rows of width " +
                         std::to_string(v.cols));
  }
  Tensor out = tx;
  for (std::size_t p = 0; p < v.rows; ++p) {
    double* r = out.data() + p * v.cols;
    kern::axpy(1.0, tb.data(), r, v.cols);
  }
  return emit(std::move(out), {ix, ib}, "add_row_bias", [](Graph& g, std::size_t id) {
    const Node& n = g.node(id);
    const RowsView v = rows_view(n.value, "add_row_bias");
    if (g.wants_grad(n.inputs[0])) {
      Tensor& gx = g.grad_buffer(n.inputs[0]);
      kern::axpy(1.0, n.grad.data(), gx.data(), gx.size());
    }
    if (g.wants_grad(n.inputs[1])) {
      Tensor& gb = g.grad_buffer(n.inputs[1]);
      for (std::size_t p = 0; p < v.rows; ++p) {
        kern::axpy(1.0, n.grad.data() + p * v.cols, gb.data(), v.cols);
      }
    }
  });
}

Var Graph::transpose(Var a) {
  const std::size_t ia = checked_id(a, "transpose");
  const Tensor& ta = nodes_[ia].value;
  if (ta.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + ta.shape_str());
  const std::size_t m = ta.rows();
  const std::size_t n = ta.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = ta.at(i, j);
  }
  return emit(std::move(out), {ia}, "transpose", [](Graph& g, std::size_t id) {
    const Node& n = g.node(id);
    if (!g.wants_grad(n.inputs[0])) return;
    Tensor& ga = g.grad_buffer(n.inputs[0]);
    const std::size_t r = n.value.rows();
    const std::size_t c = n.value.cols();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) ga.at(j, i) += n.grad.at(i, j);
    }
  });
}

Var Graph::col_slice(Var x, std::size_t from, std::size_t width) {
  const std::size_t ix = checked_id(x, "col_slice");
  const Tensor& tx = nodes_[ix].value;
  if (tx.rank() != 2) throw DimensionError("col_slice: expected rank 2, got " + tx.shape_str());
  const std::size_t t = tx.rows();
  const std::size_t n = tx.cols();
  if (from + width > n) {
    throw DimensionError("col_slice: [" + std::to_string(from) + ", " +
                         std::to_string(from + width) + ") out of " + std::to_string(n) +
                         " columns");
  }
  Tensor out({t, width});
  for (std::size_t p = 0; p < t; ++p) {
    const double* src = tx.row(p) + from;
    double* dst = out.row(p);
    for (std::size_t j = 0; j < width; ++j) dst[j] = src[j];
  }
  return emit(std::move(out), {ix}, "col_slice",
              [](Graph& g, std::size_t id) {
                const Node& n = g.node(id);
                if (!g.wants_grad(n.inputs[0])) return;
                Tensor& gx = g.grad_buffer(n.inputs[0]);
                const std::size_t from = static_cast<std::size_t>(n.saved[0]);
                const std::size_t width = n.value.cols();
                for (std::size_t p = 0; p < n.value.rows(); ++p) {
                  kern::axpy(1.0, n.grad.row(p), gx.row(p) + from, width);
                }
              },
              {static_cast<double>(from)});
}

Var Graph::matmul(Var a, Var b) {
  const std::size_t ia = checked_id(a, "matmul");
  const std::size_t ib = checked_id(b, "matmul");
  const Tensor& ta = nodes_[ia].value;
  const Tensor& tb = nodes_[ib].value;
  if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows()) {
    throw DimensionError("matmul: incompatible shapes " + ta.shape_str() + " . " +
                         tb.shape_str());
  }
  const std::size_t m = ta.rows();
  const std::size_t k = ta.cols();
  const std::size_t n = tb.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = out.row(i);
    for (std::size_t kk = 0; kk < k; ++kk) {
      kern::axpy(ta.at(i, kk), tb.row(kk), ci, n);
    }
  }
  return emit(std::move(out), {ia, ib}, "matmul", [](Graph& g, std::size_t id) {
    const Node& nd = g.node(id);
    const Tensor& va = g.node(nd.inputs[0]).value;
    const Tensor& vb = g.node(nd.inputs[1]).value;
    const std::size_t m = va.rows();
    const std::size_t k = va.cols();
    const std::size_t n = vb.cols();
    if (g.wants_grad(nd.inputs[0])) {
      // dA = dC . B^T
      Tensor& ga = g.grad_buffer(nd.inputs[0]);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          ga.at(i, p) += kern::dot(nd.grad.row(i), vb.row(p), n);
        }
      }
    }
    if (g.wants_grad(nd.inputs[1])) {
      // dB = A^T . dC
      Tensor& gb = g.grad_buffer(nd.inputs[1]);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          kern::axpy(va.at(i, p), nd.grad.row(i), gb.row(p), n);
        }
      }
    }
  });
}

Var Graph::linear(Var x, Var w) {
  const std::size_t ix = checked_id(x, "linear");
  const std::size_t iw = checked_id(w, "linear");
  const Tensor& tx = nodes_[ix].value;
  const Tensor& tw = nodes_[iw].value;
  const RowsView v = rows_view(tx, "linear");
  if (tw.rank() != 2 || tw.cols() != v.cols) {
    throw DimensionError("linear: weight " + tw.shape_str() + " vs input rows of width " +
                         std::to_string(v.cols));
  }
  const std::size_t o = tw.rows();
  Tensor out(tx.rank() == 1 ? std::vector<std::size_t>{o}
                            : std::vector<std::size_t>{v.rows, o});
  for (std::size_t p = 0; p < v.rows; ++p) {
    kern::linear_row(tw, tx.data() + p * v.cols, out.data() + p * o);
  }
  return emit(std::move(out), {ix, iw}, "linear", [](Graph& g, std::size_t id) {
    const Node& nd = g.node(id);
    const Tensor& vx = g.node(nd.inputs[0]).value;
    const Tensor& vw = g.node(nd.inputs[1]).value;
    const RowsView v = rows_view(vx, "linear");
    const std::size_t o = vw.rows();
    if (g.wants_grad(nd.inputs[0])) {
      Tensor& gx = g.grad_buffer(nd.inputs[0]);
      for (std::size_t p = 0; p < v.rows; ++p) {
        double* gxp = gx.data() + p * v.cols;
        const double* gyp = nd.grad.data() + p * o;
        for (std::size_t r = 0; r < o; ++r) kern::axpy(gyp[r], vw.row(r), gxp, v.cols);
      }
    }
    if (g.wants_grad(nd.inputs[1])) {
      Tensor& gw = g.grad_buffer(nd.inputs[1]);
      for (std::size_t p = 0; p < v.rows; ++p) {
        const double* xp = vx.data() + p * v.cols;
        const double* gyp = nd.grad.data() + p * o;
        for (std::size_t r = 0; r < o; ++r) kern::axpy(gyp[r], xp, gw.row(r), v.cols);
      }
    }
  });
}

Var Graph::rmsnorm_rows(Var x, Var gain, double eps) {
  const std::size_t ix = checked_id(x, "rmsnorm");
  const std::size_t ig = checked_id(gain, "rmsnorm");
  const Tensor& tx = nodes_[ix].value;
  const Tensor& tg = nodes_[ig].value;
  const RowsView v = rows_view(tx, "rmsnorm");
  if (v.cols == 0) throw DimensionError("rmsnorm: empty rows");
  if (tg.rank() != 1 || tg.shape()[0] != v.cols) {
    throw DimensionError("rmsnorm: gain " + tg.shape_str() + " vs rows of width " +
                         std::to_string(v.cols));
  }
  Tensor out(tx.shape());
  std::vector<double> saved(v.rows + 1);
  saved[0] = eps;
  for (std::size_t p = 0; p < v.rows; ++p) {
    kern::rmsnorm_row(tx.data() + p * v.cols, tg.data(), v.cols, eps, out.data() + p * v.cols);
    saved[1 + p] = kern::rms_inv(tx.data() + p * v.cols, v.cols, eps);
  }
  return emit(std::move(out), {ix, ig}, "rmsnorm",
              [](Graph& g, std::size_t id) {
                const Node& nd = g.node(id);
                const Tensor& vx = g.node(nd.inputs[0]).value;
                const Tensor& vg = g.node(nd.inputs[1]).value;
                const RowsView v = rows_view(vx, "rmsnorm");
                const double d = static_cast<double>(v.cols);
                const bool want_x = g.wants_grad(nd.inputs[0]);
                const bool want_g = g.wants_grad(nd.inputs[1]);
                std::vector<double> u(v.cols);
                for (std::size_t p = 0; p < v.rows; ++p) {
                  const double inv = nd.saved[1 + p];
                  const double* xp = vx.data() + p * v.cols;
                  const double* gy = nd.grad.data() + p * v.cols;
                  if (want_x) {
                    for (std::size_t i = 0; i < v.cols; ++i) u[i] = gy[i] * vg.at(i);
                    const double ux = kern::dot(u.data(), xp, v.cols);
                    const double coef = inv * inv * inv / d * ux;
                    Tensor& gx = g.grad_buffer(nd.inputs[0]);
                    double* gxp = gx.data() + p * v.cols;
                    for (std::size_t i = 0; i < v.cols; ++i) {
                      gxp[i] += inv * u[i] - coef * xp[i];
                    }
                  }
                  if (want_g) {
                    Tensor& gg = g.grad_buffer(nd.inputs[1]);
                    for (std::size_t i = 0; i < v.cols; ++i) {
                      gg.at(i) += gy[i] * (xp[i] * inv);
                    }
                  }
                }
              },
              std::move(saved));
}

Var Graph::softmax_rows(Var x) {
  const std::size_t ix = checked_id(x, "softmax_rows");
  const Tensor& tx = nodes_[ix].value;
  const RowsView v = rows_view(tx, "softmax_rows");
  Tensor out(tx.shape());
  for (std::size_t p = 0; p < v.rows; ++p) {
    kern::softmax_row(tx.data() + p * v.cols, v.cols, out.data() + p * v.cols);
  }
  return emit(std::move(out), {ix}, "softmax_rows", [](Graph& g, std::size_t id) {
    const Node& nd = g.node(id);
    if (!g.wants_grad(nd.inputs[0])) return;
    const RowsView v = rows_view(nd.value, "softmax_rows");
    Tensor& gx = g.grad_buffer(nd.inputs[0]);
    for (std::size_t p = 0; p < v.rows; ++p) {
      const double* y = nd.value.data() + p * v.cols;
      const double* gy = nd.grad.data() + p * v.cols;
      const double gysum = kern::dot(gy, y, v.cols);
      double* gxp = gx.data() + p * v.cols;
      for (std::size_t i = 0; i < v.cols; ++i) gxp[i] += y[i] * (gy[i] - gysum);
    }
  });
}

Var Graph::rope_rows(Var x, std::size_t n_heads, std::span<const std::size_t> positions,
                     double theta) {
  const std::size_t ix = checked_id(x, "rope");
  const Tensor& tx = nodes_[ix].value;
  const RowsView v = rows_view(tx, "rope");
  if (n_heads == 0 || v.cols % n_heads != 0) {
    throw ConfigError("rope: row width " + std::to_string(v.cols) + " not divisible into " +
                      std::to_string(n_heads) + " heads");
  }
  if ((v.cols / n_heads) % 2 != 0) {
    throw ConfigError("rope: head dimension " + std::to_string(v.cols / n_heads) +
                      " must be even");
  }
  if (positions.size() != v.rows) {
    throw DimensionError("rope: " + std::to_string(positions.size()) + " positions for " +
                         std::to_string(v.rows) + " rows");
  }
  Tensor out = tx;
  std::vector<double> saved;
  saved.reserve(v.rows + 2);
  saved.push_back(static_cast<double>(n_heads));
  saved.push_back(theta);
  for (std::size_t p = 0; p < v.rows; ++p) {
    kern::rope_row(out.data() + p * v.cols, v.cols, n_heads, positions[p], theta);
    saved.push_back(static_cast<double>(positions[p]));
  }
  return emit(std::move(out), {ix}, "rope",
              [](Graph& g, std::size_t id) {
                const Node& nd = g.node(id);
                if (!g.wants_grad(nd.inputs[0])) return;
                const RowsView v = rows_view(nd.value, "rope");
                const std::size_t n_heads = static_cast<std::size_t>(nd.saved[0]);
                const double theta = nd.saved[1];
                Tensor rotated = nd.grad;
                for (std::size_t p = 0; p < v.rows; ++p) {
                  rope_rotate_grad(rotated.data() + p * v.cols, v.cols, n_heads,
                                   static_cast<std::size_t>(nd.saved[2 + p]), theta);
                }
                Tensor& gx = g.grad_buffer(nd.inputs[0]);
                kern::axpy(1.0, rotated.data(), gx.data(), gx.size());
              },
              std::move(saved));
}

Var Graph::causal_attention(Var q, Var k, Var v, std::size_t n_heads) {
  const std::size_t iq = checked_id(q, "causal_attention");
  const std::size_t ik = checked_id(k, "causal_attention");
  const std::size_t iv = checked_id(v, "causal_attention");
  const Tensor& tq = nodes_[iq].value;
  const Tensor& tk = nodes_[ik].value;
  const Tensor& tv = nodes_[iv].value;
  if (tq.rank() != 2 || !tq.same_shape(tk) || !tq.same_shape(tv)) {
    throw DimensionError("causal_attention: q/k/v shapes " + tq.shape_str() + "/" +
                         tk.shape_str() + "/" + tv.shape_str() + " must match");
  }
  const std::size_t t = tq.rows();
  const std::size_t d = tq.cols();
  if (n_heads == 0 || d % n_heads != 0) {
    throw ConfigError("causal_attention: d_model " + std::to_string(d) +
                      " not divisible into " + std::to_string(n_heads) + " heads");
  }
  Tensor out({t, d});
  // Attention probabilities per row: n_heads * (p+1) values, rows concatenated.
  std::vector<double> saved;
  saved.reserve(1 + n_heads * t * (t + 1) / 2);
  saved.push_back(static_cast<double>(n_heads));
  std::vector<double> wbuf;
  for (std::size_t p = 0; p < t; ++p) {
    wbuf.resize(n_heads * (p + 1));
    kern::attention_row(tq.row(p), tk.data(), tv.data(), p + 1, d, n_heads, out.row(p),
                        wbuf.data());
    saved.insert(saved.end(), wbuf.begin(), wbuf.end());
  }
  return emit(std::move(out), {iq, ik, iv}, "causal_attention",
              [](Graph& g, std::size_t id) {
                const Node& nd = g.node(id);
                const Tensor& vq = g.node(nd.inputs[0]).value;
                const Tensor& vk = g.node(nd.inputs[1]).value;
                const Tensor& vv = g.node(nd.inputs[2]).value;
                const std::size_t t = vq.rows();
                const std::size_t d = vq.cols();
                const std::size_t n_heads = static_cast<std::size_t>(nd.saved[0]);
                const std::size_t d_head = d / n_heads;
                const double scale = 1.0 / std::sqrt(static_cast<double>(d_head));
                Tensor& gq = g.grad_buffer(nd.inputs[0]);
                Tensor& gk = g.grad_buffer(nd.inputs[1]);
                Tensor& gv = g.grad_buffer(nd.inputs[2]);
                std::vector<double> dw;
                std::size_t off = 1;
                for (std::size_t p = 0; p < t; ++p) {
                  const std::size_t ctx = p + 1;
                  const double* gy = nd.grad.row(p);
                  for (std::size_t h = 0; h < n_heads; ++h) {
                    const std::size_t hoff = h * d_head;
                    const double* w = nd.saved.data() + off + h * ctx;
                    dw.resize(ctx);
                    for (std::size_t c = 0; c < ctx; ++c) {
                      dw[c] = kern::dot(gy + hoff, vv.row(c) + hoff, d_head);
                      kern::axpy(w[c], gy + hoff, gv.row(c) + hoff, d_head);
                    }
                    double wd = 0.0;
                    for (std::size_t c = 0; c < ctx; ++c) wd += w[c] * dw[c];
                    for (std::size_t c = 0; c < ctx; ++c) {
                      const double ds = w[c] * (dw[c] - wd) * scale;
                      kern::axpy(ds, vk.row(c) + hoff, gq.row(p) + hoff, d_head);
                      kern::axpy(ds, vq.row(p) + hoff, gk.row(c) + hoff, d_head);
                    }
                  }
                  off += n_heads * ctx;
                }
                // Inputs that do not require grad simply ignore the buffers;
                // allocation is harmless and keeps this loop branch-free.
                (void)gq;
                (void)gk;
                (void)gv;
              },
              std::move(saved));
}

Var Graph::embedding_rows(Var table, std::span<const int> ids) {
  const std::size_t it = checked_id(table, "embedding_rows");
  const Tensor& tt = nodes_[it].value;
  if (tt.rank() != 2) {
    throw DimensionError("embedding_rows: table must be rank 2, got " + tt.shape_str());
  }
  const std::size_t v = tt.rows();
  const std::size_t d = tt.cols();
  Tensor out({ids.size(), d});
  std::vector<double> saved;
  saved.reserve(ids.size());
  for (std::size_t p = 0; p < ids.size(); ++p) {
    const int id = ids[p];
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw DimensionError("embedding_rows: token id " + std::to_string(id) +
                           " out of vocabulary of size " + std::to_string(v));
    }
    const double* src = tt.row(static_cast<std::size_t>(id));
    double* dst = out.row(p);
    for (std::size_t j = 0; j < d; ++j) dst[j] = src[j];
    saved.push_back(static_cast<double>(id));
  }
  return emit(std::move(out), {it}, "embedding_rows",
              [](Graph& g, std::size_t id) {
                const Node& nd = g.node(id);
                if (!g.wants_grad(nd.inputs[0])) return;
                Tensor& gt = g.grad_buffer(nd.inputs[0]);
                const std::size_t d = nd.value.cols();
                for (std::size_t p = 0; p < nd.value.rows(); ++p) {
                  const auto row = static_cast<std::size_t>(nd.saved[p]);
                  kern::axpy(1.0, nd.grad.row(p), gt.row(row), d);
                }
              },
              std::move(saved));
}

// saved layout for both CE flavors: [grad_scale_per_unit, t, targets..., mask..., probs...]
Var Graph::make_cross_entropy(Var logits, std::span<const int> targets,
                              std::span<const std::uint8_t> mask, bool mean, const char* op) {
  const std::size_t il = checked_id(logits, op);
  const Tensor& tl = nodes_[il].value;
  if (tl.rank() != 2) {
    throw DimensionError(std::string(op) + ": logits must be rank 2, got " + tl.shape_str());
  }
  Tensor probs(tl.shape());
  std::size_t count = 0;
  const double total = ce_forward(tl, targets, mask, &count, &probs);
  std::vector<double> saved;
  saved.reserve(2 + targets.size() * 2 + probs.size());
  saved.push_back(mean ? 1.0 / static_cast<double>(count) : 1.0);
  saved.push_back(static_cast<double>(targets.size()));
  for (int t : targets) saved.push_back(static_cast<double>(t));
  for (std::uint8_t m : mask) saved.push_back(static_cast<double>(m));
  saved.insert(saved.end(), probs.raw().begin(), probs.raw().end());
  const double value = mean ? total / static_cast<double>(count) : total;
  return emit(Tensor::scalar(value), {il}, op,
              [](Graph& g, std::size_t id) {
                const Node& nd = g.node(id);
                if (!g.wants_grad(nd.inputs[0])) return;
                const Tensor& logits = g.node(nd.inputs[0]).value;
                const std::size_t t = logits.rows();
                const std::size_t v = logits.cols();
                const double* tgt = nd.saved.data() + 2;
                const double* msk = tgt + t;
                const double* probs = msk + t;
                const double gscale = nd.grad.at(0) * nd.saved[0];
                Tensor& gl = g.grad_buffer(nd.inputs[0]);
                for (std::size_t p = 0; p < t; ++p) {
                  if (msk[p] == 0.0) continue;
                  const double* pr = probs + p * v;
                  double* gp = gl.row(p);
                  for (std::size_t i = 0; i < v; ++i) gp[i] += gscale * pr[i];
                  gp[static_cast<std::size_t>(tgt[p])] -= gscale;
                }
              },
              std::move(saved));
}

Var Graph::cross_entropy(Var logits, std::span<const int> targets,
                         std::span<const std::uint8_t> mask) {
  return make_cross_entropy(logits, targets, mask, /*mean=*/true, "cross_entropy");
}

Var Graph::cross_entropy_sum(Var logits, std::span<const int> targets,
                             std::span<const std::uint8_t> mask) {
  return make_cross_entropy(logits, targets, mask, /*mean=*/false, "cross_entropy_sum");
}

void Graph::backward(Var loss) {
  const std::size_t il = checked_id(loss, "backward");
  if (backward_done_) {
    throw NumericsError("backward: already ran on this graph; call reset_grads() first");
  }
  const Node& ln = nodes_[il];
  if (ln.value.size() != 1) {
    throw NumericsError("backward: loss must be scalar, got " + ln.value.shape_str());
  }
  if (!ln.requires_grad) {
    throw NumericsError("backward: loss does not depend on any requires_grad leaf");
  }
  backward_done_ = true;
  grad_buffer(il).at(0) = 1.0;
  for (std::size_t i = il + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.grad_live || !n.backward) continue;
    n.backward(*this, i);
  }
  for (const Node& n : nodes_) {
    if (n.grad_live && !n.grad.all_finite()) {
      throw NumericsError(std::string("backward: non-finite gradient at op ") + n.op);
    }
  }
}

void Graph::reset_grads() {
  for (Node& n : nodes_) {
    if (n.grad_live) {
      n.grad = Tensor();
      n.grad_live = false;
    }
  }
  backward_done_ = false;
}

double cross_entropy_rows(const Tensor& logits, std::span<const int> targets,
                          std::span<const std::uint8_t> mask) {
  std::size_t count = 0;
  const double total = ce_forward(logits, targets, mask, &count, nullptr);
  return total / static_cast<double>(count);
}

Var swiglu_ffn(Graph& g, Var x, Var w1, Var w3, Var w2) {
  Var gate = g.silu(g.linear(x, w1));
  Var up = g.linear(x, w3);
  return g.linear(g.hadamard(gate, up), w2);
}

}  // namespace irmlab
