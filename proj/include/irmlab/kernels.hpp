#pragma once

#include <cstddef>

#include "irmlab/tensor.hpp"

// Row-level numeric kernels shared by the training graph and the inference
// session. Both paths must produce identical bits for the same inputs, so all
// reductions here run in a fixed order and every caller goes through these
// functions instead of open-coding the loop. Marked noinline so the compiler
// emits exactly one version of each reduction.

namespace irmlab::kern {

#define IRMLAB_NOINLINE __attribute__((noinline))

IRMLAB_NOINLINE double dot(const double* a, const double* b, std::size_t n);

/// y += alpha * x
IRMLAB_NOINLINE void axpy(double alpha, const double* x, double* y, std::size_t n);

/// out[o] = dot(w.row(o), x) for a weight matrix w of shape [o x i].
void linear_row(const Tensor& w, const double* x, double* out);

/// 1 / sqrt(mean(x^2) + eps)
IRMLAB_NOINLINE double rms_inv(const double* x, std::size_t n, double eps);

/// out = gain * x * rms_inv(x); out may alias x.
void rmsnorm_row(const double* x, const double* gain, std::size_t n, double eps, double* out);

double sigmoid(double z);
double silu(double z);  // z * sigmoid(z)

/// In-place rotary rotation of one row laid out as n_heads consecutive
/// head slices of d_head values; consecutive pairs rotate by
/// pos * theta^(-2i/d_head).
void rope_row(double* row, std::size_t d_model, std::size_t n_heads, std::size_t pos,
              double theta);

/// Stabilized softmax over x[0..n); writes probabilities to out (may alias x).
IRMLAB_NOINLINE void softmax_row(const double* x, std::size_t n, double* out);

/// Causal attention for one query row against cached keys/values.
///   q:        one row of d_model values (post-rope), heads concatenated
///   keys/vals: n_ctx rows with stride d_model (post-rope keys)
///   out:      d_model values (heads concatenated), overwritten
///   weights:  if non-null, n_heads * n_ctx attention probabilities
/// The query attends to context rows [0, n_ctx) in index order; the scale is
/// 1/sqrt(d_head) applied multiplicatively.
void attention_row(const double* q, const double* keys, const double* vals,
                   std::size_t n_ctx, std::size_t d_model, std::size_t n_heads, double* out,
                   double* weights);

/// log(sum(exp(x))) with max-subtraction.
IRMLAB_NOINLINE double log_sum_exp(const double* x, std::size_t n);

#undef IRMLAB_NOINLINE

}  // namespace irmlab::kern
