#include "irmlab/kernels.hpp"

#include <cmath>
#include <vector>

namespace irmlab::kern {

#define IRMLAB_NOINLINE __attribute__((noinline))

IRMLAB_NOINLINE double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

IRMLAB_NOINLINE void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void linear_row(const Tensor& w, const double* x, double* out) {
  const std::size_t o = w.rows();
  const std::size_t i = w.cols();
  for (std::size_t r = 0; r < o; ++r) out[r] = dot(w.row(r), x, i);
}

IRMLAB_NOINLINE double rms_inv(const double* x, std::size_t n, double eps) {
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += x[i] * x[i];
  return 1.0 / std::sqrt(ss / static_cast<double>(n) + eps);
}

void rmsnorm_row(const double* x, const double* gain, std::size_t n, double eps, double* out) {
  const double inv = rms_inv(x, n, eps);
  for (std::size_t i = 0; i < n; ++i) out[i] = gain[i] * (x[i] * inv);
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double silu(double z) { return z * sigmoid(z); }

void rope_row(double* row, std::size_t d_model, std::size_t n_heads, std::size_t pos,
              double theta) {
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
      const double x0 = head[i];
      const double x1 = head[i + 1];
      head[i] = x0 * c - x1 * s;
      head[i + 1] = x0 * s + x1 * c;
    }
  }
}

IRMLAB_NOINLINE void softmax_row(const double* x, std::size_t n, double* out) {
  double m = x[0];
  for (std::size_t i = 1; i < n; ++i) m = x[i] > m ? x[i] : m;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(x[i] - m);
    sum += out[i];
  }
  const double inv = 1.0 / sum;
  for (std::size_t i = 0; i < n; ++i) out[i] *= inv;
}

void attention_row(const double* q, const double* keys, const double* vals,
                   std::size_t n_ctx, std::size_t d_model, std::size_t n_heads, double* out,
                   double* weights) {
  const std::size_t d_head = d_model / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_head));
  // Scores buffer reused per head; n_ctx is bounded by max_seq.
  thread_local std::vector<double> scores;
  scores.resize(n_ctx);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * d_head;
    for (std::size_t t = 0; t < n_ctx; ++t) {
      scores[t] = dot(q + off, keys + t * d_model + off, d_head) * scale;
    }
    softmax_row(scores.data(), n_ctx, scores.data());
    double* out_h = out + off;
    for (std::size_t j = 0; j < d_head; ++j) out_h[j] = 0.0;
    for (std::size_t t = 0; t < n_ctx; ++t) {
      axpy(scores[t], vals + t * d_model + off, out_h, d_head);
    }
    if (weights != nullptr) {
      double* w_h = weights + h * n_ctx;
      for (std::size_t t = 0; t < n_ctx; ++t) w_h[t] = scores[t];
    }
  }
}

IRMLAB_NOINLINE double log_sum_exp(const double* x, std::size_t n) {
  double m = x[0];
  for (std::size_t i = 1; i < n; ++i) m = x[i] > m ? x[i] : m;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::exp(x[i] - m);
  return m + std::log(sum);
}

#undef IRMLAB_NOINLINE

}  // namespace irmlab::kern
