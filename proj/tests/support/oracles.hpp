#pragma once

// Reference implementations used only by tests. Each is written in the most
// literal form possible (nested loops, explicit threshold sweeps) so that it
// is independent of the optimized library code it checks.

#include <cstddef>
#include <functional>
#include <optional>
#include <set>
#include <vector>

namespace triplab::testing {

/// Average precision by explicit threshold enumeration: for every distinct
/// score, take all samples at or above it as retrieved, compute one
/// precision/recall point, and accumulate the area under the descending
/// sweep. Tied scores are inseparable by construction because a threshold
/// either includes all of them or none.
inline std::optional<double> oracle_average_precision(const std::vector<double>& scores,
                                                      const std::vector<int>& labels) {
  std::size_t positives = 0;
  for (int l : labels) positives += l != 0;
  if (positives == 0) return std::nullopt;

  std::set<double, std::greater<double>> thresholds(scores.begin(), scores.end());
  double ap = 0.0;
  double prev_recall = 0.0;
  for (double th : thresholds) {
    std::size_t retrieved = 0, tp = 0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
      if (scores[k] >= th) {
        ++retrieved;
        tp += labels[k] != 0;
      }
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(retrieved);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

/// Interaction volume by triple nested loop, elementwise-scale form:
/// volume[i,v,t] = (alpha[i]*li[i]) * (beta[v]*lv[v]) * (gamma[t]*lt[t]).
inline std::vector<double> oracle_volume_vector(const std::vector<double>& alpha,
                                                const std::vector<double>& beta,
                                                const std::vector<double>& gamma,
                                                const std::vector<double>& li,
                                                const std::vector<double>& lv,
                                                const std::vector<double>& lt) {
  const std::size_t m = li.size(), n = lv.size(), p = lt.size();
  std::vector<double> volume(m * n * p);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t v = 0; v < n; ++v)
      for (std::size_t t = 0; t < p; ++t)
        volume[(i * n + v) * p + t] = (alpha[i] * li[i]) * (beta[v] * lv[v]) * (gamma[t] * lt[t]);
  return volume;
}

/// Interaction volume by triple nested loop, full-matrix form: each logit
/// vector is first projected by its square matrix (row-major [m][m] etc.),
/// then the three projections are combined as an outer product.
inline std::vector<double> oracle_volume_matrix(const std::vector<double>& alpha,
                                                const std::vector<double>& beta,
                                                const std::vector<double>& gamma,
                                                const std::vector<double>& li,
                                                const std::vector<double>& lv,
                                                const std::vector<double>& lt) {
  const std::size_t m = li.size(), n = lv.size(), p = lt.size();
  auto project = [](const std::vector<double>& mat, const std::vector<double>& x) {
    const std::size_t d = x.size();
    std::vector<double> y(d, 0.0);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) y[r] += mat[r * d + c] * x[c];
    return y;
  };
  const std::vector<double> ai = project(alpha, li);
  const std::vector<double> bv = project(beta, lv);
  const std::vector<double> ct = project(gamma, lt);
  std::vector<double> volume(m * n * p);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t v = 0; v < n; ++v)
      for (std::size_t t = 0; t < p; ++t) volume[(i * n + v) * p + t] = (ai[i] * bv[v]) * ct[t];
  return volume;
}

/// Plain direct convolution (no im2col): y[oy,ox,co] = b[co] +
/// sum over the kernel window of w[ky,kx,ci,co] * x[sy,sx,ci].
inline std::vector<double> oracle_conv2d(const std::vector<double>& x, int h, int w, int cin,
                                         const std::vector<double>& kernel, int kh, int kw, int cout,
                                         const std::vector<double>& bias, int stride, int pad) {
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> y(static_cast<std::size_t>(oh) * ow * cout);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int co = 0; co < cout; ++co) {
        double acc = bias[static_cast<std::size_t>(co)];
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) {
            const int sy = oy * stride - pad + ky;
            const int sx = ox * stride - pad + kx;
            if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
            for (int ci = 0; ci < cin; ++ci)
              acc += kernel[static_cast<std::size_t>(((ky * kw + kx) * cin + ci) * cout + co)] *
                     x[static_cast<std::size_t>((sy * w + sx) * cin + ci)];
          }
        y[static_cast<std::size_t>((oy * ow + ox) * cout + co)] = acc;
      }
  return y;
}

/// Central finite difference of a scalar function at one coordinate.
inline double central_difference(const std::function<double(double)>& f, double x0, double step) {
  return (f(x0 + step) - f(x0 - step)) / (2.0 * step);
}

}  // namespace triplab::testing
