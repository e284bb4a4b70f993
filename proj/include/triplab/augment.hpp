#pragma once

#include <cmath>

#include "triplab/image.hpp"
#include "triplab/rng.hpp"

namespace triplab {

/// Label-preserving train-time augmentations. Each transform fires
/// independently with its own probability.
struct AugmentConfig {
  bool enabled = true;
  double rotate_prob = 0.5;
  double max_rotate_deg = 15.0;
  double flip_prob = 0.5;
  double mask_prob = 0.5;
  double max_mask_area = 0.10;  // fraction of the image a masked patch may cover
};

/// Reflected index with edge duplication: ..., 1, 0 | 0, 1, ..., n-1 | n-1, ...
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

/// Rotate about the image center by `degrees`, sampling bilinearly with
/// reflection padding. Output has the source dimensions.
inline void rotate_image(const Image& src, double degrees, Image& dst) {
  const int h = src.dim(0), w = src.dim(1), c = src.dim(2);
  dst.reshape_buffer({h, w, c});
  const double rad = degrees * M_PI / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double u = x - cx, v = y - cy;
      const double sx = cs * u + sn * v + cx;
      const double sy = -sn * u + cs * v + cy;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const float fx = static_cast<float>(sx - x0);
      const float fy = static_cast<float>(sy - y0);
      const int xa = reflect_index(x0, w), xb = reflect_index(x0 + 1, w);
      const int ya = reflect_index(y0, h), yb = reflect_index(y0 + 1, h);
      for (int k = 0; k < c; ++k) {
        const float top = src(ya, xa, k) * (1.0f - fx) + src(ya, xb, k) * fx;
        const float bot = src(yb, xa, k) * (1.0f - fx) + src(yb, xb, k) * fx;
        dst(y, x, k) = top * (1.0f - fy) + bot * fy;
      }
    }
  }
}

inline void hflip_image(Image& img) {
  const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w / 2; ++x)
      for (int k = 0; k < c; ++k) std::swap(img(y, x, k), img(y, w - 1 - x, k));
}

/// Zero a random rectangle covering at most `max_area_frac` of the image.
inline void mask_patch(Image& img, Rng& rng, double max_area_frac) {
  const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
  const double area_frac = rng.uniform(0.01, max_area_frac);
  const double aspect = rng.uniform(0.5, 2.0);
  const double cells = area_frac * h * w;
  int ph = std::max(1, static_cast<int>(std::lround(std::sqrt(cells * aspect))));
  int pw = std::max(1, static_cast<int>(std::lround(std::sqrt(cells / aspect))));
  ph = std::min(ph, h);
  pw = std::min(pw, w);
  while (static_cast<double>(ph) * pw > max_area_frac * h * w && (ph > 1 || pw > 1)) {
    if (ph >= pw)
      --ph;
    else
      --pw;
  }
  const int y0 = static_cast<int>(rng.uniform_int(h - ph + 1));
  const int x0 = static_cast<int>(rng.uniform_int(w - pw + 1));
  for (int y = y0; y < y0 + ph; ++y)
    for (int x = x0; x < x0 + pw; ++x)
      for (int k = 0; k < c; ++k) img(y, x, k) = 0.0f;
}

/// Apply the configured augmentations in a fixed order (rotate, flip, mask).
/// Annotations are unchanged by design: rotations are small enough and masks
/// sparse enough that frame-level labels stay correct.
inline void augment_image(Image& img, const AugmentConfig& cfg, Rng& rng) {
  if (!cfg.enabled) return;
  if (rng.bernoulli(cfg.rotate_prob)) {
    const double deg = rng.uniform(-cfg.max_rotate_deg, cfg.max_rotate_deg);
    Image rotated;
    rotate_image(img, deg, rotated);
    img = rotated;
  }
  if (rng.bernoulli(cfg.flip_prob)) hflip_image(img);
  if (rng.bernoulli(cfg.mask_prob)) mask_patch(img, rng, cfg.max_mask_area);
}

}  // namespace triplab
