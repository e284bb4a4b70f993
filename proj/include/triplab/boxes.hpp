#pragma once

#include <algorithm>
#include <vector>

#include "triplab/tensor.hpp"

namespace triplab {

/// Axis-aligned box in pixel coordinates, [x0, x1) x [y0, y1).
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  Box() = default;
  Box(double x0_, double y0_, double x1_, double y1_) : x0(x0_), y0(y0_), x1(x1_), y1(y1_) {}

  double area() const { return std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0); }
};

inline double iou(const Box& a, const Box& b) {
  const double ix0 = std::max(a.x0, b.x0);
  const double iy0 = std::max(a.y0, b.y0);
  const double ix1 = std::min(a.x1, b.x1);
  const double iy1 = std::min(a.y1, b.y1);
  const double inter = std::max(0.0, ix1 - ix0) * std::max(0.0, iy1 - iy0);
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

struct InstrumentBox {
  int instrument = 0;
  Box box;
  double score = 0.0;
};

/// Weak localization from class activation maps: for every instrument whose
/// probability clears prob_thresh, the box is the tight bound of cam cells at
/// or above cam_thresh_frac of the channel maximum, mapped to image pixels.
template <typename T>
std::vector<InstrumentBox> cam_to_boxes(const Tensor<T>& cam, const std::vector<double>& inst_probs,
                                        double prob_thresh, double cam_thresh_frac, int image_h,
                                        int image_w) {
  const int h = cam.dim(0), w = cam.dim(1), m = cam.dim(2);
  const double sy = static_cast<double>(image_h) / h;
  const double sx = static_cast<double>(image_w) / w;
  std::vector<InstrumentBox> out;
  for (int k = 0; k < m; ++k) {
    if (inst_probs[static_cast<std::size_t>(k)] < prob_thresh) continue;
    double peak = cam(0, 0, k);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) peak = std::max(peak, static_cast<double>(cam(y, x, k)));
    // A negative peak can only happen below the 0.5 probability mark; keep
    // the argmax cell selectable in that case.
    const double thresh = peak >= 0.0 ? cam_thresh_frac * peak : peak;
    int y_min = h, y_max = -1, x_min = w, x_max = -1;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (static_cast<double>(cam(y, x, k)) >= thresh) {
          y_min = std::min(y_min, y);
          y_max = std::max(y_max, y);
          x_min = std::min(x_min, x);
          x_max = std::max(x_max, x);
        }
    if (y_max < 0) continue;
    Box box{x_min * sx, y_min * sy, (x_max + 1) * sx, (y_max + 1) * sy};
    out.push_back(InstrumentBox{k, box, inst_probs[static_cast<std::size_t>(k)]});
  }
  return out;
}

}  // namespace triplab
