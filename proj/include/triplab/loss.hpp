#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "triplab/annotations.hpp"
#include "triplab/tensor.hpp"
#include "triplab/vocab.hpp"

namespace triplab {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Numerically stable binary cross-entropy on a logit:
/// max(x,0) - x*y + log(1 + exp(-|x|)).
inline double bce_with_logits(double x, double y) {
  return std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
}

/// Median-frequency balancing. Frequencies are counts over `total`, floored
/// at 1/total so absent classes stay finite; weights are median_freq/freq_c
/// clipped to [0.1, 10].
inline std::vector<double> median_frequency_weights(const std::vector<std::int64_t>& counts,
                                                    std::int64_t total) {
  if (total <= 0) throw std::invalid_argument("median_frequency_weights: total must be positive");
  if (counts.empty()) throw std::invalid_argument("median_frequency_weights: no classes");
  std::vector<double> freqs(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c)
    freqs[c] = static_cast<double>(std::max<std::int64_t>(counts[c], 1)) / static_cast<double>(total);
  std::vector<double> sorted = freqs;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t k = sorted.size();
  const double median = (k % 2 == 1) ? sorted[k / 2] : 0.5 * (sorted[k / 2 - 1] + sorted[k / 2]);
  std::vector<double> weights(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c)
    weights[c] = std::clamp(median / freqs[c], 0.1, 10.0);
  return weights;
}

/// Per-class triplet instance counts keyed by catalog class id.
inline std::vector<std::int64_t> class_instance_counts(const Dataset& ds, const TripletCatalog& catalog) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(catalog.num_classes()), 0);
  for (const auto& a : ds.annotations)
    for (const Triplet& t : a.triplets)
      if (auto id = catalog.class_id(t)) ++counts[static_cast<std::size_t>(*id)];
  return counts;
}

/// Class-balancing weights for the three component heads and the triplet
/// classes, all derived from the training annotations.
struct LabelWeights {
  std::vector<double> instrument, verb, target, triplet;
};

inline LabelWeights compute_label_weights(const Dataset& train, const Vocabulary& vocab,
                                          const TripletCatalog& catalog) {
  const std::int64_t total = train.triplet_instance_count();
  LabelWeights w;
  w.instrument = median_frequency_weights(axis_counts(train, Axis::instrument, vocab), total);
  w.verb = median_frequency_weights(axis_counts(train, Axis::verb, vocab), total);
  w.target = median_frequency_weights(axis_counts(train, Axis::target, vocab), total);
  w.triplet = median_frequency_weights(class_instance_counts(train, catalog), total);
  return w;
}

inline std::vector<double> unit_weights(int k) { return std::vector<double>(static_cast<std::size_t>(k), 1.0); }

/// Multi-hot supervision for one frame: component bits plus the triplet-class
/// bits under the training catalog.
struct SampleLabels {
  std::vector<float> yi, yv, yt;  // per-axis multi-hot
  std::vector<float> yc;          // per-triplet-class multi-hot
};

inline SampleLabels make_sample_labels(const std::set<Triplet>& triplets, const TripletCatalog& catalog) {
  SampleLabels s;
  s.yi.assign(static_cast<std::size_t>(catalog.m()), 0.0f);
  s.yv.assign(static_cast<std::size_t>(catalog.n()), 0.0f);
  s.yt.assign(static_cast<std::size_t>(catalog.p()), 0.0f);
  s.yc.assign(static_cast<std::size_t>(catalog.num_classes()), 0.0f);
  for (const Triplet& t : triplets) {
    s.yi[static_cast<std::size_t>(t[0])] = 1.0f;
    s.yv[static_cast<std::size_t>(t[1])] = 1.0f;
    s.yt[static_cast<std::size_t>(t[2])] = 1.0f;
    auto id = catalog.class_id(t);
    if (!id)
      throw VocabError("make_sample_labels: triplet (" + std::to_string(t[0]) + "," + std::to_string(t[1]) +
                       "," + std::to_string(t[2]) + ") is not in the class catalog");
    s.yc[static_cast<std::size_t>(*id)] = 1.0f;
  }
  return s;
}

/// Mean weighted BCE over a logit vector. Writes dlogits = w*(sigmoid-y) *
/// grad_scale / K; loss accumulation runs in double regardless of T.
template <typename T>
double weighted_bce_mean(const Tensor<T>& logits, const std::vector<float>& labels,
                         const std::vector<double>& weights, double grad_scale, Tensor<T>& dlogits) {
  const int k = static_cast<int>(logits.size());
  if (labels.size() != static_cast<std::size_t>(k) || weights.size() != static_cast<std::size_t>(k))
    throw std::invalid_argument("weighted_bce_mean: label/weight length mismatch");
  dlogits.reshape_buffer(logits.shape());
  double loss = 0.0;
  for (int c = 0; c < k; ++c) {
    const double x = static_cast<double>(logits(c));
    const double y = static_cast<double>(labels[static_cast<std::size_t>(c)]);
    const double w = weights[static_cast<std::size_t>(c)];
    loss += w * bce_with_logits(x, y);
    dlogits(c) = static_cast<T>(w * (sigmoid(x) - y) / k * grad_scale);
  }
  return loss / k;
}

/// Mean weighted BCE over the masked-true cells of the interaction volume.
/// dvolume is exactly zero at masked-false cells.
template <typename T>
double volume_bce_mean(const Tensor<T>& volume, const std::vector<float>& yc,
                       const TripletCatalog& catalog, const std::vector<double>& weights,
                       double grad_scale, Tensor<T>& dvolume) {
  const int C = catalog.num_classes();
  if (yc.size() != static_cast<std::size_t>(C) || weights.size() != static_cast<std::size_t>(C))
    throw std::invalid_argument("volume_bce_mean: label/weight length mismatch");
  dvolume.reshape_buffer(volume.shape());
  dvolume.zero();
  double loss = 0.0;
  for (const TripletClass& cls : catalog.classes()) {
    const double x = static_cast<double>(volume(cls.i, cls.v, cls.t));
    const double y = static_cast<double>(yc[static_cast<std::size_t>(cls.class_id)]);
    const double w = weights[static_cast<std::size_t>(cls.class_id)];
    loss += w * bce_with_logits(x, y);
    dvolume(cls.i, cls.v, cls.t) = static_cast<T>(w * (sigmoid(x) - y) / C * grad_scale);
  }
  return loss / C;
}

/// Mean weighted BCE over a C-way logit vector (baseline heads).
template <typename T>
double class_bce_mean(const Tensor<T>& logits_c, const std::vector<float>& yc,
                      const std::vector<double>& weights, double grad_scale, Tensor<T>& dlogits_c) {
  return weighted_bce_mean(logits_c, yc, weights, grad_scale, dlogits_c);
}

}  // namespace triplab
