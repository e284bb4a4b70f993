#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "triplab/boxes.hpp"
#include "triplab/tensor.hpp"
#include "triplab/vocab.hpp"

namespace triplab {

/// Average precision for one class. Samples are sorted by descending score;
/// equal scores form a single precision/recall step so rankings that cannot
/// distinguish samples get no credit for lucky orderings (a constant ranker
/// scores exactly the class prevalence). Classes with no positive samples
/// have no defined AP.
inline std::optional<double> average_precision(const std::vector<double>& scores,
                                               const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("average_precision: score/label length mismatch");
  std::int64_t positives = 0;
  for (int l : labels) positives += l != 0;
  if (positives == 0) return std::nullopt;

  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double ap = 0.0;
  double prev_recall = 0.0;
  std::int64_t tp = 0, seen = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += labels[order[j]] != 0;
      ++seen;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

struct ApReport {
  std::vector<std::optional<double>> per_class;
  std::optional<double> mean;  // over classes with defined AP
  int defined_classes = 0;
};

inline ApReport summarize_ap(std::vector<std::optional<double>> per_class) {
  ApReport r;
  r.per_class = std::move(per_class);
  double sum = 0.0;
  for (const auto& ap : r.per_class)
    if (ap) {
      sum += *ap;
      ++r.defined_classes;
    }
  if (r.defined_classes > 0) r.mean = sum / r.defined_classes;
  return r;
}

/// The four evaluation views over the interaction volume: full triplets,
/// instrument-verb pairs, instrument-target pairs, and instruments alone.
/// Pair/instrument scores are maxima of the triplet probabilities over the
/// collapsed axes.
enum class ApComponent { ivt, iv, it, i };

inline const char* ap_component_name(ApComponent c) {
  switch (c) {
    case ApComponent::ivt: return "AP_ivt";
    case ApComponent::iv: return "AP_iv";
    case ApComponent::it: return "AP_it";
    default: return "AP_i";
  }
}

/// Accumulates per-frame probability volumes and ground-truth triplet sets,
/// then reports AP for each component view. Class spaces derive from the
/// valid-triplet catalog; ground truth outside it still counts as a positive
/// for any view whose key it shares with a valid class.
class Evaluator {
 public:
  explicit Evaluator(const TripletCatalog& catalog) : catalog_(catalog) {
    std::set<std::pair<int, int>> iv, it;
    std::set<int> ins;
    for (const TripletClass& c : catalog.classes()) {
      iv.insert({c.i, c.v});
      it.insert({c.i, c.t});
      ins.insert(c.i);
    }
    iv_keys_.assign(iv.begin(), iv.end());
    it_keys_.assign(it.begin(), it.end());
    i_keys_.assign(ins.begin(), ins.end());
    ivt_scores_.resize(static_cast<std::size_t>(catalog.num_classes()));
    ivt_labels_.resize(static_cast<std::size_t>(catalog.num_classes()));
    iv_scores_.resize(iv_keys_.size());
    iv_labels_.resize(iv_keys_.size());
    it_scores_.resize(it_keys_.size());
    it_labels_.resize(it_keys_.size());
    i_scores_.resize(i_keys_.size());
    i_labels_.resize(i_keys_.size());
  }

  void add_frame(const Tensor<float>& probs, const std::set<Triplet>& truth) {
    if (probs.rank() != 3 || probs.dim(0) != catalog_.m() || probs.dim(1) != catalog_.n() ||
        probs.dim(2) != catalog_.p())
      throw std::invalid_argument("Evaluator: probability volume shape mismatch");

    std::map<std::pair<int, int>, double> iv_max, it_max;
    std::map<int, double> i_max;
    for (const TripletClass& c : catalog_.classes()) {
      const double s = static_cast<double>(probs(c.i, c.v, c.t));
      ivt_scores_[static_cast<std::size_t>(c.class_id)].push_back(s);
      ivt_labels_[static_cast<std::size_t>(c.class_id)].push_back(
          truth.count(Triplet{c.i, c.v, c.t}) ? 1 : 0);
      auto up = [](std::map<std::pair<int, int>, double>& m, std::pair<int, int> k, double v) {
        auto [iter, fresh] = m.try_emplace(k, v);
        if (!fresh && v > iter->second) iter->second = v;
      };
      up(iv_max, {c.i, c.v}, s);
      up(it_max, {c.i, c.t}, s);
      auto [iter, fresh] = i_max.try_emplace(c.i, s);
      if (!fresh && s > iter->second) iter->second = s;
    }

    std::set<std::pair<int, int>> iv_true, it_true;
    std::set<int> i_true;
    for (const Triplet& t : truth) {
      iv_true.insert({t[0], t[1]});
      it_true.insert({t[0], t[2]});
      i_true.insert(t[0]);
    }

    for (std::size_t k = 0; k < iv_keys_.size(); ++k) {
      iv_scores_[k].push_back(iv_max.at(iv_keys_[k]));
      iv_labels_[k].push_back(iv_true.count(iv_keys_[k]) ? 1 : 0);
    }
    for (std::size_t k = 0; k < it_keys_.size(); ++k) {
      it_scores_[k].push_back(it_max.at(it_keys_[k]));
      it_labels_[k].push_back(it_true.count(it_keys_[k]) ? 1 : 0);
    }
    for (std::size_t k = 0; k < i_keys_.size(); ++k) {
      i_scores_[k].push_back(i_max.at(i_keys_[k]));
      i_labels_[k].push_back(i_true.count(i_keys_[k]) ? 1 : 0);
    }
    ++frames_;
  }

  std::int64_t frame_count() const { return frames_; }

  ApReport ap(ApComponent comp) const {
    const auto& scores = comp == ApComponent::ivt  ? ivt_scores_
                         : comp == ApComponent::iv ? iv_scores_
                         : comp == ApComponent::it ? it_scores_
                                                   : i_scores_;
    const auto& labels = comp == ApComponent::ivt  ? ivt_labels_
                         : comp == ApComponent::iv ? iv_labels_
                         : comp == ApComponent::it ? it_labels_
                                                   : i_labels_;
    std::vector<std::optional<double>> per_class(scores.size());
    for (std::size_t k = 0; k < scores.size(); ++k) per_class[k] = average_precision(scores[k], labels[k]);
    return summarize_ap(std::move(per_class));
  }

  const std::vector<std::pair<int, int>>& iv_keys() const { return iv_keys_; }
  const std::vector<std::pair<int, int>>& it_keys() const { return it_keys_; }
  const std::vector<int>& instrument_keys() const { return i_keys_; }

 private:
  TripletCatalog catalog_;
  std::vector<std::pair<int, int>> iv_keys_, it_keys_;
  std::vector<int> i_keys_;
  std::vector<std::vector<double>> ivt_scores_, iv_scores_, it_scores_, i_scores_;
  std::vector<std::vector<int>> ivt_labels_, iv_labels_, it_labels_, i_labels_;
  std::int64_t frames_ = 0;
};

struct EvalSummary {
  ApReport ivt, iv, it, i;
  std::int64_t frames = 0;
};

inline EvalSummary summarize(const Evaluator& ev) {
  EvalSummary s;
  s.ivt = ev.ap(ApComponent::ivt);
  s.iv = ev.ap(ApComponent::iv);
  s.it = ev.ap(ApComponent::it);
  s.i = ev.ap(ApComponent::i);
  s.frames = ev.frame_count();
  return s;
}

struct ScoredTriplet {
  Triplet triplet;
  double score = 0.0;
};

/// Valid-triplet predictions with probability strictly above the threshold,
/// ordered by descending score (class order on ties).
inline std::vector<ScoredTriplet> decode_triplets(const Tensor<float>& probs,
                                                  const TripletCatalog& catalog, double threshold) {
  std::vector<ScoredTriplet> out;
  for (const TripletClass& c : catalog.classes()) {
    const double s = static_cast<double>(probs(c.i, c.v, c.t));
    if (s > threshold) out.push_back({Triplet{c.i, c.v, c.t}, s});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const ScoredTriplet& a, const ScoredTriplet& b) { return a.score > b.score; });
  return out;
}

struct LocalizationResult {
  std::int64_t matched = 0;
  std::int64_t total = 0;

  double fraction() const { return total == 0 ? 1.0 : static_cast<double>(matched) / static_cast<double>(total); }

  LocalizationResult& operator+=(const LocalizationResult& other) {
    matched += other.matched;
    total += other.total;
    return *this;
  }
};

/// Greedy one-frame box matching: predictions in descending score order each
/// claim the unmatched ground-truth box of the same instrument with the
/// highest overlap at or above `iou_thresh`. Truth scores are ignored.
inline LocalizationResult match_instrument_boxes(std::vector<InstrumentBox> preds,
                                                 const std::vector<InstrumentBox>& truth,
                                                 double iou_thresh = 0.5) {
  LocalizationResult r;
  r.total = static_cast<std::int64_t>(truth.size());
  std::stable_sort(preds.begin(), preds.end(),
                   [](const InstrumentBox& a, const InstrumentBox& b) { return a.score > b.score; });
  std::vector<bool> used(truth.size(), false);
  for (const InstrumentBox& p : preds) {
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < truth.size(); ++g) {
      if (used[g] || truth[g].instrument != p.instrument) continue;
      const double v = iou(p.box, truth[g].box);
      if (v >= iou_thresh && v > best_iou) {
        best = static_cast<int>(g);
        best_iou = v;
      }
    }
    if (best >= 0) {
      used[static_cast<std::size_t>(best)] = true;
      ++r.matched;
    }
  }
  return r;
}

}  // namespace triplab
