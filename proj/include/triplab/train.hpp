#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "triplab/augment.hpp"
#include "triplab/loss.hpp"
#include "triplab/metrics.hpp"
#include "triplab/model.hpp"
#include "triplab/synthgen.hpp"

namespace triplab {

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 8;
  int warmup_epochs = 2;        // instrument-only epochs (ignored by the naive model)
  double lr_subnets = 1e-3;
  double lr_backbone = 1e-4;
  double lr_space = 1e-5;
  double momentum = 0.9;
  double lr_decay_rate = 0.95;  // continuous decay: lr * rate^(step/decay_steps)
  int lr_decay_steps = 0;       // 0 = one decay interval per epoch
  double weight_decay = 1e-5;
  bool class_weighting = true;
  AugmentConfig augment;
  int threads = 1;
  std::uint64_t seed = 1;
  double clip_norm = 5.0;  // global gradient-norm ceiling; <= 0 disables
  double divergence_threshold = 1e4;
};

struct LossParts {
  double i = 0, v = 0, t = 0, ivt = 0, c = 0;

  double total() const { return i + v + t + ivt + c; }

  LossParts& operator+=(const LossParts& o) {
    i += o.i;
    v += o.v;
    t += o.t;
    ivt += o.ivt;
    c += o.c;
    return *this;
  }
};

struct EpochStats {
  int epoch = 0;
  bool warmup = false;
  double lr_scale = 1.0;
  int clipped_batches = 0;
  LossParts loss;  // mean per-sample losses over the epoch
};

// ---------------------------------------------------------------------------
// Momentum optimizer with per-group learning rates
// ---------------------------------------------------------------------------

/// v <- momentum * v + g; w <- w - lr * v. During warm-up, weight decay is
/// restricted to parameters that already receive loss gradients (backbone and
/// instrument branch) so every other gradient stays exactly zero. The
/// interaction space is frozen entirely when `update_space` is off.
template <typename P>
class MomentumOptimizer {
 public:
  explicit MomentumOptimizer(const P& params) : velocity_(zeros_like_params(params)) {}

  void step(P& params, P& grads, const TrainConfig& cfg, double lr_scale, bool warmup,
            bool update_space) {
    auto rp = param_refs(params);
    auto rg = param_refs(grads);
    auto rv = param_refs(velocity_);
    for (std::size_t k = 0; k < rp.size(); ++k) {
      if (rp[k].group == ParamGroup::space && !update_space) continue;
      const bool decay_active =
          cfg.weight_decay > 0.0 &&
          (!warmup || rp[k].name.rfind("backbone.", 0) == 0 || rp[k].name.rfind("instrument.", 0) == 0);
      const double lr = lr_scale * (rp[k].group == ParamGroup::backbone  ? cfg.lr_backbone
                                    : rp[k].group == ParamGroup::subnets ? cfg.lr_subnets
                                                                         : cfg.lr_space);
      auto& w = *rp[k].tensor;
      auto& g = *rg[k].tensor;
      auto& v = *rv[k].tensor;
      using T = std::decay_t<decltype(w[0])>;
      for (std::int64_t idx = 0; idx < w.size(); ++idx) {
        T grad = g[idx];
        if (decay_active) grad += static_cast<T>(2.0 * cfg.weight_decay) * w[idx];
        v[idx] = static_cast<T>(cfg.momentum) * v[idx] + grad;
        w[idx] -= static_cast<T>(lr) * v[idx];
      }
    }
  }

 private:
  P velocity_;
};

// ---------------------------------------------------------------------------
// Per-model trainers: one sample's forward/backward and inference
// ---------------------------------------------------------------------------

namespace detail {

inline const std::vector<double>& pick(const std::vector<double>& weighted, const std::vector<double>& unit,
                                       bool use_weights) {
  return use_weights ? weighted : unit;
}

}  // namespace detail

class TripnetTrainer {
 public:
  using Params = TripnetParams<float>;
  using Cache = TripnetCache<float>;

  TripnetTrainer(const ModelConfig& mc, const TripletCatalog& catalog, const LabelWeights& weights,
                 bool class_weighting)
      : mc_(mc),
        mask_(catalog.validity_mask()),
        catalog_(catalog),
        weights_(weights),
        unit_i_(unit_weights(catalog.m())),
        unit_v_(unit_weights(catalog.n())),
        unit_t_(unit_weights(catalog.p())),
        unit_c_(unit_weights(catalog.num_classes())),
        class_weighting_(class_weighting) {}

  bool supports_warmup() const { return true; }
  bool update_space() const { return mc_.space_trainable; }
  const ModelConfig& model_config() const { return mc_; }

  LossParts sample(const Params& params, const Image& image, const SampleLabels& y, bool warmup,
                   double grad_scale, Params& grads, Cache& cache) const {
    tripnet_forward(params, mc_, image, cache);
    LossParts parts;
    Tensor<float> dli, dlv, dlt, dvol;
    TripnetHeadGrads<float> head;
    parts.i = weighted_bce_mean(cache.instrument.logits, y.yi,
                                detail::pick(weights_.instrument, unit_i_, class_weighting_), grad_scale, dli);
    head.dlogits_i = &dli;
    if (!warmup) {
      parts.v = weighted_bce_mean(cache.verb.logits, y.yv,
                                  detail::pick(weights_.verb, unit_v_, class_weighting_), grad_scale, dlv);
      parts.t = weighted_bce_mean(cache.target.logits, y.yt,
                                  detail::pick(weights_.target, unit_t_, class_weighting_), grad_scale, dlt);
      head.dlogits_v = &dlv;
      head.dlogits_t = &dlt;
      if (mc_.space_trainable) {
        parts.ivt = volume_bce_mean(cache.volume, y.yc, catalog_,
                                    detail::pick(weights_.triplet, unit_c_, class_weighting_), grad_scale,
                                    dvol);
        head.dvolume = &dvol;
      }
    }
    tripnet_backward(params, mc_, cache, head, grads);
    return parts;
  }

  Tensor<float> probs(const Params& params, const Image& image, Cache& cache) const {
    tripnet_forward(params, mc_, image, cache);
    return decode_probabilities(cache.volume, mask_);
  }

  const ValidityMask& mask() const { return mask_; }

 private:
  ModelConfig mc_;
  ValidityMask mask_;
  TripletCatalog catalog_;
  LabelWeights weights_;
  std::vector<double> unit_i_, unit_v_, unit_t_, unit_c_;
  bool class_weighting_;
};

class MtlTrainer {
 public:
  using Params = MtlParams<float>;
  using Cache = MtlCache<float>;

  MtlTrainer(const ModelConfig& mc, const TripletCatalog& catalog, const LabelWeights& weights,
             bool class_weighting)
      : mc_(mc),
        catalog_(catalog),
        weights_(weights),
        unit_i_(unit_weights(catalog.m())),
        unit_v_(unit_weights(catalog.n())),
        unit_t_(unit_weights(catalog.p())),
        unit_c_(unit_weights(catalog.num_classes())),
        class_weighting_(class_weighting) {}

  bool supports_warmup() const { return true; }
  bool update_space() const { return true; }  // no space group; flag is inert
  const ModelConfig& model_config() const { return mc_; }

  LossParts sample(const Params& params, const Image& image, const SampleLabels& y, bool warmup,
                   double grad_scale, Params& grads, Cache& cache) const {
    mtl_forward(params, mc_, image, cache);
    LossParts parts;
    Tensor<float> dli, dlv, dlt, dlc;
    MtlHeadGrads<float> head;
    parts.i = weighted_bce_mean(cache.instrument.logits, y.yi,
                                detail::pick(weights_.instrument, unit_i_, class_weighting_), grad_scale, dli);
    head.dlogits_i = &dli;
    if (!warmup) {
      parts.v = weighted_bce_mean(cache.verb.logits, y.yv,
                                  detail::pick(weights_.verb, unit_v_, class_weighting_), grad_scale, dlv);
      parts.t = weighted_bce_mean(cache.target.logits, y.yt,
                                  detail::pick(weights_.target, unit_t_, class_weighting_), grad_scale, dlt);
      parts.c = weighted_bce_mean(cache.logits_c, y.yc,
                                  detail::pick(weights_.triplet, unit_c_, class_weighting_), grad_scale, dlc);
      head.dlogits_v = &dlv;
      head.dlogits_t = &dlt;
      head.dlogits_c = &dlc;
    }
    mtl_backward(params, mc_, cache, head, grads);
    return parts;
  }

  Tensor<float> probs(const Params& params, const Image& image, Cache& cache) const {
    mtl_forward(params, mc_, image, cache);
    return scatter_class_probs(cache.logits_c, catalog_);
  }

 private:
  ModelConfig mc_;
  TripletCatalog catalog_;
  LabelWeights weights_;
  std::vector<double> unit_i_, unit_v_, unit_t_, unit_c_;
  bool class_weighting_;
};

class NaiveTrainer {
 public:
  using Params = NaiveParams<float>;
  using Cache = NaiveCache<float>;

  NaiveTrainer(const ModelConfig& mc, const TripletCatalog& catalog, const LabelWeights& weights,
               bool class_weighting)
      : mc_(mc),
        catalog_(catalog),
        weights_(weights),
        unit_c_(unit_weights(catalog.num_classes())),
        class_weighting_(class_weighting) {}

  bool supports_warmup() const { return false; }
  bool update_space() const { return true; }
  const ModelConfig& model_config() const { return mc_; }

  LossParts sample(const Params& params, const Image& image, const SampleLabels& y, bool /*warmup*/,
                   double grad_scale, Params& grads, Cache& cache) const {
    naive_forward(params, mc_, image, cache);
    LossParts parts;
    Tensor<float> dlc;
    parts.c = weighted_bce_mean(cache.logits_c, y.yc,
                                detail::pick(weights_.triplet, unit_c_, class_weighting_), grad_scale, dlc);
    naive_backward(params, mc_, cache, dlc, grads);
    return parts;
  }

  Tensor<float> probs(const Params& params, const Image& image, Cache& cache) const {
    naive_forward(params, mc_, image, cache);
    return scatter_class_probs(cache.logits_c, catalog_);
  }

 private:
  ModelConfig mc_;
  TripletCatalog catalog_;
  LabelWeights weights_;
  std::vector<double> unit_c_;
  bool class_weighting_;
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

inline Rng augment_rng(std::uint64_t seed, int epoch, const std::string& video_id, int frame_index) {
  std::uint64_t s = mix_seed(seed, "augment");
  s = mix_seed(s, static_cast<std::uint64_t>(epoch));
  s = mix_seed(s, video_id);
  s = mix_seed(s, static_cast<std::uint64_t>(frame_index));
  return Rng(s);
}

template <typename P>
void accumulate_params(P& into, P& from) {
  auto ri = param_refs(into);
  auto rf = param_refs(from);
  for (std::size_t k = 0; k < ri.size(); ++k)
    for (std::int64_t i = 0; i < ri[k].tensor->size(); ++i) (*ri[k].tensor)[i] += (*rf[k].tensor)[i];
}

template <typename P>
void zero_params(P& p) {
  for (auto& r : param_refs(p)) r.tensor->zero();
}

/// Rescale gradients so their global L2 norm stays under `max_norm`. The
/// interaction volume multiplies three logit vectors, so post-warm-up batches
/// can spike; clipping keeps momentum from amplifying those spikes.
template <typename P>
bool clip_gradients(P& grads, double max_norm) {
  if (max_norm <= 0) return false;
  double sq = 0.0;
  auto refs = param_refs(grads);
  for (auto& r : refs)
    for (std::int64_t i = 0; i < r.tensor->size(); ++i) {
      const double g = static_cast<double>((*r.tensor)[i]);
      sq += g * g;
    }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return false;
  const double scale = max_norm / norm;
  for (auto& r : refs)
    for (std::int64_t i = 0; i < r.tensor->size(); ++i) (*r.tensor)[i] *= scale;
  return true;
}

/// Gradient-descent training over a dataset held in a FrameStore. The run is
/// deterministic for a fixed configuration (including thread count): sample
/// order, augmentation streams and the thread-reduction order are all fixed.
template <typename Trainer>
std::vector<EpochStats> train_model(const Trainer& trainer, typename Trainer::Params& params,
                                    const Dataset& train, const FrameStore& store,
                                    const TripletCatalog& catalog, const TrainConfig& cfg) {
  using Params = typename Trainer::Params;
  using Cache = typename Trainer::Cache;

  if (cfg.batch_size < 1) throw TrainError("batch_size must be >= 1");
  if (cfg.epochs < 0) throw TrainError("epochs must be >= 0");
  const int threads = std::max(1, cfg.threads);
  const std::size_t n = train.annotations.size();
  if (n == 0) throw TrainError("training dataset is empty");

  std::vector<SampleLabels> labels;
  labels.reserve(n);
  for (const auto& a : train.annotations) labels.push_back(make_sample_labels(a.triplets, catalog));

  const int steps_per_epoch = static_cast<int>((n + cfg.batch_size - 1) / cfg.batch_size);
  const double decay_steps = cfg.lr_decay_steps > 0 ? cfg.lr_decay_steps : steps_per_epoch;

  MomentumOptimizer<Params> optimizer(params);
  std::vector<Params> thread_grads;
  std::vector<std::unique_ptr<Cache>> thread_caches;
  for (int t = 0; t < threads; ++t) {
    thread_grads.push_back(zeros_like_params(params));
    thread_caches.push_back(std::make_unique<Cache>());
  }
  Params total_grads = zeros_like_params(params);

  std::vector<EpochStats> log;
  std::int64_t global_step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool warmup = trainer.supports_warmup() && epoch < cfg.warmup_epochs;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle_rng(mix_seed(mix_seed(cfg.seed, "epoch_order"), static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n - 1; i > 0; --i) {
      const std::size_t j = shuffle_rng.uniform_int(i + 1);
      std::swap(order[i], order[j]);
    }

    LossParts epoch_loss;
    double last_lr_scale = 1.0;
    int clipped = 0;

    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      const int batch = static_cast<int>(stop - start);
      const double grad_scale = 1.0 / batch;

      std::vector<LossParts> thread_loss(static_cast<std::size_t>(threads));
      const int chunk = (batch + threads - 1) / threads;

      auto worker = [&](int tid) {
        Params& grads = thread_grads[static_cast<std::size_t>(tid)];
        Cache& cache = *thread_caches[static_cast<std::size_t>(tid)];
        zero_params(grads);
        LossParts acc;
        const std::size_t lo = start + static_cast<std::size_t>(tid) * chunk;
        const std::size_t hi = std::min(stop, lo + static_cast<std::size_t>(chunk));
        for (std::size_t s = lo; s < hi; ++s) {
          const FrameAnnotation& a = train.annotations[order[s]];
          Image image = store.get(a.video_id, a.frame_index);
          Rng arng = augment_rng(cfg.seed, epoch, a.video_id, a.frame_index);
          augment_image(image, cfg.augment, arng);
          acc += trainer.sample(params, image, labels[order[s]], warmup, grad_scale, grads, cache);
        }
        thread_loss[static_cast<std::size_t>(tid)] = acc;
      };

      if (threads == 1) {
        worker(0);
      } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker, t);
        for (auto& th : pool) th.join();
      }

      zero_params(total_grads);
      LossParts batch_loss;
      for (int t = 0; t < threads; ++t) {
        accumulate_params(total_grads, thread_grads[static_cast<std::size_t>(t)]);
        batch_loss += thread_loss[static_cast<std::size_t>(t)];
      }

      const double mean_total = batch_loss.total() / batch;
      if (!std::isfinite(mean_total) || mean_total > cfg.divergence_threshold)
        throw TrainError("training diverged at epoch " + std::to_string(epoch) + " (batch loss " +
                         std::to_string(mean_total) + ")");

      clipped += clip_gradients(total_grads, cfg.clip_norm);

      const double lr_scale = std::pow(cfg.lr_decay_rate, static_cast<double>(global_step) / decay_steps);
      last_lr_scale = lr_scale;
      optimizer.step(params, total_grads, cfg, lr_scale, warmup, trainer.update_space());
      ++global_step;

      epoch_loss += batch_loss;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.warmup = warmup;
    stats.lr_scale = last_lr_scale;
    stats.clipped_batches = clipped;
    stats.loss.i = epoch_loss.i / static_cast<double>(n);
    stats.loss.v = epoch_loss.v / static_cast<double>(n);
    stats.loss.t = epoch_loss.t / static_cast<double>(n);
    stats.loss.ivt = epoch_loss.ivt / static_cast<double>(n);
    stats.loss.c = epoch_loss.c / static_cast<double>(n);
    log.push_back(stats);
  }
  return log;
}

/// Run inference over a dataset and compute the component AP summary.
template <typename Trainer>
EvalSummary evaluate_model(const Trainer& trainer, const typename Trainer::Params& params,
                           const Dataset& ds, const FrameStore& store, const TripletCatalog& catalog) {
  typename Trainer::Cache cache;
  Evaluator ev(catalog);
  for (const auto& a : ds.annotations) {
    const Image image = store.get(a.video_id, a.frame_index);
    ev.add_frame(trainer.probs(params, image, cache), a.triplets);
  }
  return summarize(ev);
}

}  // namespace triplab
