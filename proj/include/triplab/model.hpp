#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "triplab/layers.hpp"
#include "triplab/vocab.hpp"

namespace triplab {

enum class ModelKind { tripnet, mtl, naive };

inline const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::tripnet: return "tripnet";
    case ModelKind::mtl: return "mtl";
    default: return "naive";
  }
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "tripnet") return ModelKind::tripnet;
  if (s == "mtl") return ModelKind::mtl;
  if (s == "naive") return ModelKind::naive;
  throw std::invalid_argument("unknown model kind '" + s + "' (expected tripnet|mtl|naive)");
}

enum class SpaceMode { vector, matrix };

struct ModelConfig {
  int image_h = 64;
  int image_w = 112;
  int backbone_c1 = 32;   // channels of the first two blocks
  int backbone_c2 = 64;   // channels of the last two blocks
  int branch_channels = 32;
  bool use_cag = true;         // concatenate instrument CAMs into the verb/target paths
  bool cag_backprop = false;   // let verb/target losses flow back through the CAM
  bool space_trainable = true; // learn alpha/beta/gamma and backprop the volume loss
  SpaceMode space_mode = SpaceMode::vector;
};

struct SpatialDims {
  int h = 0, w = 0;
};

/// Output grid of the 4-block backbone (three stride-2 blocks, one stride-1).
inline SpatialDims backbone_out_dims(int in_h, int in_w) {
  auto step = [](int d, int stride) { return (d + 2 - 3) / stride + 1; };
  SpatialDims out{in_h, in_w};
  for (int s : {2, 2, 2, 1}) {
    out.h = step(out.h, s);
    out.w = step(out.w, s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameter structs. Gradients reuse the same struct types (zeroed clones).
// ---------------------------------------------------------------------------

template <typename T>
struct BackboneParams {
  ConvLayer<T> conv1, conv2, conv3, conv4;
};

template <typename T>
struct InstrumentBranchParams {
  ConvLayer<T> conv1;  // branch features, ReLU
  ConvLayer<T> conv2;  // linear map to m CAM channels
};

template <typename T>
struct GuidedBranchParams {
  ConvLayer<T> conv1, conv2;
  DenseLayer<T> fc;
  int guide_channels = 0;  // CAM channels concatenated onto the branch input (0 = no guide)
};

template <typename T>
struct InteractionParams {
  Tensor<T> alpha, beta, gamma;  // vector mode: [m],[n],[p]; matrix mode: [m,m],[n,n],[p,p]
  SpaceMode mode = SpaceMode::vector;
};

template <typename T>
struct TripnetParams {
  BackboneParams<T> backbone;
  InstrumentBranchParams<T> instrument;
  GuidedBranchParams<T> verb, target;
  InteractionParams<T> space;
};

template <typename T>
struct MtlParams {
  BackboneParams<T> backbone;
  InstrumentBranchParams<T> instrument;
  GuidedBranchParams<T> verb, target;  // guide_channels = 0
  DenseLayer<T> head;                  // concat(m+n+p) -> C
};

template <typename T>
struct NaiveParams {
  BackboneParams<T> backbone;
  ConvLayer<T> conv1, conv2;
  DenseLayer<T> head;  // flatten -> C
};

enum class ParamGroup { backbone, subnets, space };

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
  ParamGroup group;
};

namespace detail {

template <typename T>
void add_conv_refs(std::vector<ParamRef<T>>& refs, const std::string& prefix, ConvLayer<T>& c,
                   ParamGroup g) {
  refs.push_back({prefix + ".w", &c.w, g});
  refs.push_back({prefix + ".b", &c.b, g});
}

template <typename T>
void add_dense_refs(std::vector<ParamRef<T>>& refs, const std::string& prefix, DenseLayer<T>& d,
                    ParamGroup g) {
  refs.push_back({prefix + ".w", &d.w, g});
  refs.push_back({prefix + ".b", &d.b, g});
}

template <typename T>
void add_backbone_refs(std::vector<ParamRef<T>>& refs, BackboneParams<T>& b) {
  add_conv_refs(refs, "backbone.conv1", b.conv1, ParamGroup::backbone);
  add_conv_refs(refs, "backbone.conv2", b.conv2, ParamGroup::backbone);
  add_conv_refs(refs, "backbone.conv3", b.conv3, ParamGroup::backbone);
  add_conv_refs(refs, "backbone.conv4", b.conv4, ParamGroup::backbone);
}

}  // namespace detail

template <typename T>
std::vector<ParamRef<T>> param_refs(TripnetParams<T>& p) {
  std::vector<ParamRef<T>> refs;
  detail::add_backbone_refs(refs, p.backbone);
  detail::add_conv_refs(refs, "instrument.conv1", p.instrument.conv1, ParamGroup::subnets);
  detail::add_conv_refs(refs, "instrument.conv2", p.instrument.conv2, ParamGroup::subnets);
  detail::add_conv_refs(refs, "verb.conv1", p.verb.conv1, ParamGroup::subnets);
  detail::add_conv_refs(refs, "verb.conv2", p.verb.conv2, ParamGroup::subnets);
  detail::add_dense_refs(refs, "verb.fc", p.verb.fc, ParamGroup::subnets);
  detail::add_conv_refs(refs, "target.conv1", p.target.conv1, ParamGroup::subnets);
  detail::add_conv_refs(refs, "target.conv2", p.target.conv2, ParamGroup::subnets);
  detail::add_dense_refs(refs, "target.fc", p.target.fc, ParamGroup::subnets);
  refs.push_back({"space.alpha", &p.space.alpha, ParamGroup::space});
  refs.push_back({"space.beta", &p.space.beta, ParamGroup::space});
  refs.push_back({"space.gamma", &p.space.gamma, ParamGroup::space});
  return refs;
}

template <typename T>
std::vector<ParamRef<T>> param_refs(MtlParams<T>& p) {
  std::vector<ParamRef<T>> refs;
  detail::add_backbone_refs(refs, p.backbone);
  detail::add_conv_refs(refs, "instrument.conv1", p.instrument.conv1, ParamGroup::subnets);
  detail::add_conv_refs(refs, "instrument.conv2", p.instrument.conv2, ParamGroup::subnets);
  detail::add_conv_refs(refs, "verb.conv1", p.verb.conv1, ParamGroup::subnets);
  detail::add_conv_refs(refs, "verb.conv2", p.verb.conv2, ParamGroup::subnets);
  detail::add_dense_refs(refs, "verb.fc", p.verb.fc, ParamGroup::subnets);
  detail::add_conv_refs(refs, "target.conv1", p.target.conv1, ParamGroup::subnets);
  detail::add_conv_refs(refs, "target.conv2", p.target.conv2, ParamGroup::subnets);
  detail::add_dense_refs(refs, "target.fc", p.target.fc, ParamGroup::subnets);
  detail::add_dense_refs(refs, "head", p.head, ParamGroup::subnets);
  return refs;
}

template <typename T>
std::vector<ParamRef<T>> param_refs(NaiveParams<T>& p) {
  std::vector<ParamRef<T>> refs;
  detail::add_backbone_refs(refs, p.backbone);
  detail::add_conv_refs(refs, "conv1", p.conv1, ParamGroup::subnets);
  detail::add_conv_refs(refs, "conv2", p.conv2, ParamGroup::subnets);
  detail::add_dense_refs(refs, "head", p.head, ParamGroup::subnets);
  return refs;
}

template <typename P>
P zeros_like_params(const P& params) {
  P out = params;
  auto refs = param_refs(out);
  for (auto& r : refs) r.tensor->zero();
  return out;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

template <typename T>
BackboneParams<T> init_backbone(const ModelConfig& cfg, Rng& rng) {
  BackboneParams<T> b;
  b.conv1 = ConvLayer<T>(3, 3, 3, cfg.backbone_c1, 2, 1);
  b.conv2 = ConvLayer<T>(3, 3, cfg.backbone_c1, cfg.backbone_c1, 2, 1);
  b.conv3 = ConvLayer<T>(3, 3, cfg.backbone_c1, cfg.backbone_c2, 2, 1);
  b.conv4 = ConvLayer<T>(3, 3, cfg.backbone_c2, cfg.backbone_c2, 1, 1);
  he_init(b.conv1, rng);
  he_init(b.conv2, rng);
  he_init(b.conv3, rng);
  he_init(b.conv4, rng);
  return b;
}

template <typename T>
InstrumentBranchParams<T> init_instrument_branch(const ModelConfig& cfg, int m, Rng& rng) {
  InstrumentBranchParams<T> p;
  p.conv1 = ConvLayer<T>(3, 3, cfg.backbone_c2, cfg.branch_channels, 1, 1);
  p.conv2 = ConvLayer<T>(3, 3, cfg.branch_channels, m, 1, 1);
  he_init(p.conv1, rng);
  he_init(p.conv2, rng);
  return p;
}

template <typename T>
GuidedBranchParams<T> init_guided_branch(const ModelConfig& cfg, int guide_channels, int out_classes,
                                         Rng& rng) {
  GuidedBranchParams<T> p;
  p.guide_channels = guide_channels;
  p.conv1 = ConvLayer<T>(3, 3, cfg.backbone_c2 + guide_channels, cfg.branch_channels, 1, 1);
  p.conv2 = ConvLayer<T>(3, 3, cfg.branch_channels, cfg.branch_channels, 1, 1);
  p.fc = DenseLayer<T>(cfg.branch_channels, out_classes);
  he_init(p.conv1, rng);
  he_init(p.conv2, rng);
  he_init(p.fc, rng);
  return p;
}

/// Identity initialization: the volume starts as the raw outer product.
template <typename T>
InteractionParams<T> init_interaction(SpaceMode mode, int m, int n, int p) {
  InteractionParams<T> s;
  s.mode = mode;
  if (mode == SpaceMode::vector) {
    s.alpha = Tensor<T>({m});
    s.beta = Tensor<T>({n});
    s.gamma = Tensor<T>({p});
    s.alpha.fill(T(1));
    s.beta.fill(T(1));
    s.gamma.fill(T(1));
  } else {
    s.alpha = Tensor<T>({m, m});
    s.beta = Tensor<T>({n, n});
    s.gamma = Tensor<T>({p, p});
    for (int i = 0; i < m; ++i) s.alpha(i, i) = T(1);
    for (int i = 0; i < n; ++i) s.beta(i, i) = T(1);
    for (int i = 0; i < p; ++i) s.gamma(i, i) = T(1);
  }
  return s;
}

template <typename T>
TripnetParams<T> init_tripnet(const ModelConfig& cfg, int m, int n, int p, std::uint64_t seed) {
  Rng rng(mix_seed(seed, "tripnet_init"));
  TripnetParams<T> params;
  params.backbone = init_backbone<T>(cfg, rng);
  params.instrument = init_instrument_branch<T>(cfg, m, rng);
  params.verb = init_guided_branch<T>(cfg, m, n, rng);
  params.target = init_guided_branch<T>(cfg, m, p, rng);
  params.space = init_interaction<T>(cfg.space_mode, m, n, p);
  return params;
}

template <typename T>
MtlParams<T> init_mtl(const ModelConfig& cfg, int m, int n, int p, int num_classes, std::uint64_t seed) {
  Rng rng(mix_seed(seed, "mtl_init"));
  MtlParams<T> params;
  params.backbone = init_backbone<T>(cfg, rng);
  params.instrument = init_instrument_branch<T>(cfg, m, rng);
  params.verb = init_guided_branch<T>(cfg, 0, n, rng);
  params.target = init_guided_branch<T>(cfg, 0, p, rng);
  params.head = DenseLayer<T>(m + n + p, num_classes);
  he_init(params.head, rng);
  return params;
}

template <typename T>
NaiveParams<T> init_naive(const ModelConfig& cfg, int num_classes, std::uint64_t seed) {
  Rng rng(mix_seed(seed, "naive_init"));
  NaiveParams<T> params;
  params.backbone = init_backbone<T>(cfg, rng);
  params.conv1 = ConvLayer<T>(3, 3, cfg.backbone_c2, cfg.branch_channels, 1, 1);
  params.conv2 = ConvLayer<T>(3, 3, cfg.branch_channels, cfg.branch_channels, 1, 1);
  const SpatialDims d = backbone_out_dims(cfg.image_h, cfg.image_w);
  params.head = DenseLayer<T>(d.h * d.w * cfg.branch_channels, num_classes);
  he_init(params.conv1, rng);
  he_init(params.conv2, rng);
  he_init(params.head, rng);
  return params;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

template <typename T>
struct BlockCache {
  ConvCache<T> conv;
  Tensor<T> pre;
  Tensor<T> act;
};

template <typename T>
struct BackboneCache {
  BlockCache<T> b1, b2, b3, b4;
  Tensor<T> scratch, dcols;
};

template <typename T>
const Tensor<T>& backbone_forward(const BackboneParams<T>& params, const Tensor<T>& image,
                                  BackboneCache<T>& cache) {
  conv2d_forward(params.conv1, image, cache.b1.conv, cache.b1.pre);
  relu_forward(cache.b1.pre, cache.b1.act);
  conv2d_forward(params.conv2, cache.b1.act, cache.b2.conv, cache.b2.pre);
  relu_forward(cache.b2.pre, cache.b2.act);
  conv2d_forward(params.conv3, cache.b2.act, cache.b3.conv, cache.b3.pre);
  relu_forward(cache.b3.pre, cache.b3.act);
  conv2d_forward(params.conv4, cache.b3.act, cache.b4.conv, cache.b4.pre);
  relu_forward(cache.b4.pre, cache.b4.act);
  return cache.b4.act;
}

template <typename T>
void backbone_backward(const BackboneParams<T>& params, BackboneCache<T>& cache, const Tensor<T>& dfeat,
                       BackboneParams<T>& grads) {
  Tensor<T>& d = cache.scratch;
  relu_backward(cache.b4.act, dfeat, d);
  Tensor<T> dx;
  conv2d_backward(params.conv4, cache.b4.conv, d, grads.conv4, &dx, &cache.dcols);
  relu_backward(cache.b3.act, dx, d);
  conv2d_backward(params.conv3, cache.b3.conv, d, grads.conv3, &dx, &cache.dcols);
  relu_backward(cache.b2.act, dx, d);
  conv2d_backward(params.conv2, cache.b2.conv, d, grads.conv2, &dx, &cache.dcols);
  relu_backward(cache.b1.act, dx, d);
  conv2d_backward(params.conv1, cache.b1.conv, d, grads.conv1, static_cast<Tensor<T>*>(nullptr),
                  &cache.dcols);
}

template <typename T>
struct InstrumentCache {
  BlockCache<T> b1;
  ConvCache<T> conv2;
  Tensor<T> cam;       // (h, w, m), pre-pooling maps
  Tensor<T> logits;    // (m)
  std::vector<int> argmax;
  Tensor<T> scratch, dcols;
};

/// Instrument branch: two convs to m CAM channels, then global max pooling.
/// The GMP tie is exact: logits[k] == spatial max of cam channel k.
template <typename T>
void instrument_branch_forward(const InstrumentBranchParams<T>& params, const Tensor<T>& feat,
                               InstrumentCache<T>& cache) {
  conv2d_forward(params.conv1, feat, cache.b1.conv, cache.b1.pre);
  relu_forward(cache.b1.pre, cache.b1.act);
  conv2d_forward(params.conv2, cache.b1.act, cache.conv2, cache.cam);
  global_max_pool(cache.cam, cache.logits, cache.argmax);
}

template <typename T>
void instrument_branch_backward(const InstrumentBranchParams<T>& params, InstrumentCache<T>& cache,
                                const Tensor<T>& dlogits, const Tensor<T>* dcam_extra,
                                InstrumentBranchParams<T>& grads, Tensor<T>& dfeat) {
  Tensor<T>& dcam = cache.scratch;
  dcam.reshape_buffer(cache.cam.shape());
  global_max_pool_backward(dlogits, cache.argmax, dcam);
  if (dcam_extra)
    for (std::int64_t i = 0; i < dcam.size(); ++i) dcam[i] += (*dcam_extra)[i];
  Tensor<T> dact;
  conv2d_backward(params.conv2, cache.conv2, dcam, grads.conv2, &dact, &cache.dcols);
  Tensor<T> dpre;
  relu_backward(cache.b1.act, dact, dpre);
  conv2d_backward(params.conv1, cache.b1.conv, dpre, grads.conv1, &dfeat, &cache.dcols);
}

template <typename T>
struct GuidedBranchCache {
  Tensor<T> concat;   // (h, w, feat + guide); unused when the branch has no guide
  BlockCache<T> b1, b2;
  Tensor<T> pooled;   // (branch_channels), spatial max of b2.act
  std::vector<int> argmax;
  Tensor<T> logits;
  bool guide_resized = false;
  int guide_h = 0, guide_w = 0;  // original guide grid, for the resize backward
  Tensor<T> scratch, dcols;
};

/// Verb/target path: the guide CAMs are concatenated onto the shared feature
/// map so both convs can react to appearance at instrument locations, then
/// global max pooling feeds a fully-connected readout. Resizes the guide if
/// its grid differs from the feature grid.
template <typename T>
void guided_branch_forward(const GuidedBranchParams<T>& params, const Tensor<T>& feat,
                           const Tensor<T>* guide, GuidedBranchCache<T>& cache) {
  const Tensor<T>* in = &feat;
  cache.guide_resized = false;
  if (params.guide_channels > 0) {
    if (!guide) throw ShapeError("guided_branch_forward: guide input required");
    if (guide->dim(2) != params.guide_channels)
      throw ShapeError("guided_branch_forward: guide has " + std::to_string(guide->dim(2)) +
                       " channels, expected " + std::to_string(params.guide_channels));
    cache.guide_h = guide->dim(0);
    cache.guide_w = guide->dim(1);
    if (guide->dim(0) != feat.dim(0) || guide->dim(1) != feat.dim(1)) {
      cache.guide_resized = true;
      Tensor<T> resized;
      bilinear_resize(*guide, feat.dim(0), feat.dim(1), resized);
      concat_channels(feat, resized, cache.concat);
    } else {
      concat_channels(feat, *guide, cache.concat);
    }
    in = &cache.concat;
  }
  conv2d_forward(params.conv1, *in, cache.b1.conv, cache.b1.pre);
  relu_forward(cache.b1.pre, cache.b1.act);
  conv2d_forward(params.conv2, cache.b1.act, cache.b2.conv, cache.b2.pre);
  relu_forward(cache.b2.pre, cache.b2.act);
  global_max_pool(cache.b2.act, cache.pooled, cache.argmax);
  dense_forward(params.fc, cache.pooled, cache.logits);
}

/// dguide is written (not accumulated) when non-null; callers decide whether
/// the guide gradient flows back into the CAM.
template <typename T>
void guided_branch_backward(const GuidedBranchParams<T>& params, GuidedBranchCache<T>& cache,
                            const Tensor<T>& dlogits, GuidedBranchParams<T>& grads, Tensor<T>& dfeat,
                            Tensor<T>* dguide) {
  Tensor<T> dpooled;
  dense_backward(params.fc, cache.pooled, dlogits, grads.fc, &dpooled);
  Tensor<T>& dact2 = cache.scratch;
  dact2.reshape_buffer(cache.b2.act.shape());
  global_max_pool_backward(dpooled, cache.argmax, dact2);
  Tensor<T> dpre;
  relu_backward(cache.b2.act, dact2, dpre);
  Tensor<T> dact1;
  conv2d_backward(params.conv2, cache.b2.conv, dpre, grads.conv2, &dact1, &cache.dcols);
  relu_backward(cache.b1.act, dact1, dpre);
  if (params.guide_channels > 0) {
    Tensor<T> dconcat;
    conv2d_backward(params.conv1, cache.b1.conv, dpre, grads.conv1, &dconcat, &cache.dcols);
    Tensor<T> dguide_local;
    Tensor<T>& dg = dguide ? *dguide : dguide_local;
    if (cache.guide_resized) {
      Tensor<T> dresized;
      split_channels_backward(dconcat, dconcat.dim(2) - params.guide_channels, dfeat, dresized);
      bilinear_resize_backward(dresized, cache.guide_h, cache.guide_w, dg);
    } else {
      split_channels_backward(dconcat, dconcat.dim(2) - params.guide_channels, dfeat, dg);
    }
  } else {
    conv2d_backward(params.conv1, cache.b1.conv, dpre, grads.conv1, &dfeat, &cache.dcols);
    if (dguide) dguide->zero();
  }
}

// ---------------------------------------------------------------------------
// 3D interaction space
// ---------------------------------------------------------------------------

/// volume[i,v,t] = (alpha*li)[i] * (beta*lv)[v] * (gamma*lt)[t], the learnable
/// outer-product projection. Matrix mode applies full projection matrices
/// instead of elementwise scales.
template <typename T>
void interaction_project(const InteractionParams<T>& space, const Tensor<T>& li, const Tensor<T>& lv,
                         const Tensor<T>& lt, Tensor<T>& volume) {
  const int m = static_cast<int>(li.size());
  const int n = static_cast<int>(lv.size());
  const int p = static_cast<int>(lt.size());
  if (space.mode == SpaceMode::vector) {
    if (space.alpha.size() != m || space.beta.size() != n || space.gamma.size() != p)
      throw ShapeError("interaction_project: logits lengths do not match projection vectors");
  } else {
    if (space.alpha.dim(1) != m || space.beta.dim(1) != n || space.gamma.dim(1) != p)
      throw ShapeError("interaction_project: logits lengths do not match projection matrices");
  }
  std::vector<T> ai(static_cast<std::size_t>(m)), bv(static_cast<std::size_t>(n)), ct(static_cast<std::size_t>(p));
  if (space.mode == SpaceMode::vector) {
    for (int i = 0; i < m; ++i) ai[static_cast<std::size_t>(i)] = space.alpha(i) * li(i);
    for (int v = 0; v < n; ++v) bv[static_cast<std::size_t>(v)] = space.beta(v) * lv(v);
    for (int t = 0; t < p; ++t) ct[static_cast<std::size_t>(t)] = space.gamma(t) * lt(t);
  } else {
    for (int i = 0; i < m; ++i) {
      T s = T(0);
      for (int j = 0; j < m; ++j) s += space.alpha(i, j) * li(j);
      ai[static_cast<std::size_t>(i)] = s;
    }
    for (int v = 0; v < n; ++v) {
      T s = T(0);
      for (int j = 0; j < n; ++j) s += space.beta(v, j) * lv(j);
      bv[static_cast<std::size_t>(v)] = s;
    }
    for (int t = 0; t < p; ++t) {
      T s = T(0);
      for (int j = 0; j < p; ++j) s += space.gamma(t, j) * lt(j);
      ct[static_cast<std::size_t>(t)] = s;
    }
  }
  volume.reshape_buffer({m, n, p});
  for (int i = 0; i < m; ++i)
    for (int v = 0; v < n; ++v) {
      const T f = ai[static_cast<std::size_t>(i)] * bv[static_cast<std::size_t>(v)];
      T* row = volume.data() + (static_cast<std::int64_t>(i) * n + v) * p;
      for (int t = 0; t < p; ++t) row[t] = f * ct[static_cast<std::size_t>(t)];
    }
}

template <typename T>
void interaction_project_backward(const InteractionParams<T>& space, const Tensor<T>& li,
                                  const Tensor<T>& lv, const Tensor<T>& lt, const Tensor<T>& dvolume,
                                  InteractionParams<T>& grads, Tensor<T>& dli, Tensor<T>& dlv,
                                  Tensor<T>& dlt) {
  const int m = static_cast<int>(li.size());
  const int n = static_cast<int>(lv.size());
  const int p = static_cast<int>(lt.size());
  std::vector<T> ai(static_cast<std::size_t>(m)), bv(static_cast<std::size_t>(n)), ct(static_cast<std::size_t>(p));
  if (space.mode == SpaceMode::vector) {
    for (int i = 0; i < m; ++i) ai[static_cast<std::size_t>(i)] = space.alpha(i) * li(i);
    for (int v = 0; v < n; ++v) bv[static_cast<std::size_t>(v)] = space.beta(v) * lv(v);
    for (int t = 0; t < p; ++t) ct[static_cast<std::size_t>(t)] = space.gamma(t) * lt(t);
  } else {
    for (int i = 0; i < m; ++i) {
      T s = T(0);
      for (int j = 0; j < m; ++j) s += space.alpha(i, j) * li(j);
      ai[static_cast<std::size_t>(i)] = s;
    }
    for (int v = 0; v < n; ++v) {
      T s = T(0);
      for (int j = 0; j < n; ++j) s += space.beta(v, j) * lv(j);
      bv[static_cast<std::size_t>(v)] = s;
    }
    for (int t = 0; t < p; ++t) {
      T s = T(0);
      for (int j = 0; j < p; ++j) s += space.gamma(t, j) * lt(j);
      ct[static_cast<std::size_t>(t)] = s;
    }
  }

  // Gradients w.r.t. the projected factors.
  std::vector<T> dai(static_cast<std::size_t>(m), T(0)), dbv(static_cast<std::size_t>(n), T(0)),
      dct(static_cast<std::size_t>(p), T(0));
  for (int i = 0; i < m; ++i)
    for (int v = 0; v < n; ++v) {
      const T* drow = dvolume.data() + (static_cast<std::int64_t>(i) * n + v) * p;
      T s_ct = T(0);
      for (int t = 0; t < p; ++t) {
        const T g = drow[t];
        s_ct += g * ct[static_cast<std::size_t>(t)];
        dct[static_cast<std::size_t>(t)] += g * ai[static_cast<std::size_t>(i)] * bv[static_cast<std::size_t>(v)];
      }
      dai[static_cast<std::size_t>(i)] += s_ct * bv[static_cast<std::size_t>(v)];
      dbv[static_cast<std::size_t>(v)] += s_ct * ai[static_cast<std::size_t>(i)];
    }

  dli.reshape_buffer({m});
  dlv.reshape_buffer({n});
  dlt.reshape_buffer({p});
  if (space.mode == SpaceMode::vector) {
    for (int i = 0; i < m; ++i) {
      dli(i) = space.alpha(i) * dai[static_cast<std::size_t>(i)];
      grads.alpha(i) += li(i) * dai[static_cast<std::size_t>(i)];
    }
    for (int v = 0; v < n; ++v) {
      dlv(v) = space.beta(v) * dbv[static_cast<std::size_t>(v)];
      grads.beta(v) += lv(v) * dbv[static_cast<std::size_t>(v)];
    }
    for (int t = 0; t < p; ++t) {
      dlt(t) = space.gamma(t) * dct[static_cast<std::size_t>(t)];
      grads.gamma(t) += lt(t) * dct[static_cast<std::size_t>(t)];
    }
  } else {
    for (int i = 0; i < m; ++i) {
      dli(i) = T(0);
      for (int j = 0; j < m; ++j) {
        grads.alpha(j, i) += dai[static_cast<std::size_t>(j)] * li(i);
        dli(i) += space.alpha(j, i) * dai[static_cast<std::size_t>(j)];
      }
    }
    for (int v = 0; v < n; ++v) {
      dlv(v) = T(0);
      for (int j = 0; j < n; ++j) {
        grads.beta(j, v) += dbv[static_cast<std::size_t>(j)] * lv(v);
        dlv(v) += space.beta(j, v) * dbv[static_cast<std::size_t>(j)];
      }
    }
    for (int t = 0; t < p; ++t) {
      dlt(t) = T(0);
      for (int j = 0; j < p; ++j) {
        grads.gamma(j, t) += dct[static_cast<std::size_t>(j)] * lt(t);
        dlt(t) += space.gamma(j, t) * dct[static_cast<std::size_t>(j)];
      }
    }
  }
}

/// Decoded probabilities: sigmoid at masked-true cells, exactly 0 elsewhere.
template <typename T>
Tensor<T> decode_probabilities(const Tensor<T>& volume, const ValidityMask& mask) {
  Tensor<T> probs(volume.shape());
  const int m = volume.dim(0), n = volume.dim(1), p = volume.dim(2);
  for (int i = 0; i < m; ++i)
    for (int v = 0; v < n; ++v)
      for (int t = 0; t < p; ++t)
        probs(i, v, t) = mask.at(i, v, t)
                             ? static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(volume(i, v, t)))))
                             : T(0);
  return probs;
}

// ---------------------------------------------------------------------------
// Whole-model forward/backward
// ---------------------------------------------------------------------------

template <typename T>
struct TripnetCache {
  BackboneCache<T> backbone;
  InstrumentCache<T> instrument;
  Tensor<T> guide;  // tanh-bounded CAM copy (zeros when the CAG is disabled)
  GuidedBranchCache<T> verb, target;
  Tensor<T> volume;
  Tensor<T> dfeat_sum, dfeat_tmp, dguide_v, dguide_t;
};

/// Full Tripnet pass: backbone, instrument branch with CAMs, CAM-guided
/// verb/target branches, and the 3D interaction projection.
template <typename T>
void tripnet_forward(const TripnetParams<T>& params, const ModelConfig& cfg, const Tensor<T>& image,
                     TripnetCache<T>& cache) {
  if (image.rank() != 3 || image.dim(0) != cfg.image_h || image.dim(1) != cfg.image_w || image.dim(2) != 3)
    throw ShapeError("tripnet_forward: image shape " + shape_string(image.shape()) +
                     " does not match configured input size");
  const Tensor<T>& feat = backbone_forward(params.backbone, image, cache.backbone);
  instrument_branch_forward(params.instrument, feat, cache.instrument);
  cache.guide.reshape_buffer(cache.instrument.cam.shape());
  if (cfg.use_cag) {
    // tanh keeps the guide's hot-region geometry while bounding its scale;
    // raw CAM logits grow unbounded and would dominate the FC input.
    for (std::int64_t i = 0; i < cache.guide.size(); ++i)
      cache.guide[i] = std::tanh(cache.instrument.cam[i]);
  } else {
    cache.guide.zero();
  }
  guided_branch_forward(params.verb, feat, &cache.guide, cache.verb);
  guided_branch_forward(params.target, feat, &cache.guide, cache.target);
  interaction_project(params.space, cache.instrument.logits, cache.verb.logits, cache.target.logits,
                      cache.volume);
}

/// Head gradients for a backward pass. Inactive heads (warm-up, untrained
/// space) are simply left null.
template <typename T>
struct TripnetHeadGrads {
  const Tensor<T>* dlogits_i = nullptr;
  const Tensor<T>* dlogits_v = nullptr;
  const Tensor<T>* dlogits_t = nullptr;
  const Tensor<T>* dvolume = nullptr;
};

template <typename T>
void tripnet_backward(const TripnetParams<T>& params, const ModelConfig& cfg, TripnetCache<T>& cache,
                      const TripnetHeadGrads<T>& head, TripnetParams<T>& grads) {
  const int m = cache.instrument.logits.dim(0);
  const int n = cache.verb.logits.dim(0);
  const int p = cache.target.logits.dim(0);

  Tensor<T> dli({m}), dlv({n}), dlt({p});
  if (head.dvolume) {
    interaction_project_backward(params.space, cache.instrument.logits, cache.verb.logits,
                                 cache.target.logits, *head.dvolume, grads.space, dli, dlv, dlt);
  }
  if (head.dlogits_i)
    for (int i = 0; i < m; ++i) dli(i) += (*head.dlogits_i)(i);
  if (head.dlogits_v)
    for (int v = 0; v < n; ++v) dlv(v) += (*head.dlogits_v)(v);
  if (head.dlogits_t)
    for (int t = 0; t < p; ++t) dlt(t) += (*head.dlogits_t)(t);

  cache.dfeat_sum.reshape_buffer(cache.backbone.b4.act.shape());
  cache.dfeat_sum.zero();
  const bool vt_active = head.dlogits_v || head.dlogits_t || head.dvolume;

  const Tensor<T>* dcam_extra = nullptr;
  if (vt_active) {
    guided_branch_backward(params.verb, cache.verb, dlv, grads.verb, cache.dfeat_tmp, &cache.dguide_v);
    for (std::int64_t i = 0; i < cache.dfeat_sum.size(); ++i) cache.dfeat_sum[i] += cache.dfeat_tmp[i];
    guided_branch_backward(params.target, cache.target, dlt, grads.target, cache.dfeat_tmp,
                           &cache.dguide_t);
    for (std::int64_t i = 0; i < cache.dfeat_sum.size(); ++i) cache.dfeat_sum[i] += cache.dfeat_tmp[i];
    if (cfg.use_cag && cfg.cag_backprop) {
      for (std::int64_t i = 0; i < cache.dguide_v.size(); ++i) {
        const T g = cache.guide[i];
        cache.dguide_v[i] = (cache.dguide_v[i] + cache.dguide_t[i]) * (T(1) - g * g);
      }
      dcam_extra = &cache.dguide_v;
    }
  }

  instrument_branch_backward(params.instrument, cache.instrument, dli, dcam_extra, grads.instrument,
                             cache.dfeat_tmp);
  for (std::int64_t i = 0; i < cache.dfeat_sum.size(); ++i) cache.dfeat_sum[i] += cache.dfeat_tmp[i];

  backbone_backward(params.backbone, cache.backbone, cache.dfeat_sum, grads.backbone);
}

template <typename T>
struct MtlCache {
  BackboneCache<T> backbone;
  InstrumentCache<T> instrument;
  GuidedBranchCache<T> verb, target;
  Tensor<T> concat;         // [m + n + p]
  Tensor<T> logits_c;       // [C]
  Tensor<T> dfeat_sum, dfeat_tmp;
};

/// MTL baseline: the three branches without CAG; component logits are
/// concatenated and fed to an FC layer over the triplet classes.
template <typename T>
void mtl_forward(const MtlParams<T>& params, const ModelConfig& cfg, const Tensor<T>& image,
                 MtlCache<T>& cache) {
  if (image.rank() != 3 || image.dim(0) != cfg.image_h || image.dim(1) != cfg.image_w || image.dim(2) != 3)
    throw ShapeError("mtl_forward: image shape does not match configured input size");
  const Tensor<T>& feat = backbone_forward(params.backbone, image, cache.backbone);
  instrument_branch_forward(params.instrument, feat, cache.instrument);
  guided_branch_forward(params.verb, feat, static_cast<const Tensor<T>*>(nullptr), cache.verb);
  guided_branch_forward(params.target, feat, static_cast<const Tensor<T>*>(nullptr), cache.target);
  const int m = cache.instrument.logits.dim(0);
  const int n = cache.verb.logits.dim(0);
  const int p = cache.target.logits.dim(0);
  cache.concat.reshape_buffer({m + n + p});
  for (int i = 0; i < m; ++i) cache.concat(i) = cache.instrument.logits(i);
  for (int v = 0; v < n; ++v) cache.concat(m + v) = cache.verb.logits(v);
  for (int t = 0; t < p; ++t) cache.concat(m + n + t) = cache.target.logits(t);
  dense_forward(params.head, cache.concat, cache.logits_c);
}

template <typename T>
struct MtlHeadGrads {
  const Tensor<T>* dlogits_i = nullptr;
  const Tensor<T>* dlogits_v = nullptr;
  const Tensor<T>* dlogits_t = nullptr;
  const Tensor<T>* dlogits_c = nullptr;
};

template <typename T>
void mtl_backward(const MtlParams<T>& params, const ModelConfig& cfg, MtlCache<T>& cache,
                  const MtlHeadGrads<T>& head, MtlParams<T>& grads) {
  (void)cfg;
  const int m = cache.instrument.logits.dim(0);
  const int n = cache.verb.logits.dim(0);
  const int p = cache.target.logits.dim(0);
  Tensor<T> dli({m}), dlv({n}), dlt({p});
  if (head.dlogits_c) {
    Tensor<T> dconcat;
    dense_backward(params.head, cache.concat, *head.dlogits_c, grads.head, &dconcat);
    for (int i = 0; i < m; ++i) dli(i) += dconcat(i);
    for (int v = 0; v < n; ++v) dlv(v) += dconcat(m + v);
    for (int t = 0; t < p; ++t) dlt(t) += dconcat(m + n + t);
  }
  if (head.dlogits_i)
    for (int i = 0; i < m; ++i) dli(i) += (*head.dlogits_i)(i);
  if (head.dlogits_v)
    for (int v = 0; v < n; ++v) dlv(v) += (*head.dlogits_v)(v);
  if (head.dlogits_t)
    for (int t = 0; t < p; ++t) dlt(t) += (*head.dlogits_t)(t);

  cache.dfeat_sum.reshape_buffer(cache.backbone.b4.act.shape());
  cache.dfeat_sum.zero();
  const bool vt_active = head.dlogits_v || head.dlogits_t || head.dlogits_c;
  if (vt_active) {
    guided_branch_backward(params.verb, cache.verb, dlv, grads.verb, cache.dfeat_tmp,
                           static_cast<Tensor<T>*>(nullptr));
    for (std::int64_t i = 0; i < cache.dfeat_sum.size(); ++i) cache.dfeat_sum[i] += cache.dfeat_tmp[i];
    guided_branch_backward(params.target, cache.target, dlt, grads.target, cache.dfeat_tmp,
                           static_cast<Tensor<T>*>(nullptr));
    for (std::int64_t i = 0; i < cache.dfeat_sum.size(); ++i) cache.dfeat_sum[i] += cache.dfeat_tmp[i];
  }
  instrument_branch_backward(params.instrument, cache.instrument, dli,
                             static_cast<const Tensor<T>*>(nullptr), grads.instrument,
                             cache.dfeat_tmp);
  for (std::int64_t i = 0; i < cache.dfeat_sum.size(); ++i) cache.dfeat_sum[i] += cache.dfeat_tmp[i];
  backbone_backward(params.backbone, cache.backbone, cache.dfeat_sum, grads.backbone);
}

template <typename T>
struct NaiveCache {
  BackboneCache<T> backbone;
  BlockCache<T> b1, b2;
  Tensor<T> logits_c;
  Tensor<T> scratch;
};

/// Naive baseline: backbone, two extra 3x3 convs, one FC over the triplet
/// class ids. No component heads.
template <typename T>
void naive_forward(const NaiveParams<T>& params, const ModelConfig& cfg, const Tensor<T>& image,
                   NaiveCache<T>& cache) {
  if (image.rank() != 3 || image.dim(0) != cfg.image_h || image.dim(1) != cfg.image_w || image.dim(2) != 3)
    throw ShapeError("naive_forward: image shape does not match configured input size");
  const Tensor<T>& feat = backbone_forward(params.backbone, image, cache.backbone);
  conv2d_forward(params.conv1, feat, cache.b1.conv, cache.b1.pre);
  relu_forward(cache.b1.pre, cache.b1.act);
  conv2d_forward(params.conv2, cache.b1.act, cache.b2.conv, cache.b2.pre);
  relu_forward(cache.b2.pre, cache.b2.act);
  dense_forward(params.head, cache.b2.act, cache.logits_c);
}

template <typename T>
void naive_backward(const NaiveParams<T>& params, const ModelConfig& cfg, NaiveCache<T>& cache,
                    const Tensor<T>& dlogits_c, NaiveParams<T>& grads) {
  (void)cfg;
  Tensor<T>& dflat = cache.scratch;
  dense_backward(params.head, cache.b2.act, dlogits_c, grads.head, &dflat);
  dflat.reshape_buffer(cache.b2.act.shape());
  Tensor<T> dpre, dx;
  relu_backward(cache.b2.act, dflat, dpre);
  conv2d_backward(params.conv2, cache.b2.conv, dpre, grads.conv2, &dx, &cache.backbone.dcols);
  relu_backward(cache.b1.act, dx, dpre);
  conv2d_backward(params.conv1, cache.b1.conv, dpre, grads.conv1, &dx, &cache.backbone.dcols);
  backbone_backward(params.backbone, cache.backbone, dx, grads.backbone);
}

/// Scatter per-class probabilities (from a C-way head) into an m x n x p
/// volume so every model shares one evaluation path.
template <typename T>
Tensor<T> scatter_class_probs(const Tensor<T>& logits_c, const TripletCatalog& catalog) {
  Tensor<T> probs({catalog.m(), catalog.n(), catalog.p()});
  for (const TripletClass& c : catalog.classes()) {
    const double x = static_cast<double>(logits_c(c.class_id));
    probs(c.i, c.v, c.t) = static_cast<T>(1.0 / (1.0 + std::exp(-x)));
  }
  return probs;
}

}  // namespace triplab
