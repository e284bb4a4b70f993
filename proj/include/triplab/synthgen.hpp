#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "triplab/annotations.hpp"
#include "triplab/boxes.hpp"
#include "triplab/image.hpp"
#include "triplab/rng.hpp"
#include "triplab/vocab.hpp"

namespace triplab {

// ---------------------------------------------------------------------------
// Color helpers
// ---------------------------------------------------------------------------

struct Rgb {
  float r = 0, g = 0, b = 0;
};

inline Rgb hsv_to_rgb(double h, double s, double v) {
  h -= std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c; g = x;
  } else if (hp < 2) {
    r = x; g = c;
  } else if (hp < 3) {
    g = c; b = x;
  } else if (hp < 4) {
    g = x; b = c;
  } else if (hp < 5) {
    r = x; b = c;
  } else {
    r = c; b = x;
  }
  const double m = v - c;
  return Rgb{static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

struct Hsv {
  double h = 0, s = 0, v = 0;
};

inline Hsv rgb_to_hsv(float r, float g, float b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  Hsv out;
  out.v = mx;
  out.s = mx > 0 ? d / mx : 0.0;
  if (d <= 0) {
    out.h = 0.0;
  } else if (mx == r) {
    out.h = std::fmod((g - b) / d, 6.0) / 6.0;
  } else if (mx == g) {
    out.h = ((b - r) / d + 2.0) / 6.0;
  } else {
    out.h = ((r - g) / d + 4.0) / 6.0;
  }
  if (out.h < 0) out.h += 1.0;
  return out;
}

inline double hue_distance(double a, double b) {
  double d = std::abs(a - b);
  d -= std::floor(d);
  return std::min(d, 1.0 - d);
}

/// Instruments occupy evenly spaced fully saturated hues.
inline double instrument_hue(int instrument, int num_instruments) {
  return static_cast<double>(instrument) / std::max(1, num_instruments);
}

/// Targets get muted colors so they never pass a saturation test meant for
/// instruments. Target 0 ("null") is never drawn.
inline Rgb target_color(int target, int num_targets) {
  const double hue = static_cast<double>(target) / std::max(1, num_targets);
  return hsv_to_rgb(hue + 0.5 / num_targets, 0.45, 0.55);
}

// ---------------------------------------------------------------------------
// Scenario: which (verb, target) combinations each instrument can realize
// ---------------------------------------------------------------------------

struct SynthConfig {
  int image_h = 64;
  int image_w = 112;
  int num_instruments = 6;
  int num_verbs = 8;    // including "null"
  int num_targets = 19; // including "null"
  int num_videos = 10;
  int frames_per_video = 100;
  int verbs_per_instrument = 3;    // non-null verbs each instrument can perform
  int targets_per_instrument = 4;  // non-null targets each instrument can act on
  double idle_prob = 0.10;         // instrument present but idle: (null, null)
  double background_prob = 0.04;   // frame with no instruments at all
  double second_prob = 0.45;       // P(second instrument | first)
  double third_prob = 0.35;        // P(third | second)
  int max_instances = 3;
  double decoy_patch_prob = 0.7;   // tissue patch with a random verb texture but no instrument tip
  int max_decoy_patches = 2;
  double decoy_glyph_prob = 0.5;   // solid glyph at an off-palette hue (no instrument present)
  int max_decoy_glyphs = 1;
  double glyph_min_frac = 0.10;    // glyph radius as a fraction of min(h, w)
  double glyph_max_frac = 0.16;
  std::uint64_t seed = 1;
};

/// Deterministic affinity structure: instrument k can perform verbs V_k on
/// targets T_k (cross product), plus the idle pair (null, null) when idling
/// is enabled. This is what makes the validity mask genuinely sparse.
class SynthScenario {
 public:
  explicit SynthScenario(const SynthConfig& cfg) : cfg_(cfg) {
    if (cfg.num_instruments < 1 || cfg.num_verbs < 2 || cfg.num_targets < 2)
      throw std::invalid_argument("SynthScenario: need >= 1 instrument and >= 2 verbs/targets (index 0 is null)");
    Rng rng(mix_seed(cfg.seed, "scenario"));
    const int vpi = std::clamp(cfg.verbs_per_instrument, 1, cfg.num_verbs - 1);
    const int tpi = std::clamp(cfg.targets_per_instrument, 1, cfg.num_targets - 1);
    verbs_.resize(static_cast<std::size_t>(cfg.num_instruments));
    targets_.resize(static_cast<std::size_t>(cfg.num_instruments));
    for (int k = 0; k < cfg.num_instruments; ++k) {
      verbs_[static_cast<std::size_t>(k)] = sample_ids(rng, cfg.num_verbs, vpi);
      targets_[static_cast<std::size_t>(k)] = sample_ids(rng, cfg.num_targets, tpi);
    }
  }

  const std::vector<int>& verbs_for(int instrument) const {
    return verbs_[static_cast<std::size_t>(instrument)];
  }
  const std::vector<int>& targets_for(int instrument) const {
    return targets_[static_cast<std::size_t>(instrument)];
  }

  /// Every triplet the generator can emit (the ground-truth class space).
  std::set<Triplet> all_triplets() const {
    std::set<Triplet> out;
    for (int k = 0; k < cfg_.num_instruments; ++k) {
      if (cfg_.idle_prob > 0) out.insert(Triplet{k, 0, 0});
      for (int v : verbs_for(k))
        for (int t : targets_for(k)) out.insert(Triplet{k, v, t});
    }
    return out;
  }

 private:
  // Distinct ids from [1, axis_size), sorted for stable iteration.
  static std::vector<int> sample_ids(Rng& rng, int axis_size, int count) {
    std::vector<int> pool;
    for (int i = 1; i < axis_size; ++i) pool.push_back(i);
    for (int i = static_cast<int>(pool.size()) - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.uniform_int(i + 1));
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    pool.resize(static_cast<std::size_t>(std::min<int>(count, static_cast<int>(pool.size()))));
    std::sort(pool.begin(), pool.end());
    return pool;
  }

  SynthConfig cfg_;
  std::vector<std::vector<int>> verbs_;
  std::vector<std::vector<int>> targets_;
};

// ---------------------------------------------------------------------------
// Frame planning (labels only, no pixels)
// ---------------------------------------------------------------------------

struct FramePlan {
  std::vector<Triplet> instances;  // empty = background frame
};

inline std::string video_name(int index) {
  std::string n = std::to_string(index + 1);
  if (n.size() < 2) n = "0" + n;
  return "vid" + n;
}

inline Rng frame_rng(const SynthConfig& cfg, const std::string& video_id, int frame_index,
                     const char* stream) {
  std::uint64_t s = mix_seed(cfg.seed, video_id);
  s = mix_seed(s, static_cast<std::uint64_t>(frame_index));
  return Rng(mix_seed(s, stream));
}

/// Labels for one frame, deterministic in (seed, video, frame).
inline FramePlan plan_frame(const SynthConfig& cfg, const SynthScenario& scenario,
                            const std::string& video_id, int frame_index) {
  Rng rng = frame_rng(cfg, video_id, frame_index, "plan");
  FramePlan plan;
  if (rng.bernoulli(cfg.background_prob)) return plan;

  int count = 1;
  if (cfg.max_instances >= 2 && rng.bernoulli(cfg.second_prob)) {
    count = 2;
    if (cfg.max_instances >= 3 && rng.bernoulli(cfg.third_prob)) count = 3;
  }
  count = std::min(count, cfg.num_instruments);

  // Distinct instruments via a partial shuffle.
  std::vector<int> pool;
  for (int k = 0; k < cfg.num_instruments; ++k) pool.push_back(k);
  for (int i = static_cast<int>(pool.size()) - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.uniform_int(i + 1));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }

  for (int c = 0; c < count; ++c) {
    const int k = pool[static_cast<std::size_t>(c)];
    if (rng.bernoulli(cfg.idle_prob)) {
      plan.instances.push_back(Triplet{k, 0, 0});
      continue;
    }
    const auto& verbs = scenario.verbs_for(k);
    const auto& targets = scenario.targets_for(k);
    const int v = verbs[static_cast<std::size_t>(rng.uniform_int(verbs.size()))];
    const int t = targets[static_cast<std::size_t>(rng.uniform_int(targets.size()))];
    plan.instances.push_back(Triplet{k, v, t});
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace render {

constexpr int kShapeCount = 6;

/// Glyph membership test in centered coordinates, radius r. Shapes cycle
/// by instrument index; hue remains the primary identity cue.
inline bool glyph_contains(int shape, double dx, double dy, double r) {
  switch (shape % kShapeCount) {
    case 0:  // disk
      return dx * dx + dy * dy <= r * r;
    case 1:  // square
      return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    case 2:  // upward triangle
      return dy >= -r && dy <= 0.8 * r && std::abs(dx) <= 0.55 * (dy + r);
    case 3:  // diamond
      return std::abs(dx) + std::abs(dy) <= r;
    case 4:  // plus
      return (std::abs(dx) <= 0.35 * r && std::abs(dy) <= r) ||
             (std::abs(dy) <= 0.35 * r && std::abs(dx) <= r);
    default:  // horizontal bar
      return std::abs(dy) <= 0.35 * r && std::abs(dx) <= r;
  }
}

/// Verb texture: a brightness factor per cell in local coordinates centered
/// on the painted region (radius r). Pattern 0 (the null verb) is solid; the
/// rest are stripe/checker/dot/ring families. The texture is painted on the
/// acted-on tissue patch, so reading a verb requires knowing which patch the
/// instrument tip is in — the relational cue the instrument CAM provides.
inline float verb_pattern_factor(int verb, double dx, double dy, double r) {
  constexpr float kDim = 0.45f;
  const double cell = std::max(2.0, r / 2.5);
  const auto band = [&](double u) { return static_cast<int>(std::floor(u / cell)) % 2 == 0; };
  switch (verb % 8) {
    case 0:
      return 1.0f;
    case 1:  // horizontal stripes
      return band(dy) ? 1.0f : kDim;
    case 2:  // vertical stripes
      return band(dx) ? 1.0f : kDim;
    case 3:  // diagonal stripes
      return band(dx + dy) ? 1.0f : kDim;
    case 4:  // checkerboard
      return band(dx) == band(dy) ? 1.0f : kDim;
    case 5: {  // dots: dim everywhere except small bright cores
      const double mx = dx - std::floor(dx / (2 * cell)) * 2 * cell - cell;
      const double my = dy - std::floor(dy / (2 * cell)) * 2 * cell - cell;
      return (mx * mx + my * my <= 0.45 * cell * cell) ? 1.0f : kDim;
    }
    case 6: {  // concentric rings
      const double d = std::sqrt(dx * dx + dy * dy);
      return band(d) ? 1.0f : kDim;
    }
    default: {  // radial gradient, bright center
      const double d = std::sqrt(dx * dx + dy * dy) / std::max(r, 1.0);
      return static_cast<float>(1.0 - (1.0 - kDim) * std::min(1.0, d));
    }
  }
}

inline void paint_pixel(Image& img, int y, int x, const Rgb& c) {
  img(y, x, 0) = c.r;
  img(y, x, 1) = c.g;
  img(y, x, 2) = c.b;
}

/// Rasterize a glyph; returns the tight box of painted pixels. `hue_sat_val`
/// gives the base color; the verb pattern modulates value only.
inline Box paint_glyph(Image& img, int shape, int verb, double cx, double cy, double r, double hue,
                       double sat, double val) {
  const int h = img.dim(0), w = img.dim(1);
  const int x_lo = std::max(0, static_cast<int>(std::floor(cx - r - 1)));
  const int x_hi = std::min(w - 1, static_cast<int>(std::ceil(cx + r + 1)));
  const int y_lo = std::max(0, static_cast<int>(std::floor(cy - r - 1)));
  const int y_hi = std::min(h - 1, static_cast<int>(std::ceil(cy + r + 1)));
  int bx0 = w, by0 = h, bx1 = -1, by1 = -1;
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      const double dx = x - cx, dy = y - cy;
      if (!glyph_contains(shape, dx, dy, r)) continue;
      const float f = verb_pattern_factor(verb, dx, dy, r);
      paint_pixel(img, y, x, hsv_to_rgb(hue, sat, val * f));
      bx0 = std::min(bx0, x);
      by0 = std::min(by0, y);
      bx1 = std::max(bx1, x);
      by1 = std::max(by1, y);
    }
  }
  if (bx1 < bx0) return Box(0, 0, 0, 0);
  return Box(bx0, by0, bx1 + 1, by1 + 1);  // half-open pixel box
}

/// Fill a tissue patch with the target color, value-modulated by the verb
/// pattern in patch-local coordinates. Verb 0 paints a solid patch.
inline void paint_patch(Image& img, const Box& b, const Rgb& color, int verb) {
  const int h = img.dim(0), w = img.dim(1);
  const int y0 = std::max(0, static_cast<int>(b.y0)), y1 = std::min(h, static_cast<int>(b.y1));
  const int x0 = std::max(0, static_cast<int>(b.x0)), x1 = std::min(w, static_cast<int>(b.x1));
  const double cx = 0.5 * (b.x0 + b.x1);
  const double cy = 0.5 * (b.y0 + b.y1);
  const double r = 0.5 * std::min(b.x1 - b.x0, b.y1 - b.y0);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const float f = verb_pattern_factor(verb, x - cx, y - cy, r);
      paint_pixel(img, y, x, Rgb{color.r * f, color.g * f, color.b * f});
    }
}

}  // namespace render

/// One drawn instrument instance: its label, the glyph's pixel box, the tip
/// position (glyph center, always inside the target patch when t > 0), and
/// the acted-on patch box (zero-area when t = 0).
struct RenderedInstance {
  Triplet triplet{0, 0, 0};
  Box box;
  int tip_x = 0, tip_y = 0;
  Box patch;
};

struct RenderedFrame {
  Image image;
  std::vector<RenderedInstance> instances;
};

/// Render one frame. Deterministic in (seed, video, frame); the labels always
/// match plan_frame for the same coordinates.
inline RenderedFrame render_frame(const SynthConfig& cfg, const SynthScenario& scenario,
                                  const std::string& video_id, int frame_index) {
  const FramePlan plan = plan_frame(cfg, scenario, video_id, frame_index);
  Rng rng = frame_rng(cfg, video_id, frame_index, "layout");
  Rng pixel_rng = frame_rng(cfg, video_id, frame_index, "pixels");

  const int h = cfg.image_h, w = cfg.image_w;
  RenderedFrame out;
  out.image.resize({h, w, 3});

  // Muted background: vertical gradient plus light pixel noise.
  for (int y = 0; y < h; ++y) {
    const float base = 0.18f + 0.10f * static_cast<float>(y) / std::max(1, h - 1);
    for (int x = 0; x < w; ++x) {
      const float n = static_cast<float>(pixel_rng.uniform(-0.02, 0.02));
      for (int c = 0; c < 3; ++c) out.image(y, x, c) = std::clamp(base + n, 0.0f, 1.0f);
    }
  }

  const double rmin = cfg.glyph_min_frac * std::min(h, w);
  const double rmax = cfg.glyph_max_frac * std::min(h, w);
  std::vector<Box> occupied;

  const auto place_box = [&](int bw, int bh, Box& placed) {
    for (int attempt = 0; attempt < 40; ++attempt) {
      const int x0 = static_cast<int>(rng.uniform_int(std::max(1, w - bw + 1)));
      const int y0 = static_cast<int>(rng.uniform_int(std::max(1, h - bh + 1)));
      placed = Box(x0, y0, x0 + bw, y0 + bh);
      bool ok = true;
      for (const Box& other : occupied)
        if (iou(placed, other) > 0.5) {
          ok = false;
          break;
        }
      if (ok) return;
    }
    // Crowded frame: keep the last candidate rather than failing.
  };

  struct GlyphJob {
    int shape;
    double cx, cy, r, hue, val;
    int slot;  // index into out.instances, -1 for decoys
  };
  std::vector<GlyphJob> glyphs;

  // Real instances: target patch first (when t > 0), textured with the
  // instance's verb pattern, glyph tip inside it. The verb is thus a property
  // of the acted-on region, not of the instrument marker itself.
  for (const Triplet& trip : plan.instances) {
    const int k = trip[0], v = trip[1], t = trip[2];
    const double r = rng.uniform(rmin, rmax);
    Box patch{0, 0, 0, 0};
    double cx = 0, cy = 0;
    if (t > 0) {
      const int pw = static_cast<int>(std::lround(r * rng.uniform(2.4, 3.6)));
      const int ph = static_cast<int>(std::lround(r * rng.uniform(2.2, 3.2)));
      place_box(std::min(pw, w), std::min(ph, h), patch);
      render::paint_patch(out.image, patch, target_color(t, cfg.num_targets), v);
      // Tip strictly inside the patch with a small margin.
      const double mx = std::max(1.0, 0.18 * (patch.x1 - patch.x0));
      const double my = std::max(1.0, 0.18 * (patch.y1 - patch.y0));
      cx = rng.uniform(patch.x0 + mx, patch.x1 - mx);
      cy = rng.uniform(patch.y0 + my, patch.y1 - my);
      occupied.push_back(patch);
    } else {
      Box spot{0, 0, 0, 0};
      const int d = static_cast<int>(std::lround(2 * r + 2));
      place_box(std::min(d, w), std::min(d, h), spot);
      cx = 0.5 * (spot.x0 + spot.x1);
      cy = 0.5 * (spot.y0 + spot.y1);
      occupied.push_back(spot);
    }
    cx = std::clamp(cx, r, w - 1 - r);
    cy = std::clamp(cy, r, h - 1 - r);
    const int slot = static_cast<int>(out.instances.size());
    out.instances.push_back(RenderedInstance{trip, Box{}, static_cast<int>(std::lround(cx)),
                                             static_cast<int>(std::lround(cy)), patch});
    glyphs.push_back(GlyphJob{k % render::kShapeCount, cx, cy, r,
                              instrument_hue(k, cfg.num_instruments), 1.0, slot});
  }

  // Decoy tissue patches: real target colors and real verb textures, but no
  // instrument tip inside. Global texture/color presence is therefore a
  // misleading cue for both the verb and the target.
  const int n_decoy_patches =
      rng.bernoulli(cfg.decoy_patch_prob) ? 1 + static_cast<int>(rng.uniform_int(cfg.max_decoy_patches)) : 0;
  for (int d = 0; d < n_decoy_patches; ++d) {
    const int t = 1 + static_cast<int>(rng.uniform_int(cfg.num_targets - 1));
    const int v = 1 + static_cast<int>(rng.uniform_int(cfg.num_verbs - 1));
    const double r = rng.uniform(rmin, rmax);
    const int pw = static_cast<int>(std::lround(r * rng.uniform(2.4, 3.6)));
    const int ph = static_cast<int>(std::lround(r * rng.uniform(2.2, 3.2)));
    Box patch{0, 0, 0, 0};
    place_box(std::min(pw, w), std::min(ph, h), patch);
    render::paint_patch(out.image, patch, target_color(t, cfg.num_targets), v);
    occupied.push_back(patch);
  }

  // Decoy glyphs: solid markers at hues halfway between instrument hues.
  // They stress the instrument branch's hue selectivity without introducing
  // a real instrument.
  const int n_decoy_glyphs =
      rng.bernoulli(cfg.decoy_glyph_prob) ? 1 + static_cast<int>(rng.uniform_int(cfg.max_decoy_glyphs)) : 0;
  for (int d = 0; d < n_decoy_glyphs; ++d) {
    const int shape = static_cast<int>(rng.uniform_int(render::kShapeCount));
    const double hue = instrument_hue(static_cast<int>(rng.uniform_int(cfg.num_instruments)),
                                      cfg.num_instruments) +
                       0.5 / cfg.num_instruments;
    const double r = rng.uniform(rmin, rmax);
    Box spot{0, 0, 0, 0};
    const int dd = static_cast<int>(std::lround(2 * r + 2));
    place_box(std::min(dd, w), std::min(dd, h), spot);
    double cx = std::clamp(0.5 * (spot.x0 + spot.x1), r, w - 1 - r);
    double cy = std::clamp(0.5 * (spot.y0 + spot.y1), r, h - 1 - r);
    occupied.push_back(spot);
    glyphs.push_back(GlyphJob{shape, cx, cy, r, hue, 0.85, -1});
  }

  // Glyphs paint last (solid, verb pattern 0) so tips stay visible on top of
  // the textured patches.
  for (const GlyphJob& g : glyphs) {
    const Box box = render::paint_glyph(out.image, g.shape, 0, g.cx, g.cy, g.r, g.hue, 1.0, g.val);
    if (g.slot >= 0) out.instances[static_cast<std::size_t>(g.slot)].box = box;
  }
  return out;
}

/// All frame annotations for a generated dataset, without touching pixels.
inline Dataset generate_annotations(const SynthConfig& cfg, const SynthScenario& scenario) {
  Dataset ds;
  for (int v = 0; v < cfg.num_videos; ++v) {
    const std::string vid = video_name(v);
    for (int f = 0; f < cfg.frames_per_video; ++f) {
      const FramePlan plan = plan_frame(cfg, scenario, vid, f);
      FrameAnnotation a{vid, f, {}};
      for (const Triplet& t : plan.instances) a.triplets.insert(t);
      ds.annotations.push_back(std::move(a));
    }
  }
  return ds;
}

inline std::string frame_relpath(const std::string& video_id, int frame_index) {
  std::string n = std::to_string(frame_index);
  while (n.size() < 6) n = "0" + n;
  return video_id + "/frame_" + n + ".png";
}

// ---------------------------------------------------------------------------
// Frame store: quantized in-memory cache fed from disk or the renderer
// ---------------------------------------------------------------------------

/// Holds every frame of a dataset as 8-bit pixels and serves float images.
/// Rendering goes through the same quantization as the PNG pipeline, so
/// in-memory and on-disk training see bit-identical inputs.
class FrameStore {
 public:
  static FrameStore from_disk(const Dataset& ds) {
    FrameStore store;
    for (const auto& a : ds.annotations) {
      const std::string path = ds.image_root + "/" + frame_relpath(a.video_id, a.frame_index);
      store.frames_[key(a.video_id, a.frame_index)] = load_png(path);
    }
    return store;
  }

  static FrameStore from_renderer(const SynthConfig& cfg, const SynthScenario& scenario,
                                  const Dataset& ds) {
    FrameStore store;
    for (const auto& a : ds.annotations) {
      RenderedFrame f = render_frame(cfg, scenario, a.video_id, a.frame_index);
      store.frames_[key(a.video_id, a.frame_index)] = quantize_image(f.image);
    }
    return store;
  }

  Image get(const std::string& video_id, int frame_index) const {
    auto it = frames_.find(key(video_id, frame_index));
    if (it == frames_.end())
      throw std::out_of_range("FrameStore: no frame " + video_id + "/" + std::to_string(frame_index));
    return dequantize_image(it->second);
  }

  std::size_t size() const { return frames_.size(); }

 private:
  static std::string key(const std::string& video_id, int frame_index) {
    return video_id + "#" + std::to_string(frame_index);
  }

  std::map<std::string, ImageU8> frames_;
};

}  // namespace triplab
