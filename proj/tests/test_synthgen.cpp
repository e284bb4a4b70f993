#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <set>

#include "triplab/synthgen.hpp"

using namespace triplab;

namespace {

SynthConfig small_config() {
  SynthConfig sc;
  sc.num_instruments = 3;
  sc.num_verbs = 4;
  sc.num_targets = 5;
  sc.verbs_per_instrument = 2;
  sc.targets_per_instrument = 2;
  sc.num_videos = 3;
  sc.frames_per_video = 12;
  sc.seed = 21;
  return sc;
}

double pixel_hue(const Image& img, int y, int x) {
  return rgb_to_hsv(img(y, x, 0), img(y, x, 1), img(y, x, 2)).h;
}

}  // namespace

TEST_CASE("renderer is deterministic in (seed, video, frame)") {
  const SynthConfig sc = small_config();
  const SynthScenario scenario(sc);
  const RenderedFrame a = render_frame(sc, scenario, "vid01", 4);
  const RenderedFrame b = render_frame(sc, scenario, "vid01", 4);
  REQUIRE(a.image == b.image);
  REQUIRE(a.instances.size() == b.instances.size());

  const RenderedFrame c = render_frame(sc, scenario, "vid01", 5);
  REQUIRE_FALSE(a.image == c.image);

  SynthConfig sc2 = sc;
  sc2.seed = 22;
  const SynthScenario scenario2(sc2);
  const RenderedFrame d = render_frame(sc2, scenario2, "vid01", 4);
  REQUIRE_FALSE(a.image == d.image);
}

TEST_CASE("rendered labels agree with the annotation generator") {
  const SynthConfig sc = small_config();
  const SynthScenario scenario(sc);
  const Dataset ds = generate_annotations(sc, scenario);
  REQUIRE(ds.annotations.size() ==
          static_cast<std::size_t>(sc.num_videos) * static_cast<std::size_t>(sc.frames_per_video));

  for (const auto& a : ds.annotations) {
    const RenderedFrame frame = render_frame(sc, scenario, a.video_id, a.frame_index);
    std::set<Triplet> rendered;
    for (const RenderedInstance& inst : frame.instances) rendered.insert(inst.triplet);
    REQUIRE(rendered == a.triplets);
  }
}

TEST_CASE("annotations respect the scenario's affinity structure") {
  const SynthConfig sc = small_config();
  const SynthScenario scenario(sc);
  const Dataset ds = generate_annotations(sc, scenario);
  const std::set<Triplet> allowed = scenario.all_triplets();

  std::int64_t instances = 0;
  for (const auto& a : ds.annotations)
    for (const Triplet& t : a.triplets) {
      ++instances;
      REQUIRE(allowed.count(t) == 1);
      // Idle pairs null verb with null target and nothing else.
      REQUIRE((t[1] == 0) == (t[2] == 0));
    }
  REQUIRE(instances > 0);
}

TEST_CASE("glyphs are solid instrument-hue markers with the tip inside the box") {
  SynthConfig sc = small_config();
  sc.idle_prob = 0.0;
  sc.background_prob = 0.0;
  sc.decoy_glyph_prob = 0.0;
  sc.decoy_patch_prob = 0.0;
  const SynthScenario scenario(sc);

  int checked = 0;
  for (int f = 0; f < sc.frames_per_video; ++f) {
    const RenderedFrame frame = render_frame(sc, scenario, "vid02", f);
    for (const RenderedInstance& inst : frame.instances) {
      REQUIRE(inst.box.area() > 0.0);
      REQUIRE(inst.tip_x >= inst.box.x0);
      REQUIRE(inst.tip_x < inst.box.x1);
      REQUIRE(inst.tip_y >= inst.box.y0);
      REQUIRE(inst.tip_y < inst.box.y1);
      // The glyph paints last, so the tip pixel carries the instrument hue at
      // full saturation -- the identity cue is in the color, not the texture.
      const double hue = pixel_hue(frame.image, inst.tip_y, inst.tip_x);
      const double want = instrument_hue(inst.triplet[0], sc.num_instruments);
      REQUIRE(hue_distance(hue, want) < 1e-4);
      ++checked;
    }
  }
  REQUIRE(checked > 0);
}

TEST_CASE("acting instances put the verb texture on the target patch") {
  SynthConfig sc = small_config();
  sc.idle_prob = 0.0;
  sc.background_prob = 0.0;
  sc.second_prob = 0.0;
  sc.decoy_glyph_prob = 0.0;
  sc.decoy_patch_prob = 0.0;
  const SynthScenario scenario(sc);

  int patches_checked = 0;
  for (int f = 0; f < 2 * sc.frames_per_video; ++f) {
    const RenderedFrame frame = render_frame(sc, scenario, "vid01", f % sc.frames_per_video);
    for (const RenderedInstance& inst : frame.instances) {
      const int t = inst.triplet[2];
      if (t == 0) {
        REQUIRE(inst.patch.area() == 0.0);
        continue;
      }
      REQUIRE(inst.patch.area() > 0.0);
      // Tip strictly inside the acted-on patch.
      REQUIRE(inst.tip_x > inst.patch.x0);
      REQUIRE(inst.tip_x < inst.patch.x1);
      REQUIRE(inst.tip_y > inst.patch.y0);
      REQUIRE(inst.tip_y < inst.patch.y1);

      // Patch pixels outside the glyph keep the target hue but carry at least
      // two brightness levels: the verb pattern modulates value only.
      const Rgb base = target_color(t, sc.num_targets);
      const double target_hue = rgb_to_hsv(base.r, base.g, base.b).h;
      std::set<int> levels;
      int inspected = 0;
      for (int y = static_cast<int>(inst.patch.y0); y < static_cast<int>(inst.patch.y1); ++y)
        for (int x = static_cast<int>(inst.patch.x0); x < static_cast<int>(inst.patch.x1); ++x) {
          if (x >= inst.box.x0 && x < inst.box.x1 && y >= inst.box.y0 && y < inst.box.y1) continue;
          const float r = frame.image(y, x, 0), g = frame.image(y, x, 1), b = frame.image(y, x, 2);
          const double hue = rgb_to_hsv(r, g, b).h;
          if (base.r > 0 || base.g > 0 || base.b > 0) REQUIRE(hue_distance(hue, target_hue) < 1e-3);
          // Quantize brightness coarsely; the dim factor is 0.45.
          const float value = std::max({r, g, b});
          levels.insert(static_cast<int>(std::lround(value * 10)));
          ++inspected;
        }
      REQUIRE(inspected > 0);
      if (inst.triplet[1] > 0) REQUIRE(levels.size() >= 2);
      ++patches_checked;
    }
  }
  REQUIRE(patches_checked > 0);
}

TEST_CASE("frame store matches between in-memory rendering and the png pipeline") {
  namespace fs = std::filesystem;
  SynthConfig sc = small_config();
  sc.frames_per_video = 4;
  const SynthScenario scenario(sc);
  Dataset ds = generate_annotations(sc, scenario);

  const fs::path root = fs::temp_directory_path() / "triplab_store_test";
  fs::remove_all(root);
  for (int v = 0; v < sc.num_videos; ++v) {
    const std::string vid = video_name(v);
    fs::create_directories(root / "images" / vid);
    for (int f = 0; f < sc.frames_per_video; ++f) {
      const RenderedFrame frame = render_frame(sc, scenario, vid, f);
      save_png(quantize_image(frame.image), (root / "images" / frame_relpath(vid, f)).string());
    }
  }
  ds.image_root = (root / "images").string();

  const FrameStore mem = FrameStore::from_renderer(sc, scenario, ds);
  const FrameStore disk = FrameStore::from_disk(ds);
  for (const auto& a : ds.annotations)
    REQUIRE(mem.get(a.video_id, a.frame_index) == disk.get(a.video_id, a.frame_index));
  fs::remove_all(root);
}

TEST_CASE("scenario rejects degenerate vocabularies") {
  SynthConfig sc;
  sc.num_instruments = 0;
  REQUIRE_THROWS_AS(SynthScenario(sc), std::invalid_argument);
  sc.num_instruments = 2;
  sc.num_verbs = 1;  // only the null verb
  REQUIRE_THROWS_AS(SynthScenario(sc), std::invalid_argument);
}

TEST_CASE("video names are stable and zero padded") {
  REQUIRE(video_name(0) == "vid01");
  REQUIRE(video_name(9) == "vid10");
  REQUIRE(frame_relpath("vid03", 7) == "vid03/frame_000007.png");
}
