// Renders a few synthetic frames with ground-truth overlays so you can see
// what the generator produces. Usage: render_frames [out_dir] [seed]

#include <filesystem>
#include <iostream>

#include "triplab/overlay.hpp"
#include "triplab/synthgen.hpp"

int main(int argc, char** argv) {
  using namespace triplab;
  const std::string out_dir = argc > 1 ? argv[1] : "demo_frames";
  SynthConfig cfg;
  cfg.seed = argc > 2 ? std::stoull(argv[2]) : 7;
  cfg.num_videos = 1;
  cfg.frames_per_video = 12;

  const SynthScenario scenario(cfg);
  const Vocabulary vocab = Vocabulary::synthetic(cfg.num_instruments, cfg.num_verbs, cfg.num_targets);
  std::filesystem::create_directories(out_dir);

  for (int f = 0; f < cfg.frames_per_video; ++f) {
    const RenderedFrame frame = render_frame(cfg, scenario, video_name(0), f);
    std::vector<InstrumentBox> gt;
    std::vector<ScoredTriplet> decoded;
    std::set<Triplet> truth;
    for (const RenderedInstance& inst : frame.instances) {
      gt.push_back(InstrumentBox{inst.triplet[0], inst.box, 1.0});
      decoded.push_back(ScoredTriplet{inst.triplet, 1.0});
      truth.insert(inst.triplet);
    }
    const std::string path = out_dir + "/frame_" + std::to_string(f) + ".png";
    save_png(render_overlay(frame.image, {}, gt, decoded, truth, vocab), path);
    std::cout << path;
    for (const auto& inst : frame.instances) std::cout << "  [" << triplet_label(inst.triplet, vocab) << "]";
    std::cout << "\n";
  }
  return 0;
}
