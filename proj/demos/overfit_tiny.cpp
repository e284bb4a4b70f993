// End-to-end miniature: generate a tiny in-memory dataset, overfit the full
// model on it, and report component APs. Finishes in well under a minute.

#include <iostream>

#include "triplab/train.hpp"

int main() {
  using namespace triplab;

  SynthConfig sc;
  sc.num_instruments = 2;
  sc.num_verbs = 3;
  sc.num_targets = 3;
  sc.verbs_per_instrument = 2;
  sc.targets_per_instrument = 2;
  sc.idle_prob = 0.0;
  sc.background_prob = 0.0;
  sc.num_videos = 2;
  sc.frames_per_video = 16;
  sc.seed = 11;

  const SynthScenario scenario(sc);
  const Vocabulary vocab = Vocabulary::synthetic(sc.num_instruments, sc.num_verbs, sc.num_targets);
  Dataset ds = generate_annotations(sc, scenario);
  const FrameStore store = FrameStore::from_renderer(sc, scenario, ds);
  const TripletCatalog catalog = catalog_from_dataset(ds, vocab);
  std::cout << "frames: " << ds.annotations.size() << "  classes: " << catalog.num_classes() << "\n";

  ModelConfig mc;
  mc.image_h = sc.image_h;
  mc.image_w = sc.image_w;

  TrainConfig tc;
  tc.epochs = 30;
  tc.warmup_epochs = 2;
  tc.batch_size = 8;
  tc.augment.enabled = false;
  tc.seed = 3;

  const LabelWeights weights = compute_label_weights(ds, vocab, catalog);
  TripnetTrainer trainer(mc, catalog, weights, true);
  auto params = init_tripnet<float>(mc, catalog.m(), catalog.n(), catalog.p(), tc.seed);
  const auto log = train_model(trainer, params, ds, store, catalog, tc);
  for (std::size_t e = 0; e < log.size(); e += 5)
    std::cout << "epoch " << log[e].epoch << " loss " << log[e].loss.total() << "\n";

  const EvalSummary s = evaluate_model(trainer, params, ds, store, catalog);
  const auto show = [](const char* name, const ApReport& r) {
    std::cout << name << ": " << (r.mean ? std::to_string(*r.mean) : "undefined") << "\n";
  };
  show("AP_ivt", s.ivt);
  show("AP_iv", s.iv);
  show("AP_it", s.it);
  show("AP_i", s.i);
  return 0;
}
