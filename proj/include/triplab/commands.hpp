#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "triplab/annotations.hpp"
#include "triplab/checkpoint.hpp"
#include "triplab/config.hpp"
#include "triplab/manifest.hpp"
#include "triplab/overlay.hpp"
#include "triplab/synthgen.hpp"
#include "triplab/train.hpp"
#include "triplab/version.hpp"

namespace triplab {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitBadInput = 3;
inline constexpr int kExitRuntime = 4;

/// Flags shared by all subcommands. `data_dir` (usually from TRIPLAB_DATA_DIR)
/// anchors relative dataset/run paths.
struct CommandOptions {
  std::optional<std::uint64_t> seed;
  bool force = false;
  bool overlays = false;
  std::string data_dir;
};

inline std::string resolve_path(const std::string& path, const CommandOptions& opt) {
  if (path.empty() || path.front() == '/' || opt.data_dir.empty()) return path;
  return opt.data_dir + "/" + path;
}

namespace detail {

inline std::string format_ap(const std::optional<double>& ap) {
  if (!ap) return "undefined";
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(4) << *ap;
  return ss.str();
}

inline nlohmann::json ap_report_json(const ApReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& ap : r.per_class) {
    if (ap)
      per.push_back(*ap);
    else
      per.push_back(nullptr);
  }
  nlohmann::json j;
  j["per_class"] = per;
  j["defined_classes"] = r.defined_classes;
  if (r.mean)
    j["mean"] = *r.mean;
  else
    j["mean"] = nullptr;
  return j;
}

inline nlohmann::json summary_json(const EvalSummary& s) {
  nlohmann::json j;
  j["frames"] = s.frames;
  j["ap_ivt"] = ap_report_json(s.ivt);
  j["ap_iv"] = ap_report_json(s.iv);
  j["ap_it"] = ap_report_json(s.it);
  j["ap_i"] = ap_report_json(s.i);
  return j;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

inline const std::set<std::string>& generate_keys() {
  static const std::set<std::string> keys = {
      "dataset",       "vocab",           "image_h",
      "image_w",       "instruments",     "verbs",
      "targets",       "videos",          "frames_per_video",
      "verbs_per_instrument",             "targets_per_instrument",
      "idle_prob",     "background_prob", "second_prob",
      "third_prob",    "max_instances",   "decoy_patch_prob",
      "max_decoy_patches",                "decoy_glyph_prob",
      "max_decoy_glyphs",                 "glyph_min_frac",
      "glyph_max_frac", "seed",           "split_train",
      "split_val",     "split_test",      "preview_frames"};
  return keys;
}

inline SynthConfig synth_config_from(const KeyValueConfig& cfg, const CommandOptions& opt) {
  SynthConfig sc;
  sc.image_h = static_cast<int>(cfg.get_int("image_h", sc.image_h));
  sc.image_w = static_cast<int>(cfg.get_int("image_w", sc.image_w));
  sc.num_instruments = static_cast<int>(cfg.get_int("instruments", sc.num_instruments));
  sc.num_verbs = static_cast<int>(cfg.get_int("verbs", sc.num_verbs));
  sc.num_targets = static_cast<int>(cfg.get_int("targets", sc.num_targets));
  sc.num_videos = static_cast<int>(cfg.get_int("videos", sc.num_videos));
  sc.frames_per_video = static_cast<int>(cfg.get_int("frames_per_video", sc.frames_per_video));
  sc.verbs_per_instrument = static_cast<int>(cfg.get_int("verbs_per_instrument", sc.verbs_per_instrument));
  sc.targets_per_instrument =
      static_cast<int>(cfg.get_int("targets_per_instrument", sc.targets_per_instrument));
  sc.idle_prob = cfg.get_double("idle_prob", sc.idle_prob);
  sc.background_prob = cfg.get_double("background_prob", sc.background_prob);
  sc.second_prob = cfg.get_double("second_prob", sc.second_prob);
  sc.third_prob = cfg.get_double("third_prob", sc.third_prob);
  sc.max_instances = static_cast<int>(cfg.get_int("max_instances", sc.max_instances));
  sc.decoy_patch_prob = cfg.get_double("decoy_patch_prob", sc.decoy_patch_prob);
  sc.max_decoy_patches = static_cast<int>(cfg.get_int("max_decoy_patches", sc.max_decoy_patches));
  sc.decoy_glyph_prob = cfg.get_double("decoy_glyph_prob", sc.decoy_glyph_prob);
  sc.max_decoy_glyphs = static_cast<int>(cfg.get_int("max_decoy_glyphs", sc.max_decoy_glyphs));
  sc.glyph_min_frac = cfg.get_double("glyph_min_frac", sc.glyph_min_frac);
  sc.glyph_max_frac = cfg.get_double("glyph_max_frac", sc.glyph_max_frac);
  sc.seed = opt.seed ? *opt.seed : static_cast<std::uint64_t>(cfg.get_int("seed", 1));
  return sc;
}

inline Vocabulary vocabulary_from(const KeyValueConfig& cfg, const SynthConfig& sc) {
  const std::string mode = cfg.get_string("vocab", "synthetic");
  if (mode == "canonical") return Vocabulary::canonical();
  if (mode == "synthetic") return Vocabulary::synthetic(sc.num_instruments, sc.num_verbs, sc.num_targets);
  throw ConfigError("config key 'vocab': expected 'synthetic' or 'canonical', got '" + mode + "'");
}

/// Render a dataset to disk: images, annotations, ground-truth boxes, vocab
/// and a manifest with a whole-video train/val/test split.
inline int run_generate(const KeyValueConfig& cfg, const CommandOptions& opt, std::ostream& out) {
  cfg.validate_keys(generate_keys());
  SynthConfig sc = synth_config_from(cfg, opt);
  if (cfg.get_string("vocab", "synthetic") == "canonical") {
    sc.num_instruments = 6;
    sc.num_verbs = 8;
    sc.num_targets = 19;
  }
  const Vocabulary vocab = vocabulary_from(cfg, sc);

  const double f_train = cfg.get_double("split_train", 0.6);
  const double f_val = cfg.get_double("split_val", 0.2);
  const double f_test = cfg.get_double("split_test", 0.2);

  const std::string root = resolve_path(cfg.require_string("dataset"), opt);
  namespace fs = std::filesystem;
  if (fs::exists(root + "/manifest.json") && !opt.force)
    throw ConfigError("dataset already exists at " + root + " (use --force to overwrite)");

  const SynthScenario scenario(sc);
  Dataset ds = generate_annotations(sc, scenario);
  ds.image_root = root + "/images";

  fs::create_directories(root + "/images");
  BoxTable boxes;
  for (int v = 0; v < sc.num_videos; ++v) {
    const std::string vid = video_name(v);
    fs::create_directories(root + "/images/" + vid);
    for (int f = 0; f < sc.frames_per_video; ++f) {
      RenderedFrame frame = render_frame(sc, scenario, vid, f);
      save_png(quantize_image(frame.image), root + "/images/" + frame_relpath(vid, f));
      auto& slot = boxes[{vid, f}];
      for (const RenderedInstance& inst : frame.instances)
        slot.push_back(InstrumentBox{inst.triplet[0], inst.box, 1.0});
      if (slot.empty()) boxes.erase({vid, f});
    }
  }

  vocab.save(root + "/vocab.txt");
  save_annotations(ds, root + "/annotations.csv", vocab);
  save_boxes(boxes, root + "/boxes.csv");

  KeyValueConfig resolved = cfg;
  resolved.set("seed", std::to_string(sc.seed));

  DatasetManifest manifest;
  manifest.image_h = sc.image_h;
  manifest.image_w = sc.image_w;
  manifest.seed = sc.seed;
  manifest.config_hash = hash_hex(fnv1a64(resolved.canonical_text()));
  manifest.vocab_hash = vocab.hash_hex_digest();
  manifest.split_videos = split_by_video(ds.video_ids(), {f_train, f_val, f_test}, sc.seed);
  manifest.total_frames = static_cast<std::int64_t>(ds.annotations.size());
  manifest.triplet_instances = ds.triplet_instance_count();
  save_manifest(manifest, root + "/manifest.json");

  if (opt.overlays) {
    fs::create_directories(root + "/previews");
    const int preview = static_cast<int>(cfg.get_int("preview_frames", 8));
    for (int f = 0; f < std::min(preview, sc.frames_per_video); ++f) {
      const std::string vid = video_name(0);
      RenderedFrame frame = render_frame(sc, scenario, vid, f);
      std::vector<InstrumentBox> gt;
      std::vector<ScoredTriplet> decoded;
      std::set<Triplet> truth;
      for (const RenderedInstance& inst : frame.instances) {
        gt.push_back(InstrumentBox{inst.triplet[0], inst.box, 1.0});
        decoded.push_back(ScoredTriplet{inst.triplet, 1.0});
        truth.insert(inst.triplet);
      }
      const ImageU8 img = render_overlay(frame.image, {}, gt, decoded, truth, vocab);
      save_png(img, root + "/previews/" + vid + "_" + std::to_string(f) + ".png");
    }
  }

  out << "generated dataset at " << root << "\n"
      << "  videos: " << sc.num_videos << "  frames: " << manifest.total_frames
      << "  triplet instances: " << manifest.triplet_instances << "\n"
      << "  vocabulary: " << vocab.num_instruments() << " instruments, " << vocab.num_verbs()
      << " verbs, " << vocab.num_targets() << " targets\n"
      << "  split: " << manifest.split_videos[0].size() << " train / " << manifest.split_videos[1].size()
      << " val / " << manifest.split_videos[2].size() << " test videos\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// dataset loading shared by stats / train / evaluate / ablate
// ---------------------------------------------------------------------------

struct LoadedDataset {
  std::string root;
  DatasetManifest manifest;
  Vocabulary vocab;
  Dataset all;

  Dataset split(Split which) const {
    if (which == Split::unspecified) return all;
    const auto& vids = manifest.split_videos[which == Split::train ? 0 : which == Split::val ? 1 : 2];
    return select_videos(all, vids, which);
  }
};

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "all") return Split::unspecified;
  throw ConfigError("bad split '" + s + "' (expected train|val|test|all)");
}

inline LoadedDataset load_dataset_dir(const std::string& root) {
  LoadedDataset ld;
  ld.root = root;
  ld.manifest = load_manifest(root + "/manifest.json");
  ld.vocab = Vocabulary::load(root + "/" + ld.manifest.vocab_file);
  ld.all = load_annotations(root + "/" + ld.manifest.annotations_file, ld.vocab);
  ld.all.image_root = root + "/" + ld.manifest.images_dir;
  return ld;
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

inline const std::set<std::string>& stats_keys() {
  static const std::set<std::string> keys = {"dataset", "annotations", "vocab", "split", "top", "out"};
  return keys;
}

/// Summarize an annotation set: per-axis frequency tables, class counts and
/// validity-mask density. Works on a dataset directory or bare CSV + vocab.
inline int run_stats(const KeyValueConfig& cfg, const CommandOptions& opt, std::ostream& out) {
  cfg.validate_keys(stats_keys());
  Vocabulary vocab;
  Dataset ds;
  if (cfg.has("dataset")) {
    LoadedDataset ld = load_dataset_dir(resolve_path(cfg.require_string("dataset"), opt));
    vocab = ld.vocab;
    ds = ld.split(parse_split(cfg.get_string("split", "all")));
  } else {
    vocab = Vocabulary::load(resolve_path(cfg.require_string("vocab"), opt));
    ds = load_annotations(resolve_path(cfg.require_string("annotations"), opt), vocab);
  }

  const std::int64_t instances = ds.triplet_instance_count();
  std::int64_t background = 0;
  for (const auto& a : ds.annotations) background += a.triplets.empty();

  out << "frames: " << ds.annotations.size() << " (" << background << " background)\n";
  out << "videos: " << ds.video_ids().size() << "\n";
  out << "triplet instances: " << instances << "\n";

  const auto print_axis = [&](Axis axis, const std::vector<std::string>& names) {
    const auto counts = axis_counts(ds, axis, vocab);
    out << axis_name(axis) << " counts:\n";
    for (std::size_t i = 0; i < names.size(); ++i) {
      std::ostringstream pct;
      pct << std::fixed << std::setprecision(2)
          << (instances > 0 ? 100.0 * static_cast<double>(counts[i]) / static_cast<double>(instances) : 0.0);
      out << "  " << names[i] << ": " << counts[i] << " (" << pct.str() << "%)\n";
    }
  };
  print_axis(Axis::instrument, vocab.instruments());
  print_axis(Axis::verb, vocab.verbs());
  print_axis(Axis::target, vocab.targets());

  nlohmann::json j;
  j["frames"] = ds.annotations.size();
  j["background_frames"] = background;
  j["triplet_instances"] = instances;
  j["instrument_counts"] = axis_counts(ds, Axis::instrument, vocab);
  j["verb_counts"] = axis_counts(ds, Axis::verb, vocab);
  j["target_counts"] = axis_counts(ds, Axis::target, vocab);

  if (instances > 0) {
    const TripletCatalog catalog = catalog_from_dataset(ds, vocab);
    const ValidityMask mask = catalog.validity_mask();
    std::ostringstream density;
    density << std::fixed << std::setprecision(4)
            << static_cast<double>(mask.count_true()) / static_cast<double>(mask.cell_count());
    out << "triplet classes: " << catalog.num_classes() << " of " << mask.cell_count()
        << " grid cells (density " << density.str() << ")\n";
    j["triplet_classes"] = catalog.num_classes();
    j["grid_cells"] = mask.cell_count();

    std::map<Triplet, std::int64_t> freq;
    for (const auto& a : ds.annotations)
      for (const Triplet& t : a.triplets) ++freq[t];
    std::vector<std::pair<Triplet, std::int64_t>> top(freq.begin(), freq.end());
    std::stable_sort(top.begin(), top.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    const int top_n = static_cast<int>(cfg.get_int("top", 10));
    out << "top triplets:\n";
    for (std::size_t i = 0; i < top.size() && i < static_cast<std::size_t>(top_n); ++i)
      out << "  " << triplet_label(top[i].first, vocab) << ": " << top[i].second << "\n";
  }

  const std::string out_path = cfg.get_string("out", "");
  if (!out_path.empty()) write_file_bytes(resolve_path(out_path, opt), j.dump(2) + "\n");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

inline const std::set<std::string>& train_keys() {
  static const std::set<std::string> keys = {
      "dataset",        "model",          "run_dir",        "split",         "epochs",
      "batch_size",     "warmup_epochs",  "lr_subnets",     "lr_backbone",   "lr_space",
      "momentum",       "lr_decay_rate",  "lr_decay_steps", "weight_decay",  "class_weighting",
      "threads",        "seed",           "backbone_c1",    "backbone_c2",   "branch_channels",
      "use_cag",        "cag_backprop",   "space_trainable", "space_mode",   "augment",
      "rotate_prob",    "max_rotate_deg", "flip_prob",      "mask_prob",     "max_mask_area",
      "clip_norm",      "divergence_threshold"};
  return keys;
}

inline TrainConfig train_config_from(const KeyValueConfig& cfg, const CommandOptions& opt) {
  TrainConfig tc;
  tc.epochs = static_cast<int>(cfg.get_int("epochs", tc.epochs));
  tc.batch_size = static_cast<int>(cfg.get_int("batch_size", tc.batch_size));
  tc.warmup_epochs = static_cast<int>(cfg.get_int("warmup_epochs", tc.warmup_epochs));
  tc.lr_subnets = cfg.get_double("lr_subnets", tc.lr_subnets);
  tc.lr_backbone = cfg.get_double("lr_backbone", tc.lr_backbone);
  tc.lr_space = cfg.get_double("lr_space", tc.lr_space);
  tc.momentum = cfg.get_double("momentum", tc.momentum);
  tc.lr_decay_rate = cfg.get_double("lr_decay_rate", tc.lr_decay_rate);
  tc.lr_decay_steps = static_cast<int>(cfg.get_int("lr_decay_steps", tc.lr_decay_steps));
  tc.weight_decay = cfg.get_double("weight_decay", tc.weight_decay);
  tc.class_weighting = cfg.get_bool("class_weighting", tc.class_weighting);
  tc.threads = static_cast<int>(cfg.get_int("threads", tc.threads));
  tc.clip_norm = cfg.get_double("clip_norm", tc.clip_norm);
  tc.divergence_threshold = cfg.get_double("divergence_threshold", tc.divergence_threshold);
  tc.augment.enabled = cfg.get_bool("augment", tc.augment.enabled);
  tc.augment.rotate_prob = cfg.get_double("rotate_prob", tc.augment.rotate_prob);
  tc.augment.max_rotate_deg = cfg.get_double("max_rotate_deg", tc.augment.max_rotate_deg);
  tc.augment.flip_prob = cfg.get_double("flip_prob", tc.augment.flip_prob);
  tc.augment.mask_prob = cfg.get_double("mask_prob", tc.augment.mask_prob);
  tc.augment.max_mask_area = cfg.get_double("max_mask_area", tc.augment.max_mask_area);
  tc.seed = opt.seed ? *opt.seed : static_cast<std::uint64_t>(cfg.get_int("seed", 1));
  return tc;
}

inline ModelConfig model_config_from(const KeyValueConfig& cfg, int image_h, int image_w) {
  ModelConfig mc;
  mc.image_h = image_h;
  mc.image_w = image_w;
  mc.backbone_c1 = static_cast<int>(cfg.get_int("backbone_c1", mc.backbone_c1));
  mc.backbone_c2 = static_cast<int>(cfg.get_int("backbone_c2", mc.backbone_c2));
  mc.branch_channels = static_cast<int>(cfg.get_int("branch_channels", mc.branch_channels));
  mc.use_cag = cfg.get_bool("use_cag", mc.use_cag);
  mc.cag_backprop = cfg.get_bool("cag_backprop", mc.cag_backprop);
  mc.space_trainable = cfg.get_bool("space_trainable", mc.space_trainable);
  const std::string mode = cfg.get_string("space_mode", "vector");
  if (mode == "vector")
    mc.space_mode = SpaceMode::vector;
  else if (mode == "matrix")
    mc.space_mode = SpaceMode::matrix;
  else
    throw ConfigError("config key 'space_mode': expected 'vector' or 'matrix', got '" + mode + "'");
  return mc;
}

inline nlohmann::json model_config_json(const ModelConfig& mc) {
  nlohmann::json j;
  j["image_h"] = mc.image_h;
  j["image_w"] = mc.image_w;
  j["backbone_c1"] = mc.backbone_c1;
  j["backbone_c2"] = mc.backbone_c2;
  j["branch_channels"] = mc.branch_channels;
  j["use_cag"] = mc.use_cag;
  j["cag_backprop"] = mc.cag_backprop;
  j["space_trainable"] = mc.space_trainable;
  j["space_mode"] = mc.space_mode == SpaceMode::vector ? "vector" : "matrix";
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig mc;
  mc.image_h = j.at("image_h").get<int>();
  mc.image_w = j.at("image_w").get<int>();
  mc.backbone_c1 = j.at("backbone_c1").get<int>();
  mc.backbone_c2 = j.at("backbone_c2").get<int>();
  mc.branch_channels = j.at("branch_channels").get<int>();
  mc.use_cag = j.at("use_cag").get<bool>();
  mc.cag_backprop = j.at("cag_backprop").get<bool>();
  mc.space_trainable = j.at("space_trainable").get<bool>();
  mc.space_mode = j.at("space_mode").get<std::string>() == "matrix" ? SpaceMode::matrix : SpaceMode::vector;
  return mc;
}

struct TrainedArtifacts {
  Checkpoint checkpoint;
  std::vector<EpochStats> log;
  TripletCatalog catalog;
};

/// Train the requested model on a dataset's train split and package the
/// result as a checkpoint (metadata carries everything evaluation needs).
inline TrainedArtifacts train_from_dataset(ModelKind kind, const ModelConfig& mc, const TrainConfig& tc,
                                           const LoadedDataset& ld, const FrameStore& store,
                                           const Dataset& train_split, std::ostream& out) {
  const TripletCatalog catalog = catalog_from_dataset(train_split, ld.vocab);
  const LabelWeights weights = compute_label_weights(train_split, ld.vocab, catalog);

  std::vector<EpochStats> log;
  Checkpoint ckpt;

  const auto log_epochs = [&out](const std::vector<EpochStats>& entries) {
    for (const EpochStats& e : entries) {
      out << "epoch " << e.epoch << (e.warmup ? " [warmup]" : "") << " loss " << std::fixed
          << std::setprecision(5) << e.loss.total() << " (i " << e.loss.i << ", v " << e.loss.v << ", t "
          << e.loss.t << ", ivt " << e.loss.ivt << ", c " << e.loss.c << ")\n";
      out.unsetf(std::ios::fixed);
    }
  };

  if (kind == ModelKind::tripnet) {
    TripnetTrainer trainer(mc, catalog, weights, tc.class_weighting);
    auto params = init_tripnet<float>(mc, catalog.m(), catalog.n(), catalog.p(), tc.seed);
    log = train_model(trainer, params, train_split, store, catalog, tc);
    pack_params(params, ckpt);
  } else if (kind == ModelKind::mtl) {
    MtlTrainer trainer(mc, catalog, weights, tc.class_weighting);
    auto params = init_mtl<float>(mc, catalog.m(), catalog.n(), catalog.p(), catalog.num_classes(), tc.seed);
    log = train_model(trainer, params, train_split, store, catalog, tc);
    pack_params(params, ckpt);
  } else {
    NaiveTrainer trainer(mc, catalog, weights, tc.class_weighting);
    auto params = init_naive<float>(mc, catalog.num_classes(), tc.seed);
    log = train_model(trainer, params, train_split, store, catalog, tc);
    pack_params(params, ckpt);
  }
  log_epochs(log);

  nlohmann::json classes = nlohmann::json::array();
  for (const TripletClass& c : catalog.classes()) classes.push_back({c.i, c.v, c.t});
  ckpt.meta["format"] = "model-checkpoint";
  ckpt.meta["version"] = kVersion;
  ckpt.meta["model"] = model_kind_name(kind);
  ckpt.meta["model_config"] = model_config_json(mc);
  ckpt.meta["vocab"] = ld.vocab.to_text();
  ckpt.meta["classes"] = classes;
  ckpt.meta["seed"] = tc.seed;
  ckpt.meta["epochs"] = tc.epochs;
  ckpt.meta["final_loss"] = log.empty() ? 0.0 : log.back().loss.total();

  return TrainedArtifacts{std::move(ckpt), std::move(log), catalog};
}

inline std::string train_log_jsonl(const std::vector<EpochStats>& log) {
  std::string out;
  for (const EpochStats& e : log) {
    nlohmann::json j;
    j["epoch"] = e.epoch;
    j["warmup"] = e.warmup;
    j["lr_scale"] = e.lr_scale;
    j["loss_total"] = e.loss.total();
    j["loss_i"] = e.loss.i;
    j["loss_v"] = e.loss.v;
    j["loss_t"] = e.loss.t;
    j["loss_ivt"] = e.loss.ivt;
    j["loss_c"] = e.loss.c;
    out += j.dump() + "\n";
  }
  return out;
}

inline int run_train(const KeyValueConfig& cfg, const CommandOptions& opt, std::ostream& out) {
  cfg.validate_keys(train_keys());
  const auto t0 = std::chrono::steady_clock::now();

  const LoadedDataset ld = load_dataset_dir(resolve_path(cfg.require_string("dataset"), opt));
  const ModelKind kind = parse_model_kind(cfg.get_string("model", "tripnet"));
  const TrainConfig tc = train_config_from(cfg, opt);
  const ModelConfig mc = model_config_from(cfg, ld.manifest.image_h, ld.manifest.image_w);
  const Dataset train_split = ld.split(parse_split(cfg.get_string("split", "train")));
  if (train_split.annotations.empty()) throw ConfigError("selected training split is empty");

  const std::string run_dir = resolve_path(cfg.require_string("run_dir"), opt);
  namespace fs = std::filesystem;
  if (fs::exists(run_dir + "/checkpoint.bin") && !opt.force)
    throw ConfigError("run directory already has a checkpoint: " + run_dir + " (use --force)");
  fs::create_directories(run_dir);

  out << "training " << model_kind_name(kind) << " on " << train_split.annotations.size() << " frames ("
      << train_split.video_ids().size() << " videos)\n";

  const FrameStore store = FrameStore::from_disk(train_split);
  TrainedArtifacts art = train_from_dataset(kind, mc, tc, ld, store, train_split, out);

  save_checkpoint(art.checkpoint, run_dir + "/checkpoint.bin");
  write_file_bytes(run_dir + "/train_log.jsonl", train_log_jsonl(art.log));

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream timing;
  timing << std::fixed << std::setprecision(3) << "wall_seconds " << wall << "\n";
  write_file_bytes(run_dir + "/timing.txt", timing.str());

  out << "saved checkpoint to " << run_dir << "/checkpoint.bin\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

inline const std::set<std::string>& evaluate_keys() {
  static const std::set<std::string> keys = {"dataset",   "split",          "checkpoint",
                                             "threshold", "out",            "overlay_frames",
                                             "cam_threshold", "prob_threshold"};
  return keys;
}

struct LoadedModel {
  ModelKind kind = ModelKind::tripnet;
  ModelConfig mc;
  Vocabulary vocab;
  TripletCatalog catalog;
  TripnetParams<float> tripnet;
  MtlParams<float> mtl;
  NaiveParams<float> naive;
};

inline LoadedModel load_model(const Checkpoint& ckpt) {
  LoadedModel m;
  try {
    if (ckpt.meta.at("format").get<std::string>() != "model-checkpoint")
      throw CheckpointError("not a model checkpoint");
    m.kind = parse_model_kind(ckpt.meta.at("model").get<std::string>());
    m.mc = model_config_from_json(ckpt.meta.at("model_config"));
    m.vocab = Vocabulary::from_text(ckpt.meta.at("vocab").get<std::string>());
    std::set<Triplet> classes;
    for (const auto& c : ckpt.meta.at("classes"))
      classes.insert(Triplet{c.at(0).get<int>(), c.at(1).get<int>(), c.at(2).get<int>()});
    m.catalog = TripletCatalog(m.vocab, classes);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint metadata: ") + e.what());
  }
  if (m.kind == ModelKind::tripnet) {
    m.tripnet = init_tripnet<float>(m.mc, m.catalog.m(), m.catalog.n(), m.catalog.p(), 0);
    unpack_params(ckpt, m.tripnet);
  } else if (m.kind == ModelKind::mtl) {
    m.mtl = init_mtl<float>(m.mc, m.catalog.m(), m.catalog.n(), m.catalog.p(), m.catalog.num_classes(), 0);
    unpack_params(ckpt, m.mtl);
  } else {
    m.naive = init_naive<float>(m.mc, m.catalog.num_classes(), 0);
    unpack_params(ckpt, m.naive);
  }
  return m;
}

struct EvaluateOutcome {
  EvalSummary summary;
  std::optional<LocalizationResult> localization;
};

/// Shared evaluation pass. For the full model this also produces CAM-derived
/// instrument boxes, scored against ground truth when a box table is given.
inline EvaluateOutcome evaluate_loaded(LoadedModel& m, const Dataset& ds, const FrameStore& store,
                                       const BoxTable* boxes, double prob_threshold, double cam_threshold,
                                       double decode_threshold, int overlay_frames,
                                       const std::string& overlay_dir) {
  EvaluateOutcome outcome;
  Evaluator ev(m.catalog);
  LocalizationResult loc;
  bool any_boxes = false;

  const LabelWeights no_weights;
  TripnetTrainer tripnet_tr(m.mc, m.catalog, no_weights, false);
  MtlTrainer mtl_tr(m.mc, m.catalog, no_weights, false);
  NaiveTrainer naive_tr(m.mc, m.catalog, no_weights, false);
  TripnetCache<float> tcache;
  MtlCache<float> mcache;
  NaiveCache<float> ncache;

  int overlays_written = 0;
  if (!overlay_dir.empty()) std::filesystem::create_directories(overlay_dir);

  for (const auto& a : ds.annotations) {
    const Image image = store.get(a.video_id, a.frame_index);
    Tensor<float> probs;
    std::vector<InstrumentBox> pred_boxes;
    if (m.kind == ModelKind::tripnet) {
      probs = tripnet_tr.probs(m.tripnet, image, tcache);
      std::vector<double> inst_probs(static_cast<std::size_t>(m.catalog.m()));
      for (int k = 0; k < m.catalog.m(); ++k)
        inst_probs[static_cast<std::size_t>(k)] = sigmoid(tcache.instrument.logits(k));
      pred_boxes = cam_to_boxes(tcache.instrument.cam, inst_probs, prob_threshold, cam_threshold,
                                m.mc.image_h, m.mc.image_w);
      if (boxes) {
        auto it = boxes->find({a.video_id, a.frame_index});
        static const std::vector<InstrumentBox> empty;
        loc += match_instrument_boxes(pred_boxes, it == boxes->end() ? empty : it->second, 0.5);
        any_boxes = true;
      }
    } else if (m.kind == ModelKind::mtl) {
      probs = mtl_tr.probs(m.mtl, image, mcache);
    } else {
      probs = naive_tr.probs(m.naive, image, ncache);
    }
    ev.add_frame(probs, a.triplets);

    if (!overlay_dir.empty() && overlays_written < overlay_frames) {
      std::vector<InstrumentBox> gt;
      if (boxes) {
        auto it = boxes->find({a.video_id, a.frame_index});
        if (it != boxes->end()) gt = it->second;
      }
      const auto decoded = decode_triplets(probs, m.catalog, decode_threshold);
      const ImageU8 img = render_overlay(image, pred_boxes, gt, decoded, a.triplets, m.vocab);
      save_png(img, overlay_dir + "/" + a.video_id + "_" + std::to_string(a.frame_index) + ".png");
      ++overlays_written;
    }
  }
  outcome.summary = summarize(ev);
  if (any_boxes) outcome.localization = loc;
  return outcome;
}

inline void print_summary(const EvalSummary& s, std::ostream& out) {
  out << "frames evaluated: " << s.frames << "\n";
  out << "AP_ivt: " << detail::format_ap(s.ivt.mean) << " over " << s.ivt.defined_classes << " classes\n";
  out << "AP_iv:  " << detail::format_ap(s.iv.mean) << " over " << s.iv.defined_classes << " pairs\n";
  out << "AP_it:  " << detail::format_ap(s.it.mean) << " over " << s.it.defined_classes << " pairs\n";
  out << "AP_i:   " << detail::format_ap(s.i.mean) << " over " << s.i.defined_classes << " instruments\n";
}

inline int run_evaluate(const KeyValueConfig& cfg, const CommandOptions& opt, std::ostream& out) {
  cfg.validate_keys(evaluate_keys());
  const LoadedDataset ld = load_dataset_dir(resolve_path(cfg.require_string("dataset"), opt));
  const Checkpoint ckpt = load_checkpoint(resolve_path(cfg.require_string("checkpoint"), opt));
  LoadedModel model = load_model(ckpt);
  if (!(model.vocab == ld.vocab))
    throw CheckpointError("checkpoint vocabulary does not match the dataset vocabulary");
  if (model.mc.image_h != ld.manifest.image_h || model.mc.image_w != ld.manifest.image_w)
    throw CheckpointError("checkpoint image size does not match the dataset");

  const Dataset eval_split = ld.split(parse_split(cfg.get_string("split", "test")));
  if (eval_split.annotations.empty()) throw ConfigError("selected evaluation split is empty");
  const FrameStore store = FrameStore::from_disk(eval_split);

  BoxTable boxes;
  bool have_boxes = false;
  const std::string boxes_path = ld.root + "/" + ld.manifest.boxes_file;
  if (std::filesystem::exists(boxes_path)) {
    boxes = load_boxes(boxes_path);
    have_boxes = true;
  }

  const double threshold = cfg.get_double("threshold", 0.5);
  const double cam_threshold = cfg.get_double("cam_threshold", 0.3);
  const double prob_threshold = cfg.get_double("prob_threshold", 0.5);
  const int overlay_frames = static_cast<int>(cfg.get_int("overlay_frames", 12));
  std::string overlay_dir;
  if (opt.overlays) {
    const std::filesystem::path ckpt_path(resolve_path(cfg.require_string("checkpoint"), opt));
    overlay_dir = (ckpt_path.parent_path() / "overlays").string();
  }

  EvaluateOutcome outcome =
      evaluate_loaded(model, eval_split, store, have_boxes ? &boxes : nullptr, prob_threshold,
                      cam_threshold, threshold, overlay_frames, overlay_dir);

  out << "model: " << model_kind_name(model.kind) << "\n";
  print_summary(outcome.summary, out);
  if (outcome.localization) {
    std::ostringstream frac;
    frac << std::fixed << std::setprecision(4) << outcome.localization->fraction();
    out << "localization@0.5: " << frac.str() << " (" << outcome.localization->matched << "/"
        << outcome.localization->total << ")\n";
  }

  const std::string out_path = cfg.get_string("out", "");
  if (!out_path.empty()) {
    nlohmann::json j = detail::summary_json(outcome.summary);
    j["model"] = model_kind_name(model.kind);
    if (outcome.localization) {
      j["localization"] = {{"matched", outcome.localization->matched},
                           {"total", outcome.localization->total},
                           {"fraction", outcome.localization->fraction()}};
    }
    write_file_bytes(resolve_path(out_path, opt), j.dump(2) + "\n");
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

inline const std::set<std::string>& ablate_keys() {
  static std::set<std::string> keys = [] {
    std::set<std::string> k = train_keys();
    k.erase("model");
    k.insert("runs");
    k.insert("eval_split");
    return k;
  }();
  return keys;
}

struct AblationSpec {
  std::string name;
  ModelKind kind;
  bool use_cag = true;
  bool space_trainable = true;
};

inline AblationSpec parse_ablation_run(const std::string& name) {
  if (name == "naive") return {name, ModelKind::naive, true, true};
  if (name == "mtl") return {name, ModelKind::mtl, true, true};
  if (name == "tripnet") return {name, ModelKind::tripnet, true, true};
  if (name == "tripnet_nocag") return {name, ModelKind::tripnet, false, true};
  if (name == "tripnet_untrained") return {name, ModelKind::tripnet, true, false};
  throw ConfigError("unknown ablation run '" + name +
                    "' (expected naive|mtl|tripnet|tripnet_nocag|tripnet_untrained)");
}

/// Train and evaluate a ladder of model variants under one configuration and
/// seed, reporting the component APs side by side.
inline int run_ablate(const KeyValueConfig& cfg, const CommandOptions& opt, std::ostream& out) {
  cfg.validate_keys(ablate_keys());
  const LoadedDataset ld = load_dataset_dir(resolve_path(cfg.require_string("dataset"), opt));
  const TrainConfig tc = train_config_from(cfg, opt);
  const Dataset train_split = ld.split(parse_split(cfg.get_string("split", "train")));
  const Dataset eval_split = ld.split(parse_split(cfg.get_string("eval_split", "test")));
  if (train_split.annotations.empty()) throw ConfigError("selected training split is empty");
  if (eval_split.annotations.empty()) throw ConfigError("selected evaluation split is empty");

  const std::string run_dir = resolve_path(cfg.require_string("run_dir"), opt);
  std::filesystem::create_directories(run_dir);

  std::vector<AblationSpec> specs;
  {
    std::istringstream ss(cfg.get_string("runs", "naive,mtl,tripnet,tripnet_nocag,tripnet_untrained"));
    std::string item;
    while (std::getline(ss, item, ',')) {
      const std::string name = trim(item);
      if (!name.empty()) specs.push_back(parse_ablation_run(name));
    }
  }
  if (specs.empty()) throw ConfigError("no ablation runs requested");

  const FrameStore train_store = FrameStore::from_disk(train_split);
  const FrameStore eval_store = FrameStore::from_disk(eval_split);

  nlohmann::json results;
  for (const AblationSpec& spec : specs) {
    out << "=== " << spec.name << " ===\n";
    ModelConfig mc = model_config_from(cfg, ld.manifest.image_h, ld.manifest.image_w);
    mc.use_cag = spec.use_cag && mc.use_cag;
    mc.space_trainable = spec.space_trainable && mc.space_trainable;

    TrainedArtifacts art = train_from_dataset(spec.kind, mc, tc, ld, train_store, train_split, out);
    const std::string spec_dir = run_dir + "/" + spec.name;
    std::filesystem::create_directories(spec_dir);
    save_checkpoint(art.checkpoint, spec_dir + "/checkpoint.bin");
    write_file_bytes(spec_dir + "/train_log.jsonl", train_log_jsonl(art.log));

    LoadedModel model = load_model(art.checkpoint);
    EvaluateOutcome outcome = evaluate_loaded(model, eval_split, eval_store, nullptr, 0.5, 0.3, 0.5, 0, "");
    print_summary(outcome.summary, out);
    results[spec.name] = detail::summary_json(outcome.summary);
  }

  write_file_bytes(run_dir + "/ablation.json", results.dump(2) + "\n");
  out << "wrote " << run_dir << "/ablation.json\n";
  return kExitOk;
}

}  // namespace triplab
