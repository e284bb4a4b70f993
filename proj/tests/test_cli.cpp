// Command-layer tests: the generate/stats/train/evaluate/ablate entry points,
// path resolution against a data directory, overwrite guards, determinism of
// produced artifacts, and the exit codes of the installed binary.

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "triplab/commands.hpp"

using namespace triplab;
namespace fs = std::filesystem;

namespace {

/// Fresh scratch directory, removed when the test case ends.
struct ScratchDir {
  fs::path path;

  explicit ScratchDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("triplab_cli_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~ScratchDir() { fs::remove_all(path); }

  std::string str() const { return path.string(); }
};

KeyValueConfig config_from(const std::string& text) { return KeyValueConfig::parse_text(text); }

/// Small dataset: 2 videos x 6 frames of 16x28 images, 2x3x3 vocabulary.
std::string tiny_generate_config(const std::string& dataset_dir) {
  return "dataset = " + dataset_dir +
         "\n"
         "image_h = 16\n"
         "image_w = 28\n"
         "instruments = 2\n"
         "verbs = 3\n"
         "targets = 3\n"
         "verbs_per_instrument = 2\n"
         "targets_per_instrument = 2\n"
         "videos = 2\n"
         "frames_per_video = 6\n"
         "idle_prob = 0.1\n"
         "background_prob = 0.1\n"
         "split_train = 0.5\n"
         "split_val = 0\n"
         "split_test = 0.5\n"
         "seed = 7\n";
}

std::string tiny_train_config(const std::string& dataset_dir, const std::string& run_dir,
                              const std::string& model) {
  return "dataset = " + dataset_dir + "\nrun_dir = " + run_dir + "\nmodel = " + model +
         "\n"
         "epochs = 2\n"
         "warmup_epochs = 1\n"
         "batch_size = 4\n"
         "backbone_c1 = 4\n"
         "backbone_c2 = 6\n"
         "branch_channels = 4\n"
         "lr_subnets = 1e-3\n"
         "augment = false\n"
         "seed = 5\n";
}

}  // namespace

TEST_CASE("generate writes a complete dataset directory and honors --force") {
  ScratchDir tmp("generate");
  const std::string root = tmp.str() + "/data";
  CommandOptions opt;
  std::ostringstream out;

  REQUIRE(run_generate(config_from(tiny_generate_config(root)), opt, out) == kExitOk);
  REQUIRE(out.str().find("generated dataset") != std::string::npos);
  for (const char* name : {"manifest.json", "annotations.csv", "boxes.csv", "vocab.txt"})
    REQUIRE(fs::exists(root + "/" + std::string(name)));
  int pngs = 0;
  for (const auto& e : fs::recursive_directory_iterator(root + "/images"))
    pngs += e.path().extension() == ".png";
  REQUIRE(pngs == 2 * 6);

  const DatasetManifest manifest = load_manifest(root + "/manifest.json");
  REQUIRE(manifest.total_frames == 12);
  REQUIRE(manifest.seed == 7);
  REQUIRE(manifest.split_videos[0].size() + manifest.split_videos[1].size() +
              manifest.split_videos[2].size() ==
          2);

  // A second run must refuse to clobber the directory unless forced.
  std::ostringstream out2;
  REQUIRE_THROWS_AS(run_generate(config_from(tiny_generate_config(root)), opt, out2), ConfigError);
  CommandOptions forced = opt;
  forced.force = true;
  REQUIRE(run_generate(config_from(tiny_generate_config(root)), forced, out2) == kExitOk);
}

TEST_CASE("command seed override takes precedence over the config seed") {
  ScratchDir tmp("seed_override");
  const std::string root = tmp.str() + "/data";
  CommandOptions opt;
  opt.seed = 42;
  std::ostringstream out;
  REQUIRE(run_generate(config_from(tiny_generate_config(root)), opt, out) == kExitOk);
  REQUIRE(load_manifest(root + "/manifest.json").seed == 42);
}

TEST_CASE("relative paths resolve against the data directory") {
  CommandOptions opt;
  opt.data_dir = "/base";
  REQUIRE(resolve_path("runs/demo", opt) == "/base/runs/demo");
  REQUIRE(resolve_path("/abs/path", opt) == "/abs/path");
  REQUIRE(resolve_path("", opt).empty());
  opt.data_dir.clear();
  REQUIRE(resolve_path("runs/demo", opt) == "runs/demo");

  // End to end: generate into a relative dataset path anchored at data_dir.
  ScratchDir tmp("data_dir");
  CommandOptions anchored;
  anchored.data_dir = tmp.str();
  std::ostringstream out;
  REQUIRE(run_generate(config_from(tiny_generate_config("data")), anchored, out) == kExitOk);
  REQUIRE(fs::exists(tmp.path / "data/manifest.json"));
}

TEST_CASE("stats reports frame and axis counts for a generated dataset") {
  ScratchDir tmp("stats");
  const std::string root = tmp.str() + "/data";
  CommandOptions opt;
  std::ostringstream gen;
  REQUIRE(run_generate(config_from(tiny_generate_config(root)), opt, gen) == kExitOk);

  std::ostringstream out;
  const std::string json_path = tmp.str() + "/stats.json";
  REQUIRE(run_stats(config_from("dataset = " + root + "\nout = " + json_path + "\n"), opt, out) ==
          kExitOk);
  REQUIRE(out.str().find("frames: 12") != std::string::npos);
  REQUIRE(out.str().find("instrument counts:") != std::string::npos);

  const nlohmann::json j = nlohmann::json::parse(read_file_bytes(json_path));
  REQUIRE(j.at("frames").get<int>() == 12);
  std::int64_t total = 0;
  for (const auto& c : j.at("instrument_counts")) total += c.get<std::int64_t>();
  REQUIRE(total == j.at("triplet_instances").get<std::int64_t>());

  // Unknown keys fail loudly instead of being silently ignored.
  REQUIRE_THROWS_AS(run_stats(config_from("dataset = " + root + "\ntops = 3\n"), opt, out), ConfigError);
  // Split selection narrows the frame count.
  std::ostringstream train_out;
  REQUIRE(run_stats(config_from("dataset = " + root + "\nsplit = train\n"), opt, train_out) == kExitOk);
  REQUIRE(train_out.str().find("frames: 6") != std::string::npos);
}

TEST_CASE("train writes checkpoint artifacts and evaluate scores them") {
  ScratchDir tmp("train_eval");
  const std::string root = tmp.str() + "/data";
  CommandOptions opt;
  std::ostringstream log;
  REQUIRE(run_generate(config_from(tiny_generate_config(root)), opt, log) == kExitOk);

  const std::string run_dir = tmp.str() + "/run";
  REQUIRE(run_train(config_from(tiny_train_config(root, run_dir, "tripnet")), opt, log) == kExitOk);
  REQUIRE(fs::exists(run_dir + "/checkpoint.bin"));
  REQUIRE(fs::exists(run_dir + "/train_log.jsonl"));
  REQUIRE(fs::exists(run_dir + "/timing.txt"));

  // One log line per epoch, each a JSON object with the loss breakdown.
  std::istringstream lines(read_file_bytes(run_dir + "/train_log.jsonl"));
  std::string line;
  int entries = 0;
  while (std::getline(lines, line)) {
    const nlohmann::json j = nlohmann::json::parse(line);
    REQUIRE(j.contains("loss_total"));
    REQUIRE(j.at("epoch").get<int>() == entries);
    ++entries;
  }
  REQUIRE(entries == 2);

  // Re-running without --force refuses to overwrite the checkpoint.
  REQUIRE_THROWS_AS(run_train(config_from(tiny_train_config(root, run_dir, "tripnet")), opt, log),
                    ConfigError);

  std::ostringstream eval_out;
  const std::string eval_cfg = "dataset = " + root + "\ncheckpoint = " + run_dir +
                               "/checkpoint.bin\nsplit = test\nout = " + tmp.str() + "/eval.json\n";
  REQUIRE(run_evaluate(config_from(eval_cfg), opt, eval_out) == kExitOk);
  REQUIRE(eval_out.str().find("model: tripnet") != std::string::npos);
  REQUIRE(eval_out.str().find("AP_ivt:") != std::string::npos);
  REQUIRE(eval_out.str().find("localization@0.5:") != std::string::npos);

  const nlohmann::json j = nlohmann::json::parse(read_file_bytes(tmp.str() + "/eval.json"));
  REQUIRE(j.at("model").get<std::string>() == "tripnet");
  REQUIRE(j.at("frames").get<int>() == 6);
  REQUIRE(j.contains("ap_ivt"));
}

TEST_CASE("training twice with one seed produces identical artifacts") {
  ScratchDir tmp("determinism");
  const std::string root = tmp.str() + "/data";
  CommandOptions opt;
  std::ostringstream log;
  REQUIRE(run_generate(config_from(tiny_generate_config(root)), opt, log) == kExitOk);

  for (const char* run : {"run1", "run2"})
    REQUIRE(run_train(config_from(tiny_train_config(root, tmp.str() + "/" + run, "mtl")), opt, log) ==
            kExitOk);

  REQUIRE(read_file_bytes(tmp.str() + "/run1/checkpoint.bin") ==
          read_file_bytes(tmp.str() + "/run2/checkpoint.bin"));
  REQUIRE(read_file_bytes(tmp.str() + "/run1/train_log.jsonl") ==
          read_file_bytes(tmp.str() + "/run2/train_log.jsonl"));
}

TEST_CASE("ablate trains the requested variants and writes a comparison table") {
  ScratchDir tmp("ablate");
  const std::string root = tmp.str() + "/data";
  CommandOptions opt;
  std::ostringstream log;
  REQUIRE(run_generate(config_from(tiny_generate_config(root)), opt, log) == kExitOk);

  std::string base = tiny_train_config(root, tmp.str() + "/ablation", "tripnet");
  base.erase(base.find("model = tripnet\n"), std::string("model = tripnet\n").size());
  const std::string cfg = base + "runs = naive,tripnet_nocag\neval_split = test\n";
  REQUIRE(run_ablate(config_from(cfg), opt, log) == kExitOk);

  const nlohmann::json j =
      nlohmann::json::parse(read_file_bytes(tmp.str() + "/ablation/ablation.json"));
  REQUIRE(j.size() == 2);
  REQUIRE(j.contains("naive"));
  REQUIRE(j.contains("tripnet_nocag"));
  REQUIRE(fs::exists(tmp.str() + "/ablation/naive/checkpoint.bin"));
  REQUIRE(fs::exists(tmp.str() + "/ablation/tripnet_nocag/checkpoint.bin"));
  REQUIRE_THROWS_AS(run_ablate(config_from(base + "runs = frankenmodel\n"), opt, log), ConfigError);
}

TEST_CASE("bad inputs raise typed errors before any work happens") {
  ScratchDir tmp("bad_input");
  CommandOptions opt;
  std::ostringstream out;

  REQUIRE_THROWS_AS(run_stats(config_from("dataset = " + tmp.str() + "/nope\n"), opt, out),
                    std::exception);
  REQUIRE_THROWS_AS(run_train(config_from("dataset = x\n"), opt, out), ConfigError);  // run_dir missing
  REQUIRE_THROWS(parse_split("weird"));
  REQUIRE_THROWS_AS(parse_model_kind("resnet"), std::invalid_argument);

  // A checkpoint with foreign metadata is rejected as a checkpoint problem.
  Checkpoint ckpt;
  ckpt.meta["format"] = "something-else";
  REQUIRE_THROWS_AS(load_model(ckpt), CheckpointError);
}

#ifdef TRIPLAB_BIN
namespace {

int run_binary(const std::string& args) {
  const int status = std::system((std::string(TRIPLAB_BIN) + " " + args + " >/dev/null 2>&1").c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("binary exit codes distinguish usage, input, and runtime failures") {
  ScratchDir tmp("binary");
  REQUIRE(run_binary("") == kExitUsage);
  REQUIRE(run_binary("frobnicate --config x") == kExitUsage);
  REQUIRE(run_binary("stats --config " + tmp.str() + "/missing.cfg") == kExitBadInput);

  const std::string root = tmp.str() + "/data";
  write_file_bytes(tmp.str() + "/gen.cfg", tiny_generate_config(root));
  REQUIRE(run_binary("generate --config " + tmp.str() + "/gen.cfg") == kExitOk);
  REQUIRE(run_binary("generate --config " + tmp.str() + "/gen.cfg") == kExitBadInput);
  REQUIRE(run_binary("generate --config " + tmp.str() + "/gen.cfg --force") == kExitOk);

  // Relative dataset paths resolve through TRIPLAB_DATA_DIR for the binary.
  write_file_bytes(tmp.str() + "/stats.cfg", "dataset = data\n");
  setenv("TRIPLAB_DATA_DIR", tmp.str().c_str(), 1);
  REQUIRE(run_binary("stats --config " + tmp.str() + "/stats.cfg") == kExitOk);
  unsetenv("TRIPLAB_DATA_DIR");

  // A divergent run (absurd learning rate, no gradient clipping) exits as a
  // runtime failure rather than a bad-input one.
  const std::string diverge = "dataset = " + root + "\nrun_dir = " + tmp.str() +
                              "/boom\nmodel = tripnet\nepochs = 2\nwarmup_epochs = 0\nbatch_size = 4\n"
                              "backbone_c1 = 4\nbackbone_c2 = 6\nbranch_channels = 4\naugment = false\n"
                              "lr_subnets = 1e9\nlr_backbone = 1e9\nclip_norm = 0\n"
                              "divergence_threshold = 1e3\nseed = 5\n";
  write_file_bytes(tmp.str() + "/diverge.cfg", diverge);
  REQUIRE(run_binary("train --config " + tmp.str() + "/diverge.cfg") == kExitRuntime);
}
#endif
