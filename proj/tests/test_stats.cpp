#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "support/canonical_fixture.hpp"
#include "triplab/annotations.hpp"
#include "triplab/commands.hpp"
#include "triplab/rng.hpp"

using namespace triplab;
namespace tt = triplab::testing;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("triplab_stats_" + std::to_string(Catch::rngSeed()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("canonical fixture reproduces the published per-axis frequencies") {
  const Vocabulary vocab = Vocabulary::canonical();
  const Dataset ds = tt::canonical_fixture_dataset();

  REQUIRE(ds.triplet_instance_count() == tt::kFixtureTotal);

  const auto instruments = axis_counts(ds, Axis::instrument, vocab);
  const auto verbs = axis_counts(ds, Axis::verb, vocab);
  const auto targets = axis_counts(ds, Axis::target, vocab);

  REQUIRE(*vocab.instrument_index("grasper") == 0);
  REQUIRE(instruments[0] == 76196);

  for (int i = 0; i < tt::kFixtureInstruments; ++i)
    REQUIRE(instruments[static_cast<std::size_t>(i)] == tt::kFixtureInstrumentCounts[static_cast<std::size_t>(i)]);
  for (int v = 0; v < tt::kFixtureVerbs; ++v)
    REQUIRE(verbs[static_cast<std::size_t>(v)] == tt::kFixtureVerbCounts[static_cast<std::size_t>(v)]);
  for (int t = 0; t < tt::kFixtureTargets; ++t)
    REQUIRE(targets[static_cast<std::size_t>(t)] == tt::kFixtureTargetCounts[static_cast<std::size_t>(t)]);
}

TEST_CASE("canonical fixture reproduces the pairwise co-occurrence tables") {
  const Vocabulary vocab = Vocabulary::canonical();
  const Dataset ds = tt::canonical_fixture_dataset();

  const auto vi = cooccurrence_table(ds, Axis::verb, Axis::instrument, vocab);
  for (int v = 0; v < tt::kFixtureVerbs; ++v)
    for (int i = 0; i < tt::kFixtureInstruments; ++i)
      REQUIRE(vi[static_cast<std::size_t>(v)][static_cast<std::size_t>(i)] ==
              tt::kFixtureVerbInstrument[static_cast<std::size_t>(v)][static_cast<std::size_t>(i)]);
  // The best-known single cell: grasper x grasp/retract.
  REQUIRE(vi[2][0] == 72394);

  const auto ti = cooccurrence_table(ds, Axis::target, Axis::instrument, vocab);
  for (int t = 0; t < tt::kFixtureTargets; ++t)
    for (int i = 0; i < tt::kFixtureInstruments; ++i)
      REQUIRE(ti[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] ==
              tt::kFixtureTargetInstrument[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)]);
}

TEST_CASE("canonical fixture pairs idle verbs with null targets only") {
  const Dataset ds = tt::canonical_fixture_dataset();
  for (const auto& a : ds.annotations)
    for (const Triplet& t : a.triplets) REQUIRE((t[1] == 0) == (t[2] == 0));
}

TEST_CASE("stats command reports fixture counts from a bare annotation file") {
  TempDir tmp;
  const Vocabulary vocab = Vocabulary::canonical();
  vocab.save(tmp.file("vocab.txt"));
  write_file_bytes(tmp.file("annotations.csv"), tt::canonical_fixture_csv());

  KeyValueConfig cfg = KeyValueConfig::parse_text("annotations = " + tmp.file("annotations.csv") +
                                                  "\nvocab = " + tmp.file("vocab.txt") +
                                                  "\nout = " + tmp.file("stats.json") + "\n");
  std::ostringstream out;
  REQUIRE(run_stats(cfg, CommandOptions{}, out) == kExitOk);
  REQUIRE(out.str().find("grasper: 76196") != std::string::npos);
  REQUIRE(out.str().find("triplet instances: 135454") != std::string::npos);

  std::ifstream in(tmp.file("stats.json"));
  nlohmann::json j;
  in >> j;
  REQUIRE(j["instrument_counts"][0].get<std::int64_t>() == 76196);
  REQUIRE(j["triplet_instances"].get<std::int64_t>() == 135454);
}

TEST_CASE("annotation round trip preserves random datasets exactly") {
  Rng rng(77001);
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 1 + static_cast<int>(rng.uniform_int(4));
    const int n = 2 + static_cast<int>(rng.uniform_int(4));
    const int p = 2 + static_cast<int>(rng.uniform_int(4));
    const Vocabulary vocab = Vocabulary::synthetic(m, n, p);

    Dataset ds;
    const int frames = 1 + static_cast<int>(rng.uniform_int(30));
    for (int f = 0; f < frames; ++f) {
      FrameAnnotation a;
      a.video_id = "vid" + std::to_string(1 + rng.uniform_int(3));
      a.frame_index = static_cast<int>(rng.uniform_int(1000));
      const int k = static_cast<int>(rng.uniform_int(4));  // 0 = background frame
      for (int c = 0; c < k; ++c)
        a.triplets.insert(Triplet{static_cast<int>(rng.uniform_int(m)),
                                  static_cast<int>(rng.uniform_int(n)),
                                  static_cast<int>(rng.uniform_int(p))});
      // Frames are keyed by (video, index); collapse duplicates like the loader.
      bool merged = false;
      for (auto& prev : ds.annotations)
        if (prev.video_id == a.video_id && prev.frame_index == a.frame_index) {
          prev.triplets.insert(a.triplets.begin(), a.triplets.end());
          merged = true;
          break;
        }
      if (!merged) ds.annotations.push_back(std::move(a));
    }

    const std::string text = save_annotations_text(ds, vocab);
    const Dataset back = load_annotations_text(text, vocab);
    REQUIRE(back.annotations.size() == ds.annotations.size());
    std::vector<FrameAnnotation> want = ds.annotations;
    std::stable_sort(want.begin(), want.end(), [](const auto& a, const auto& b) {
      return std::tie(a.video_id, a.frame_index) < std::tie(b.video_id, b.frame_index);
    });
    for (std::size_t i = 0; i < want.size(); ++i) REQUIRE(back.annotations[i] == want[i]);
    // Serialized form is a fixed point.
    REQUIRE(save_annotations_text(back, vocab) == text);
  }
}

TEST_CASE("annotation loader rejects malformed rows") {
  const Vocabulary vocab = Vocabulary::synthetic(2, 3, 3);
  SECTION("missing header") {
    REQUIRE_THROWS_AS(load_annotations_text("vid1,0,instrument0,verb1,target1\n", vocab),
                      AnnotationError);
  }
  SECTION("unknown instrument name") {
    REQUIRE_THROWS_AS(
        load_annotations_text("video_id,frame_index,instrument,verb,target\nvid1,0,laser,verb1,target1\n",
                              vocab),
        AnnotationError);
  }
  SECTION("partial triplet") {
    REQUIRE_THROWS_AS(
        load_annotations_text("video_id,frame_index,instrument,verb,target\nvid1,0,instrument0,,\n", vocab),
        AnnotationError);
  }
  SECTION("negative frame index") {
    REQUIRE_THROWS_AS(
        load_annotations_text("video_id,frame_index,instrument,verb,target\nvid1,-4,,,\n", vocab),
        AnnotationError);
  }
  SECTION("background frames are fine") {
    const Dataset ds =
        load_annotations_text("video_id,frame_index,instrument,verb,target\nvid1,0,,,\n", vocab);
    REQUIRE(ds.annotations.size() == 1);
    REQUIRE(ds.annotations[0].triplets.empty());
  }
}

TEST_CASE("whole-video split is an exact partition with stable sizes") {
  std::vector<std::string> videos;
  for (int v = 0; v < 10; ++v) videos.push_back(video_name(v));
  const auto parts = split_by_video(videos, {0.6, 0.2, 0.2}, 7);
  REQUIRE(parts[0].size() == 6);
  REQUIRE(parts[1].size() == 2);
  REQUIRE(parts[2].size() == 2);
  std::set<std::string> all;
  for (const auto& part : parts) all.insert(part.begin(), part.end());
  REQUIRE(all.size() == videos.size());

  // Deterministic in the seed.
  const auto again = split_by_video(videos, {0.6, 0.2, 0.2}, 7);
  REQUIRE(parts == again);
  const auto other = split_by_video(videos, {0.6, 0.2, 0.2}, 8);
  REQUIRE(parts != other);

  REQUIRE_THROWS_AS(split_by_video(videos, {0.5, 0.2, 0.2}, 7), AnnotationError);
  REQUIRE_THROWS_AS(split_by_video({"vid01", "vid02"}, {0.6, 0.2, 0.2}, 7), AnnotationError);
}

TEST_CASE("validity mask marks exactly the training triplets") {
  const Vocabulary vocab = Vocabulary::synthetic(3, 4, 4);
  Dataset ds;
  FrameAnnotation a;
  a.video_id = "vid01";
  a.frame_index = 0;
  a.triplets = {Triplet{0, 1, 2}, Triplet{2, 3, 1}};
  ds.annotations.push_back(a);

  const ValidityMask mask = build_validity_mask(ds, vocab);
  REQUIRE(mask.count_true() == 2);
  REQUIRE(mask.at(0, 1, 2));
  REQUIRE(mask.at(2, 3, 1));
  REQUIRE_FALSE(mask.at(0, 1, 1));
  REQUIRE(mask.cell_count() == 3 * 4 * 4);

  const TripletCatalog catalog = catalog_from_dataset(ds, vocab);
  REQUIRE(catalog.num_classes() == 2);
  REQUIRE(catalog.classes()[0].i == 0);  // lexicographic id order
  REQUIRE(catalog.classes()[1].i == 2);
  REQUIRE(catalog.class_id(Triplet{2, 3, 1}) == 1);
  REQUIRE_FALSE(catalog.class_id(Triplet{1, 1, 1}).has_value());
  REQUIRE(catalog.validity_mask() == mask);
}
