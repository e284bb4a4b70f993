#pragma once

// Deterministic annotation fixture over the canonical 6/8/19 vocabulary.
//
// The published per-axis frequencies and the two pairwise co-occurrence
// matrices (instrument x verb, instrument x target) fix the dataset's
// marginals; this generator builds one concrete set of triplet instances
// realizing all of them at once. The published instrument x target matrix
// overshoots the per-axis totals by exactly two single counts, both in the
// grasper column (adhesion and suture rows: column sum 76198 vs 76196,
// row sums 237 vs 236 and 10 vs 9), so those two cells are zeroed here;
// every marginal then reconciles exactly and the grand total is 135454.
//
// Within each instrument, verb and target masses are coupled northwest-
// corner style (march both margins in index order, pairing as much mass as
// possible before advancing). Because the null-verb and null-target rows are
// identical per instrument, idle mass pairs exactly: a null verb always
// comes with a null target and vice versa.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "triplab/annotations.hpp"
#include "triplab/vocab.hpp"

namespace triplab::testing {

inline constexpr int kFixtureInstruments = 6;
inline constexpr int kFixtureVerbs = 8;
inline constexpr int kFixtureTargets = 19;
inline constexpr std::int64_t kFixtureTotal = 135454;

inline constexpr std::array<std::int64_t, kFixtureInstruments> kFixtureInstrumentCounts = {
    76196, 5616, 44413, 1856, 2851, 4522};

inline constexpr std::array<std::int64_t, kFixtureVerbs> kFixtureVerbCounts = {
    5807, 273, 74720, 2578, 42851, 1544, 4306, 3375};

inline constexpr std::array<std::int64_t, kFixtureTargets> kFixtureTargetCounts = {
    5807, 1169, 75331, 5173, 4378, 10023, 552, 14433, 236, 137,
    1950, 5793, 8815,  641,  745,  60,    88,  114,   9};

/// Rows: verbs 0..7, columns: instruments 0..5.
inline constexpr std::array<std::array<std::int64_t, kFixtureInstruments>, kFixtureVerbs>
    kFixtureVerbInstrument = {{
        {2722, 372, 2093, 108, 214, 298},    // null
        {273, 0, 0, 0, 0, 0},                // place/pack
        {72394, 589, 1006, 45, 59, 627},     // grasp/retract
        {0, 0, 0, 0, 2578, 0},               // clip
        {767, 892, 40772, 151, 0, 269},      // dissect
        {0, 0, 8, 1536, 0, 0},               // cut
        {0, 3756, 534, 16, 0, 0},            // coagulate
        {40, 7, 0, 0, 0, 3328},              // clean
    }};

/// Rows: targets 0..18, columns: instruments 0..5 (two grasper cells zeroed,
/// see the file comment).
inline constexpr std::array<std::array<std::int64_t, kFixtureInstruments>, kFixtureTargets>
    kFixtureTargetInstrument = {{
        {2722, 372, 2093, 108, 214, 298},    // null
        {36, 361, 0, 0, 0, 772},             // abdominal wall/cavity
        {48720, 731, 25750, 57, 0, 73},      // gallbladder
        {1451, 478, 2959, 32, 54, 199},      // cystic plate
        {38, 190, 2639, 558, 953, 0},        // cystic artery
        {786, 215, 6710, 670, 1572, 70},     // cystic duct
        {112, 90, 48, 4, 58, 240},           // cystic pedicle
        {10919, 2399, 356, 90, 0, 669},      // liver
        {0, 73, 9, 154, 0, 0},               // adhesion
        {137, 0, 0, 0, 0, 0},                // clip
        {7, 0, 0, 0, 0, 1943},               // fluid
        {5685, 79, 0, 0, 0, 29},             // specimen bag
        {4413, 521, 3553, 110, 0, 218},      // omentum
        {298, 0, 286, 57, 0, 0},             // peritoneum
        {709, 19, 6, 0, 0, 11},              // gut
        {10, 46, 4, 0, 0, 0},                // hepatic pedicle
        {72, 9, 0, 7, 0, 0},                 // tissue sampling
        {81, 33, 0, 0, 0, 0},                // falciform ligament
        {0, 0, 0, 9, 0, 0},                  // suture
    }};

namespace detail {

inline void check_fixture_margins() {
  std::int64_t total = 0;
  for (int i = 0; i < kFixtureInstruments; ++i) {
    std::int64_t by_verb = 0, by_target = 0;
    for (int v = 0; v < kFixtureVerbs; ++v) by_verb += kFixtureVerbInstrument[v][i];
    for (int t = 0; t < kFixtureTargets; ++t) by_target += kFixtureTargetInstrument[t][i];
    if (by_verb != kFixtureInstrumentCounts[i] || by_target != kFixtureInstrumentCounts[i])
      throw std::logic_error("fixture tables: instrument column " + std::to_string(i) +
                             " does not reconcile");
    total += by_verb;
  }
  for (int v = 0; v < kFixtureVerbs; ++v) {
    std::int64_t s = 0;
    for (int i = 0; i < kFixtureInstruments; ++i) s += kFixtureVerbInstrument[v][i];
    if (s != kFixtureVerbCounts[v])
      throw std::logic_error("fixture tables: verb row " + std::to_string(v) + " does not reconcile");
  }
  for (int t = 0; t < kFixtureTargets; ++t) {
    std::int64_t s = 0;
    for (int i = 0; i < kFixtureInstruments; ++i) s += kFixtureTargetInstrument[t][i];
    if (s != kFixtureTargetCounts[t])
      throw std::logic_error("fixture tables: target row " + std::to_string(t) + " does not reconcile");
  }
  if (total != kFixtureTotal) throw std::logic_error("fixture tables: grand total does not reconcile");
}

}  // namespace detail

/// One triplet instance per frame, frames spread round-robin over `videos`
/// video ids. Instances enumerate instrument-major, then northwest-corner
/// over (verb, target) within the instrument.
inline Dataset canonical_fixture_dataset(int videos = 40) {
  detail::check_fixture_margins();
  Dataset ds;
  ds.annotations.reserve(static_cast<std::size_t>(kFixtureTotal));
  std::vector<int> next_frame(static_cast<std::size_t>(videos), 0);
  std::int64_t emitted = 0;
  auto emit = [&](int i, int v, int t, std::int64_t count) {
    for (std::int64_t k = 0; k < count; ++k) {
      const int vid = static_cast<int>(emitted % videos);
      std::string name = std::to_string(vid + 1);
      if (name.size() < 2) name = "0" + name;
      ds.annotations.push_back(FrameAnnotation{
          "vid" + name, next_frame[static_cast<std::size_t>(vid)]++, {Triplet{i, v, t}}});
      ++emitted;
    }
  };
  for (int i = 0; i < kFixtureInstruments; ++i) {
    std::array<std::int64_t, kFixtureVerbs> vleft{};
    std::array<std::int64_t, kFixtureTargets> tleft{};
    for (int v = 0; v < kFixtureVerbs; ++v) vleft[static_cast<std::size_t>(v)] = kFixtureVerbInstrument[v][i];
    for (int t = 0; t < kFixtureTargets; ++t)
      tleft[static_cast<std::size_t>(t)] = kFixtureTargetInstrument[t][i];
    int v = 0, t = 0;
    while (v < kFixtureVerbs && t < kFixtureTargets) {
      if (vleft[static_cast<std::size_t>(v)] == 0) {
        ++v;
        continue;
      }
      if (tleft[static_cast<std::size_t>(t)] == 0) {
        ++t;
        continue;
      }
      const std::int64_t q = std::min(vleft[static_cast<std::size_t>(v)], tleft[static_cast<std::size_t>(t)]);
      emit(i, v, t, q);
      vleft[static_cast<std::size_t>(v)] -= q;
      tleft[static_cast<std::size_t>(t)] -= q;
    }
  }
  if (emitted != kFixtureTotal) throw std::logic_error("fixture coupling did not exhaust all mass");
  return ds;
}

inline std::string canonical_fixture_csv(int videos = 40) {
  return save_annotations_text(canonical_fixture_dataset(videos), Vocabulary::canonical());
}

}  // namespace triplab::testing
