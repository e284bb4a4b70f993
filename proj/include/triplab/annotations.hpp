#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "triplab/config.hpp"
#include "triplab/rng.hpp"
#include "triplab/vocab.hpp"

namespace triplab {

struct AnnotationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Multi-label ground truth for one frame, sampled at 1 fps. An empty triplet
/// set is a background frame. Idle instruments carry verb 0 and target 0.
struct FrameAnnotation {
  std::string video_id;
  int frame_index = 0;
  std::set<Triplet> triplets;

  bool operator==(const FrameAnnotation& other) const {
    return video_id == other.video_id && frame_index == other.frame_index && triplets == other.triplets;
  }
};

enum class Split { unspecified, train, val, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    default: return "unspecified";
  }
}

struct Dataset {
  std::vector<FrameAnnotation> annotations;
  Split split = Split::unspecified;
  std::string image_root;  // optional path to the frame image store

  std::int64_t triplet_instance_count() const {
    std::int64_t n = 0;
    for (const auto& a : annotations) n += static_cast<std::int64_t>(a.triplets.size());
    return n;
  }

  std::vector<std::string> video_ids() const {
    std::vector<std::string> ids;
    std::set<std::string> seen;
    for (const auto& a : annotations)
      if (seen.insert(a.video_id).second) ids.push_back(a.video_id);
    return ids;
  }
};

namespace detail {

inline std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace detail

/// Annotation CSV: header row, then one row per (frame, triplet) with columns
/// video_id, frame_index, instrument, verb, target. Empty triplet columns
/// denote a background frame. Unknown label names are rejected.
inline Dataset load_annotations_text(const std::string& text, const Vocabulary& vocab) {
  Dataset ds;
  std::map<std::pair<std::string, int>, std::size_t> frame_of;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = detail::split_csv_row(line);
    if (!saw_header) {
      if (fields.size() < 2 || trim(fields[0]) != "video_id")
        throw AnnotationError("line 1: expected header row starting with 'video_id'");
      saw_header = true;
      continue;
    }
    if (fields.size() < 2 || fields.size() > 5)
      throw AnnotationError("line " + std::to_string(lineno) + ": expected 2..5 columns, got " +
                            std::to_string(fields.size()));
    const std::string video_id = trim(fields[0]);
    if (video_id.empty()) throw AnnotationError("line " + std::to_string(lineno) + ": empty video_id");
    int frame_index = 0;
    try {
      std::size_t pos = 0;
      frame_index = std::stoi(trim(fields[1]), &pos);
      if (pos != trim(fields[1]).size() || frame_index < 0) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw AnnotationError("line " + std::to_string(lineno) + ": bad frame index '" + fields[1] + "'");
    }

    std::string iname = fields.size() > 2 ? trim(fields[2]) : "";
    std::string vname = fields.size() > 3 ? trim(fields[3]) : "";
    std::string tname = fields.size() > 4 ? trim(fields[4]) : "";
    const bool any = !iname.empty() || !vname.empty() || !tname.empty();
    const bool all = !iname.empty() && !vname.empty() && !tname.empty();
    if (any && !all)
      throw AnnotationError("line " + std::to_string(lineno) + ": partial triplet (all of instrument, verb, target required)");

    auto key = std::make_pair(video_id, frame_index);
    auto it = frame_of.find(key);
    if (it == frame_of.end()) {
      frame_of[key] = ds.annotations.size();
      ds.annotations.push_back(FrameAnnotation{video_id, frame_index, {}});
      it = frame_of.find(key);
    }
    if (all) {
      auto i = vocab.instrument_index(iname);
      if (!i) throw AnnotationError("line " + std::to_string(lineno) + ": unknown instrument '" + iname + "'");
      auto v = vocab.verb_index(vname);
      if (!v) throw AnnotationError("line " + std::to_string(lineno) + ": unknown verb '" + vname + "'");
      auto t = vocab.target_index(tname);
      if (!t) throw AnnotationError("line " + std::to_string(lineno) + ": unknown target '" + tname + "'");
      ds.annotations[it->second].triplets.insert(Triplet{*i, *v, *t});
    }
  }
  if (!saw_header) throw AnnotationError("empty annotation file (header row required)");
  std::stable_sort(ds.annotations.begin(), ds.annotations.end(), [](const auto& a, const auto& b) {
    return std::tie(a.video_id, a.frame_index) < std::tie(b.video_id, b.frame_index);
  });
  return ds;
}

inline Dataset load_annotations(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw AnnotationError("cannot open annotation file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return load_annotations_text(text, vocab);
}

inline std::string save_annotations_text(const Dataset& ds, const Vocabulary& vocab) {
  std::vector<const FrameAnnotation*> frames;
  frames.reserve(ds.annotations.size());
  for (const auto& a : ds.annotations) frames.push_back(&a);
  std::stable_sort(frames.begin(), frames.end(), [](const FrameAnnotation* a, const FrameAnnotation* b) {
    return std::tie(a->video_id, a->frame_index) < std::tie(b->video_id, b->frame_index);
  });
  std::string out = "video_id,frame_index,instrument,verb,target\n";
  for (const FrameAnnotation* a : frames) {
    if (a->triplets.empty()) {
      out += a->video_id + "," + std::to_string(a->frame_index) + ",,,\n";
      continue;
    }
    for (const Triplet& t : a->triplets) {
      out += a->video_id + "," + std::to_string(a->frame_index) + "," +
             vocab.instruments()[static_cast<std::size_t>(t[0])] + "," +
             vocab.verbs()[static_cast<std::size_t>(t[1])] + "," +
             vocab.targets()[static_cast<std::size_t>(t[2])] + "\n";
    }
  }
  return out;
}

inline void save_annotations(const Dataset& ds, const std::string& path, const Vocabulary& vocab) {
  write_file_bytes(path, save_annotations_text(ds, vocab));
}

/// Mask of exactly the triplets present in the given annotations.
inline ValidityMask build_validity_mask(const Dataset& train, const Vocabulary& vocab) {
  std::set<Triplet> seen;
  for (const auto& a : train.annotations)
    for (const Triplet& t : a.triplets) seen.insert(t);
  if (seen.empty()) throw AnnotationError("cannot build validity mask from a dataset with no triplets");
  ValidityMask mask(vocab.num_instruments(), vocab.num_verbs(), vocab.num_targets());
  for (const Triplet& t : seen) {
    if (!vocab.contains(t)) throw AnnotationError("triplet outside vocabulary bounds");
    mask.set(t[0], t[1], t[2]);
  }
  return mask;
}

inline ValidityMask build_validity_mask(const std::vector<TripletClass>& classes, const Vocabulary& vocab) {
  if (classes.empty()) throw AnnotationError("cannot build validity mask from an empty class list");
  ValidityMask mask(vocab.num_instruments(), vocab.num_verbs(), vocab.num_targets());
  for (const TripletClass& c : classes) {
    Triplet t{c.i, c.v, c.t};
    if (!vocab.contains(t)) throw AnnotationError("triplet class outside vocabulary bounds");
    mask.set(c.i, c.v, c.t);
  }
  return mask;
}

inline TripletCatalog catalog_from_dataset(const Dataset& train, const Vocabulary& vocab) {
  std::set<Triplet> seen;
  for (const auto& a : train.annotations)
    for (const Triplet& t : a.triplets) seen.insert(t);
  if (seen.empty()) throw AnnotationError("cannot build a triplet catalog from a dataset with no triplets");
  return TripletCatalog(vocab, seen);
}

enum class Axis { instrument, verb, target };

inline const char* axis_name(Axis a) {
  switch (a) {
    case Axis::instrument: return "instrument";
    case Axis::verb: return "verb";
    default: return "target";
  }
}

inline int axis_size(Axis a, const Vocabulary& vocab) {
  switch (a) {
    case Axis::instrument: return vocab.num_instruments();
    case Axis::verb: return vocab.num_verbs();
    default: return vocab.num_targets();
  }
}

inline int axis_component(Axis a, const Triplet& t) {
  switch (a) {
    case Axis::instrument: return t[0];
    case Axis::verb: return t[1];
    default: return t[2];
  }
}

/// Count matrix over two distinct axes; matrix[a][b] counts triplet instances
/// with component values (a, b). The grand total equals the number of triplet
/// instances in the dataset.
inline std::vector<std::vector<std::int64_t>> cooccurrence_table(const Dataset& ds, Axis rows, Axis cols,
                                                                 const Vocabulary& vocab) {
  if (rows == cols) throw AnnotationError("cooccurrence_table requires two distinct axes");
  std::vector<std::vector<std::int64_t>> table(
      static_cast<std::size_t>(axis_size(rows, vocab)),
      std::vector<std::int64_t>(static_cast<std::size_t>(axis_size(cols, vocab)), 0));
  for (const auto& a : ds.annotations)
    for (const Triplet& t : a.triplets)
      ++table[static_cast<std::size_t>(axis_component(rows, t))][static_cast<std::size_t>(axis_component(cols, t))];
  return table;
}

/// Per-class triplet instance counts along one axis (Table-1 style frequency).
inline std::vector<std::int64_t> axis_counts(const Dataset& ds, Axis axis, const Vocabulary& vocab) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(axis_size(axis, vocab)), 0);
  for (const auto& a : ds.annotations)
    for (const Triplet& t : a.triplets) ++counts[static_cast<std::size_t>(axis_component(axis, t))];
  return counts;
}

/// Deterministic whole-video split. Fractions must sum to 1; sizes use
/// largest-remainder rounding so the partition is exact.
inline std::array<std::vector<std::string>, 3> split_by_video(std::vector<std::string> videos,
                                                              std::array<double, 3> fractions,
                                                              std::uint64_t seed) {
  const double fsum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(fsum - 1.0) > 1e-9) throw AnnotationError("split fractions must sum to 1");
  if (videos.size() < 3) throw AnnotationError("split_by_video requires at least 3 videos");

  const int n = static_cast<int>(videos.size());
  std::array<int, 3> sizes{};
  std::array<double, 3> remainders{};
  int assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = fractions[static_cast<std::size_t>(k)] * n;
    sizes[static_cast<std::size_t>(k)] = static_cast<int>(std::floor(exact + 1e-9));
    remainders[static_cast<std::size_t>(k)] = exact - sizes[static_cast<std::size_t>(k)];
    assigned += sizes[static_cast<std::size_t>(k)];
  }
  while (assigned < n) {
    int best = 0;
    for (int k = 1; k < 3; ++k)
      if (remainders[static_cast<std::size_t>(k)] > remainders[static_cast<std::size_t>(best)] + 1e-12) best = k;
    ++sizes[static_cast<std::size_t>(best)];
    remainders[static_cast<std::size_t>(best)] = -1.0;
    ++assigned;
  }

  Rng rng(mix_seed(seed, "split_by_video"));
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.uniform_int(i + 1));
    std::swap(videos[static_cast<std::size_t>(i)], videos[static_cast<std::size_t>(j)]);
  }

  std::array<std::vector<std::string>, 3> out;
  int pos = 0;
  for (int k = 0; k < 3; ++k) {
    for (int c = 0; c < sizes[static_cast<std::size_t>(k)]; ++c)
      out[static_cast<std::size_t>(k)].push_back(videos[static_cast<std::size_t>(pos++)]);
    std::sort(out[static_cast<std::size_t>(k)].begin(), out[static_cast<std::size_t>(k)].end());
  }
  return out;
}

/// Select the frames belonging to a set of videos.
inline Dataset select_videos(const Dataset& ds, const std::vector<std::string>& videos, Split split) {
  std::set<std::string> wanted(videos.begin(), videos.end());
  Dataset out;
  out.split = split;
  out.image_root = ds.image_root;
  for (const auto& a : ds.annotations)
    if (wanted.count(a.video_id)) out.annotations.push_back(a);
  return out;
}

}  // namespace triplab
