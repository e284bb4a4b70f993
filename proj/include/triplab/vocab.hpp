#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "triplab/hash.hpp"
#include "triplab/tensor.hpp"

namespace triplab {

struct VocabError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An <instrument, verb, target> index triple.
using Triplet = std::array<int, 3>;

/// The three fixed label spaces. Index 0 of verbs and targets is the literal
/// name "null" (idle instrument). Names are unique within each axis.
class Vocabulary {
 public:
  Vocabulary() = default;

  Vocabulary(std::vector<std::string> instruments, std::vector<std::string> verbs,
             std::vector<std::string> targets)
      : instruments_(std::move(instruments)), verbs_(std::move(verbs)), targets_(std::move(targets)) {
    validate();
    build_index();
  }

  /// The CholecT40 label spaces: 6 instruments, 8 verbs, 19 targets.
  static Vocabulary canonical() {
    return Vocabulary(
        {"grasper", "bipolar", "hook", "scissors", "clipper", "irrigator"},
        {"null", "place/pack", "grasp/retract", "clip", "dissect", "cut", "coagulate", "clean"},
        {"null", "abdominal wall/cavity", "gallbladder", "cystic plate", "cystic artery",
         "cystic duct", "cystic pedicle", "liver", "adhesion", "clip", "fluid", "specimen bag",
         "omentum", "peritoneum", "gut", "hepatic pedicle", "tissue sampling",
         "falciform ligament", "suture"});
  }

  /// A small generated vocabulary for synthetic experiments. Verb/target
  /// index 0 stays "null".
  static Vocabulary synthetic(int m, int n, int p) {
    if (m < 1 || n < 1 || p < 1) throw VocabError("synthetic vocabulary sizes must be >= 1");
    std::vector<std::string> ins, vrb, tgt;
    for (int i = 0; i < m; ++i) ins.push_back("instrument" + std::to_string(i));
    vrb.push_back("null");
    for (int v = 1; v < n; ++v) vrb.push_back("verb" + std::to_string(v));
    tgt.push_back("null");
    for (int t = 1; t < p; ++t) tgt.push_back("target" + std::to_string(t));
    return Vocabulary(std::move(ins), std::move(vrb), std::move(tgt));
  }

  int num_instruments() const { return static_cast<int>(instruments_.size()); }
  int num_verbs() const { return static_cast<int>(verbs_.size()); }
  int num_targets() const { return static_cast<int>(targets_.size()); }

  const std::vector<std::string>& instruments() const { return instruments_; }
  const std::vector<std::string>& verbs() const { return verbs_; }
  const std::vector<std::string>& targets() const { return targets_; }

  std::optional<int> instrument_index(const std::string& name) const { return lookup(instrument_idx_, name); }
  std::optional<int> verb_index(const std::string& name) const { return lookup(verb_idx_, name); }
  std::optional<int> target_index(const std::string& name) const { return lookup(target_idx_, name); }

  bool contains(const Triplet& t) const {
    return t[0] >= 0 && t[0] < num_instruments() && t[1] >= 0 && t[1] < num_verbs() && t[2] >= 0 &&
           t[2] < num_targets();
  }

  bool operator==(const Vocabulary& other) const {
    return instruments_ == other.instruments_ && verbs_ == other.verbs_ && targets_ == other.targets_;
  }

  /// Plain-text format: three sections ("instrument:", "verb:", "target:"),
  /// one name per line, order defines indices.
  std::string to_text() const {
    std::string out = "instrument:\n";
    for (const auto& s : instruments_) out += s + "\n";
    out += "verb:\n";
    for (const auto& s : verbs_) out += s + "\n";
    out += "target:\n";
    for (const auto& s : targets_) out += s + "\n";
    return out;
  }

  static Vocabulary from_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<std::string> sections[3];
    int section = -1;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string t = trim_ws(line);
      if (t.empty() || t[0] == '#') continue;
      if (t == "instrument:") {
        section = 0;
      } else if (t == "verb:") {
        section = 1;
      } else if (t == "target:") {
        section = 2;
      } else {
        if (section < 0)
          throw VocabError("vocabulary line " + std::to_string(lineno) + ": name before section header");
        sections[section].push_back(t);
      }
    }
    return Vocabulary(std::move(sections[0]), std::move(sections[1]), std::move(sections[2]));
  }

  void save(const std::string& path) const { write_file_bytes(path, to_text()); }

  static Vocabulary load(const std::string& path) { return from_text(read_file_bytes(path)); }

  std::string hash_hex_digest() const { return hash_hex(fnv1a64(to_text())); }

 private:
  static std::string trim_ws(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static std::optional<int> lookup(const std::map<std::string, int>& idx, const std::string& name) {
    auto it = idx.find(name);
    if (it == idx.end()) return std::nullopt;
    return it->second;
  }

  void validate() const {
    if (instruments_.empty() || verbs_.empty() || targets_.empty())
      throw VocabError("vocabulary axes must be non-empty");
    if (verbs_[0] != "null") throw VocabError("verb index 0 must be named 'null'");
    if (targets_[0] != "null") throw VocabError("target index 0 must be named 'null'");
    auto check_axis = [](const std::vector<std::string>& names, const char* axis) {
      std::set<std::string> seen;
      for (const auto& n : names) {
        if (n.empty()) throw VocabError(std::string(axis) + ": empty name");
        if (n.find(',') != std::string::npos)
          throw VocabError(std::string(axis) + ": name '" + n + "' may not contain a comma");
        if (!seen.insert(n).second)
          throw VocabError(std::string(axis) + ": duplicate name '" + n + "'");
      }
    };
    check_axis(instruments_, "instrument");
    check_axis(verbs_, "verb");
    check_axis(targets_, "target");
  }

  void build_index() {
    for (int i = 0; i < num_instruments(); ++i) instrument_idx_[instruments_[static_cast<std::size_t>(i)]] = i;
    for (int i = 0; i < num_verbs(); ++i) verb_idx_[verbs_[static_cast<std::size_t>(i)]] = i;
    for (int i = 0; i < num_targets(); ++i) target_idx_[targets_[static_cast<std::size_t>(i)]] = i;
  }

  std::vector<std::string> instruments_, verbs_, targets_;
  std::map<std::string, int> instrument_idx_, verb_idx_, target_idx_;
};

/// One valid triplet class: a class id plus its component indices.
struct TripletClass {
  int class_id = 0;
  int i = 0;
  int v = 0;
  int t = 0;
};

/// Boolean m x n x p grid marking the triplet combinations that are valid.
/// Everything outside the grid is excluded from loss and decoding.
class ValidityMask {
 public:
  ValidityMask() = default;

  ValidityMask(int m, int n, int p) : m_(m), n_(n), p_(p), grid_({m, n, p}) {}

  int m() const { return m_; }
  int n() const { return n_; }
  int p() const { return p_; }

  bool at(int i, int v, int t) const { return grid_(i, v, t) != 0; }

  void set(int i, int v, int t, bool value = true) { grid_(i, v, t) = value ? 1 : 0; }

  int count_true() const {
    int c = 0;
    for (std::int64_t k = 0; k < grid_.size(); ++k) c += grid_[k] != 0;
    return c;
  }

  std::int64_t cell_count() const { return grid_.size(); }

  bool operator==(const ValidityMask& other) const {
    return m_ == other.m_ && n_ == other.n_ && p_ == other.p_ && grid_ == other.grid_;
  }

 private:
  int m_ = 0, n_ = 0, p_ = 0;
  Tensor<std::uint8_t> grid_;
};

/// The ordered list of valid triplet classes and the class-id bijection.
/// Ids are assigned lexicographically by (i, v, t).
class TripletCatalog {
 public:
  TripletCatalog() = default;

  TripletCatalog(const Vocabulary& vocab, const std::set<Triplet>& triplets)
      : m_(vocab.num_instruments()), n_(vocab.num_verbs()), p_(vocab.num_targets()) {
    if (triplets.empty()) throw VocabError("triplet catalog requires a non-empty triplet set");
    for (const Triplet& t : triplets) {
      if (!vocab.contains(t))
        throw VocabError("triplet (" + std::to_string(t[0]) + "," + std::to_string(t[1]) + "," +
                         std::to_string(t[2]) + ") outside vocabulary bounds");
    }
    // std::set iterates in lexicographic (i, v, t) order already.
    int id = 0;
    for (const Triplet& t : triplets) {
      classes_.push_back(TripletClass{id, t[0], t[1], t[2]});
      index_[t] = id;
      ++id;
    }
  }

  int num_classes() const { return static_cast<int>(classes_.size()); }
  const std::vector<TripletClass>& classes() const { return classes_; }
  const TripletClass& at(int class_id) const { return classes_[static_cast<std::size_t>(class_id)]; }

  std::optional<int> class_id(const Triplet& t) const {
    auto it = index_.find(t);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  Triplet decode(int class_id) const {
    const TripletClass& c = at(class_id);
    return Triplet{c.i, c.v, c.t};
  }

  ValidityMask validity_mask() const {
    ValidityMask mask(m_, n_, p_);
    for (const TripletClass& c : classes_) mask.set(c.i, c.v, c.t);
    return mask;
  }

  int m() const { return m_; }
  int n() const { return n_; }
  int p() const { return p_; }

  bool operator==(const TripletCatalog& other) const {
    return m_ == other.m_ && n_ == other.n_ && p_ == other.p_ && index_ == other.index_;
  }

 private:
  int m_ = 0, n_ = 0, p_ = 0;
  std::vector<TripletClass> classes_;
  std::map<Triplet, int> index_;
};

}  // namespace triplab
