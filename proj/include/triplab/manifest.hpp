#pragma once

#include <json.hpp>

#include <array>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "triplab/annotations.hpp"
#include "triplab/boxes.hpp"
#include "triplab/config.hpp"
#include "triplab/hash.hpp"

namespace triplab {

struct ManifestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dataset directory descriptor. A generated dataset root holds vocab.txt,
/// annotations.csv, boxes.csv, manifest.json and images/<video>/frame_*.png;
/// the manifest records the whole-video split and provenance hashes. No
/// timestamps: regenerating with the same config is byte-identical.
struct DatasetManifest {
  std::string vocab_file = "vocab.txt";
  std::string annotations_file = "annotations.csv";
  std::string boxes_file = "boxes.csv";
  std::string images_dir = "images";
  int image_h = 0;
  int image_w = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string vocab_hash;
  std::array<std::vector<std::string>, 3> split_videos;  // train, val, test
  std::int64_t total_frames = 0;
  std::int64_t triplet_instances = 0;
};

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["vocab_file"] = m.vocab_file;
  j["annotations_file"] = m.annotations_file;
  j["boxes_file"] = m.boxes_file;
  j["images_dir"] = m.images_dir;
  j["image_h"] = m.image_h;
  j["image_w"] = m.image_w;
  j["seed"] = m.seed;
  j["config_hash"] = m.config_hash;
  j["vocab_hash"] = m.vocab_hash;
  j["splits"] = {{"train", m.split_videos[0]}, {"val", m.split_videos[1]}, {"test", m.split_videos[2]}};
  j["total_frames"] = m.total_frames;
  j["triplet_instances"] = m.triplet_instances;
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.vocab_file = j.at("vocab_file").get<std::string>();
    m.annotations_file = j.at("annotations_file").get<std::string>();
    m.boxes_file = j.at("boxes_file").get<std::string>();
    m.images_dir = j.at("images_dir").get<std::string>();
    m.image_h = j.at("image_h").get<int>();
    m.image_w = j.at("image_w").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.vocab_hash = j.at("vocab_hash").get<std::string>();
    m.split_videos[0] = j.at("splits").at("train").get<std::vector<std::string>>();
    m.split_videos[1] = j.at("splits").at("val").get<std::vector<std::string>>();
    m.split_videos[2] = j.at("splits").at("test").get<std::vector<std::string>>();
    m.total_frames = j.at("total_frames").get<std::int64_t>();
    m.triplet_instances = j.at("triplet_instances").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(std::string("bad dataset manifest: ") + e.what());
  }
  return m;
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
  write_file_bytes(path, manifest_to_json(m).dump(2) + "\n");
}

inline DatasetManifest load_manifest(const std::string& path) {
  try {
    return manifest_from_json(nlohmann::json::parse(read_file_bytes(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError("cannot parse manifest " + path + ": " + e.what());
  }
}

/// Ground-truth instrument boxes per frame, stored beside the annotations as
/// a CSV (video_id, frame_index, instrument index, half-open pixel box).
using BoxTable = std::map<std::pair<std::string, int>, std::vector<InstrumentBox>>;

inline std::string save_boxes_text(const BoxTable& table) {
  std::string out = "video_id,frame_index,instrument,x0,y0,x1,y1\n";
  const auto px = [](double v) { return std::to_string(static_cast<int>(std::lround(v))); };
  for (const auto& [key, boxes] : table)
    for (const InstrumentBox& b : boxes)
      out += key.first + "," + std::to_string(key.second) + "," + std::to_string(b.instrument) + "," +
             px(b.box.x0) + "," + px(b.box.y0) + "," + px(b.box.x1) + "," + px(b.box.y1) + "\n";
  return out;
}

inline BoxTable load_boxes_text(const std::string& text) {
  BoxTable table;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || trim(line).empty()) continue;
    std::istringstream row(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(row, field, ',')) fields.push_back(field);
    if (fields.size() != 7) throw ManifestError("boxes line " + std::to_string(lineno) + ": expected 7 fields");
    try {
      InstrumentBox b;
      b.instrument = std::stoi(fields[2]);
      b.box = Box(std::stoi(fields[3]), std::stoi(fields[4]), std::stoi(fields[5]), std::stoi(fields[6]));
      b.score = 1.0;
      table[{fields[0], std::stoi(fields[1])}].push_back(b);
    } catch (const std::exception&) {
      throw ManifestError("boxes line " + std::to_string(lineno) + ": bad integer field");
    }
  }
  return table;
}

inline void save_boxes(const BoxTable& table, const std::string& path) {
  write_file_bytes(path, save_boxes_text(table));
}

inline BoxTable load_boxes(const std::string& path) { return load_boxes_text(read_file_bytes(path)); }

}  // namespace triplab
