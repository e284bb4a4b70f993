#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "triplab/boxes.hpp"
#include "triplab/image.hpp"
#include "triplab/metrics.hpp"
#include "triplab/vocab.hpp"

namespace triplab {

struct RgbU8 {
  std::uint8_t r = 0, g = 0, b = 0;
};

namespace overlay {

inline constexpr RgbU8 kWhite{255, 255, 255};
inline constexpr RgbU8 kGreen{40, 220, 40};
inline constexpr RgbU8 kRed{230, 50, 50};
inline constexpr RgbU8 kBlack{0, 0, 0};

/// 5x7 bitmap font, column-major, bit 0 = top row. Lowercase maps to
/// uppercase; unknown characters render as '?'.
inline const std::uint8_t* glyph5x7(char c) {
  static const std::uint8_t digits[10][5] = {
      {0x3E, 0x51, 0x49, 0x45, 0x3E}, {0x00, 0x42, 0x7F, 0x40, 0x00}, {0x42, 0x61, 0x51, 0x49, 0x46},
      {0x21, 0x41, 0x45, 0x4B, 0x31}, {0x18, 0x14, 0x12, 0x7F, 0x10}, {0x27, 0x45, 0x45, 0x45, 0x39},
      {0x3C, 0x4A, 0x49, 0x49, 0x30}, {0x01, 0x71, 0x09, 0x05, 0x03}, {0x36, 0x49, 0x49, 0x49, 0x36},
      {0x06, 0x49, 0x49, 0x29, 0x1E}};
  static const std::uint8_t letters[26][5] = {
      {0x7E, 0x11, 0x11, 0x11, 0x7E}, {0x7F, 0x49, 0x49, 0x49, 0x36}, {0x3E, 0x41, 0x41, 0x41, 0x22},
      {0x7F, 0x41, 0x41, 0x22, 0x1C}, {0x7F, 0x49, 0x49, 0x49, 0x41}, {0x7F, 0x09, 0x09, 0x09, 0x01},
      {0x3E, 0x41, 0x49, 0x49, 0x7A}, {0x7F, 0x08, 0x08, 0x08, 0x7F}, {0x00, 0x41, 0x7F, 0x41, 0x00},
      {0x20, 0x40, 0x41, 0x3F, 0x01}, {0x7F, 0x08, 0x14, 0x22, 0x41}, {0x7F, 0x40, 0x40, 0x40, 0x40},
      {0x7F, 0x02, 0x0C, 0x02, 0x7F}, {0x7F, 0x04, 0x08, 0x10, 0x7F}, {0x3E, 0x41, 0x41, 0x41, 0x3E},
      {0x7F, 0x09, 0x09, 0x09, 0x06}, {0x3E, 0x41, 0x51, 0x21, 0x5E}, {0x7F, 0x09, 0x19, 0x29, 0x46},
      {0x46, 0x49, 0x49, 0x49, 0x31}, {0x01, 0x01, 0x7F, 0x01, 0x01}, {0x3F, 0x40, 0x40, 0x40, 0x3F},
      {0x1F, 0x20, 0x40, 0x20, 0x1F}, {0x3F, 0x40, 0x38, 0x40, 0x3F}, {0x63, 0x14, 0x08, 0x14, 0x63},
      {0x07, 0x08, 0x70, 0x08, 0x07}, {0x61, 0x51, 0x49, 0x45, 0x43}};
  static const std::uint8_t space[5] = {0, 0, 0, 0, 0};
  static const std::uint8_t comma[5] = {0x00, 0x50, 0x30, 0x00, 0x00};
  static const std::uint8_t period[5] = {0x00, 0x60, 0x60, 0x00, 0x00};
  static const std::uint8_t colon[5] = {0x00, 0x36, 0x36, 0x00, 0x00};
  static const std::uint8_t slash[5] = {0x20, 0x10, 0x08, 0x04, 0x02};
  static const std::uint8_t dash[5] = {0x08, 0x08, 0x08, 0x08, 0x08};
  static const std::uint8_t lparen[5] = {0x00, 0x1C, 0x22, 0x41, 0x00};
  static const std::uint8_t rparen[5] = {0x00, 0x41, 0x22, 0x1C, 0x00};
  static const std::uint8_t under[5] = {0x40, 0x40, 0x40, 0x40, 0x40};
  static const std::uint8_t quest[5] = {0x02, 0x01, 0x51, 0x09, 0x06};

  const unsigned char u = static_cast<unsigned char>(std::toupper(static_cast<unsigned char>(c)));
  if (u >= '0' && u <= '9') return digits[u - '0'];
  if (u >= 'A' && u <= 'Z') return letters[u - 'A'];
  switch (u) {
    case ' ': return space;
    case ',': return comma;
    case '.': return period;
    case ':': return colon;
    case '/': return slash;
    case '-': return dash;
    case '(': return lparen;
    case ')': return rparen;
    case '_': return under;
    default: return quest;
  }
}

inline void put_pixel(ImageU8& img, int x, int y, const RgbU8& c) {
  if (x < 0 || y < 0 || x >= img.dim(1) || y >= img.dim(0)) return;
  img(y, x, 0) = c.r;
  img(y, x, 1) = c.g;
  img(y, x, 2) = c.b;
}

inline void draw_text(ImageU8& img, int x, int y, const std::string& text, const RgbU8& color) {
  int cx = x;
  for (char ch : text) {
    const std::uint8_t* g = glyph5x7(ch);
    for (int col = 0; col < 5; ++col)
      for (int row = 0; row < 7; ++row)
        if (g[col] & (1u << row)) put_pixel(img, cx + col, y + row, color);
    cx += 6;
  }
}

inline void draw_rect(ImageU8& img, const Box& b, const RgbU8& color, int thickness = 1) {
  const int x0 = static_cast<int>(std::lround(b.x0)), x1 = static_cast<int>(std::lround(b.x1));
  const int y0 = static_cast<int>(std::lround(b.y0)), y1 = static_cast<int>(std::lround(b.y1));
  for (int t = 0; t < thickness; ++t) {
    for (int x = x0; x < x1; ++x) {
      put_pixel(img, x, y0 + t, color);
      put_pixel(img, x, y1 - 1 - t, color);
    }
    for (int y = y0; y < y1; ++y) {
      put_pixel(img, x0 + t, y, color);
      put_pixel(img, x1 - 1 - t, y, color);
    }
  }
}

inline ImageU8 upscale_nearest(const ImageU8& img, int factor) {
  const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
  ImageU8 out({h * factor, w * factor, c});
  for (int y = 0; y < h * factor; ++y)
    for (int x = 0; x < w * factor; ++x)
      for (int k = 0; k < c; ++k) out(y, x, k) = img(y / factor, x / factor, k);
  return out;
}

}  // namespace overlay

inline std::string triplet_label(const Triplet& t, const Vocabulary& vocab) {
  return vocab.instruments()[static_cast<std::size_t>(t[0])] + "," +
         vocab.verbs()[static_cast<std::size_t>(t[1])] + "," +
         vocab.targets()[static_cast<std::size_t>(t[2])];
}

/// Inspection rendering: the frame upscaled, ground-truth instrument boxes in
/// white, predicted boxes green when they hit a same-instrument truth box at
/// IoU >= 0.5 and red otherwise, plus a caption strip listing the decoded
/// triplets (green = in the ground truth, red = not) and any missed truth.
inline ImageU8 render_overlay(const Image& frame, const std::vector<InstrumentBox>& predicted,
                              const std::vector<InstrumentBox>& truth,
                              const std::vector<ScoredTriplet>& decoded,
                              const std::set<Triplet>& gt_triplets, const Vocabulary& vocab,
                              int scale = 4) {
  ImageU8 base = overlay::upscale_nearest(quantize_image(frame), scale);
  const int w = base.dim(1);

  std::vector<std::pair<std::string, RgbU8>> lines;
  std::set<Triplet> hit;
  for (const ScoredTriplet& st : decoded) {
    const bool correct = gt_triplets.count(st.triplet) > 0;
    if (correct) hit.insert(st.triplet);
    const int pct = static_cast<int>(std::lround(st.score * 100.0));
    lines.push_back({triplet_label(st.triplet, vocab) + " " + std::to_string(pct) + "%",
                     correct ? overlay::kGreen : overlay::kRed});
  }
  for (const Triplet& t : gt_triplets)
    if (!hit.count(t)) lines.push_back({"miss " + triplet_label(t, vocab), overlay::kWhite});
  if (lines.size() > 6) lines.resize(6);

  const int strip_h = 4 + 8 * static_cast<int>(lines.size());
  ImageU8 out({base.dim(0) + strip_h, w, 3});
  out.zero();
  for (int y = 0; y < base.dim(0); ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < 3; ++k) out(y, x, k) = base(y, x, k);

  const auto scaled = [scale](const Box& b) {
    return Box{b.x0 * scale, b.y0 * scale, b.x1 * scale, b.y1 * scale};
  };
  for (const InstrumentBox& g : truth) overlay::draw_rect(out, scaled(g.box), overlay::kWhite, 1);

  std::vector<InstrumentBox> preds = predicted;
  std::stable_sort(preds.begin(), preds.end(),
                   [](const InstrumentBox& a, const InstrumentBox& b) { return a.score > b.score; });
  std::vector<bool> used(truth.size(), false);
  for (const InstrumentBox& p : preds) {
    bool matched = false;
    for (std::size_t g = 0; g < truth.size(); ++g) {
      if (used[g] || truth[g].instrument != p.instrument) continue;
      if (iou(p.box, truth[g].box) >= 0.5) {
        used[g] = true;
        matched = true;
        break;
      }
    }
    overlay::draw_rect(out, scaled(p.box), matched ? overlay::kGreen : overlay::kRed, 1);
  }

  int ty = base.dim(0) + 2;
  for (const auto& [text, color] : lines) {
    overlay::draw_text(out, 2, ty, text.substr(0, static_cast<std::size_t>((w - 4) / 6)), color);
    ty += 8;
  }
  return out;
}

}  // namespace triplab
