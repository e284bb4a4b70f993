#pragma once

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "triplab/hash.hpp"
#include "triplab/tensor.hpp"

namespace triplab {

struct ImageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Images move through the pipeline as float tensors (H, W, 3) in [0, 1] and
/// are stored on disk as 8-bit RGB PNG.
using Image = Tensor<float>;
using ImageU8 = Tensor<std::uint8_t>;

inline ImageU8 quantize_image(const Image& img) {
  ImageU8 out(img.shape());
  for (std::int64_t i = 0; i < img.size(); ++i) {
    float v = img[i];
    if (v < 0.f) v = 0.f;
    if (v > 1.f) v = 1.f;
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.f));
  }
  return out;
}

inline Image dequantize_image(const ImageU8& img) {
  Image out(img.shape());
  for (std::int64_t i = 0; i < img.size(); ++i) out[i] = static_cast<float>(img[i]) / 255.f;
  return out;
}

namespace pngdetail {

inline void put_be32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

inline std::uint32_t get_be32(const unsigned char* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline void append_chunk(std::string& out, const char type[4], const std::string& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  const auto crc =
      ::crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace pngdetail

/// Encode an 8-bit RGB image as a non-interlaced PNG (filter None, zlib
/// level 6). The byte stream is a pure function of the pixels, which the
/// reproducibility contract of the image store relies on.
inline std::string png_encode(const ImageU8& img) {
  if (img.rank() != 3 || img.dim(2) != 3) throw ImageError("png_encode expects an (H, W, 3) image");
  const int h = img.dim(0), w = img.dim(1);
  const std::size_t stride = static_cast<std::size_t>(w) * 3;
  std::vector<unsigned char> raw(static_cast<std::size_t>(h) * (stride + 1));
  for (int y = 0; y < h; ++y) {
    unsigned char* row = raw.data() + static_cast<std::size_t>(y) * (stride + 1);
    row[0] = 0;  // filter: None
    std::memcpy(row + 1, img.data() + static_cast<std::size_t>(y) * stride, stride);
  }

  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw ImageError("png_encode: zlib compression failed");
  compressed.resize(bound);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  pngdetail::put_be32(ihdr, static_cast<std::uint32_t>(w));
  pngdetail::put_be32(ihdr, static_cast<std::uint32_t>(h));
  ihdr += '\x08';  // bit depth
  ihdr += '\x02';  // color type: truecolor
  ihdr += '\x00';  // compression
  ihdr += '\x00';  // filter method
  ihdr += '\x00';  // no interlace
  pngdetail::append_chunk(out, "IHDR", ihdr);
  pngdetail::append_chunk(out, "IDAT",
                          std::string(reinterpret_cast<const char*>(compressed.data()), compressed.size()));
  pngdetail::append_chunk(out, "IEND", "");
  return out;
}

/// Decode an 8-bit RGB non-interlaced PNG. Handles all five scanline filters.
inline ImageU8 png_decode(const std::string& bytes) {
  static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
    throw ImageError("png_decode: not a PNG stream");

  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  std::size_t pos = 8;
  int w = 0, h = 0;
  std::string idat;
  bool saw_ihdr = false;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = pngdetail::get_be32(p + pos);
    if (pos + 12 + len > bytes.size()) throw ImageError("png_decode: truncated chunk");
    const std::string type(reinterpret_cast<const char*>(p + pos + 4), 4);
    const unsigned char* data = p + pos + 8;
    if (type == "IHDR") {
      if (len != 13) throw ImageError("png_decode: bad IHDR");
      w = static_cast<int>(pngdetail::get_be32(data));
      h = static_cast<int>(pngdetail::get_be32(data + 4));
      const int depth = data[8], color = data[9], interlace = data[12];
      if (depth != 8 || color != 2 || interlace != 0)
        throw ImageError("png_decode: only 8-bit RGB non-interlaced supported");
      saw_ihdr = true;
    } else if (type == "IDAT") {
      idat.append(reinterpret_cast<const char*>(data), len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || w <= 0 || h <= 0) throw ImageError("png_decode: missing IHDR");

  const std::size_t stride = static_cast<std::size_t>(w) * 3;
  uLongf raw_len = static_cast<uLongf>(static_cast<std::size_t>(h) * (stride + 1));
  std::vector<unsigned char> raw(raw_len);
  if (uncompress(raw.data(), &raw_len, reinterpret_cast<const Bytef*>(idat.data()),
                 static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw ImageError("png_decode: zlib inflate failed");

  ImageU8 img({h, w, 3});
  std::vector<unsigned char> prev(stride, 0);
  for (int y = 0; y < h; ++y) {
    const unsigned char* row = raw.data() + static_cast<std::size_t>(y) * (stride + 1);
    const int filter = row[0];
    unsigned char* out = img.data() + static_cast<std::size_t>(y) * stride;
    for (std::size_t x = 0; x < stride; ++x) {
      const int cur = row[1 + x];
      const int left = x >= 3 ? out[x - 3] : 0;
      const int up = prev[x];
      const int upleft = x >= 3 ? prev[x - 3] : 0;
      int v = 0;
      switch (filter) {
        case 0: v = cur; break;
        case 1: v = cur + left; break;
        case 2: v = cur + up; break;
        case 3: v = cur + (left + up) / 2; break;
        case 4: v = cur + pngdetail::paeth(left, up, upleft); break;
        default: throw ImageError("png_decode: unknown filter type");
      }
      out[x] = static_cast<unsigned char>(v & 0xff);
    }
    std::memcpy(prev.data(), out, stride);
  }
  return img;
}

inline void save_png(const ImageU8& img, const std::string& path) {
  write_file_bytes(path, png_encode(img));
}

inline ImageU8 load_png(const std::string& path) { return png_decode(read_file_bytes(path)); }

}  // namespace triplab
