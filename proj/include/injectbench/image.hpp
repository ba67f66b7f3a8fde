#pragma once

// Minimal RGB raster with PPM (P6) and PNG I/O, a fixed 8x16 monospace glyph
// grid for deterministic text rasterisation, and overlay annotation.

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <png.h>

#include "injectbench/core.hpp"
#include "injectbench/digest.hpp"

namespace injectbench {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Image {
 public:
  Image() = default;
  Image(int width, int height, Rgb fill = {255, 255, 255})
      : width_(width), height_(height), pixels_(static_cast<std::size_t>(width) * height * 3) {
    if (width <= 0 || height <= 0) throw ImageError("image dimensions must be positive");
    for (std::size_t i = 0; i < pixels_.size(); i += 3) {
      pixels_[i] = fill.r;
      pixels_[i + 1] = fill.g;
      pixels_[i + 2] = fill.b;
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return pixels_.empty(); }
  const std::vector<std::uint8_t>& data() const { return pixels_; }
  std::vector<std::uint8_t>& data() { return pixels_; }

  Rgb at(int x, int y) const {
    const std::size_t i = index(x, y);
    return {pixels_[i], pixels_[i + 1], pixels_[i + 2]};
  }
  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
    const std::size_t i = index(x, y);
    pixels_[i] = c.r;
    pixels_[i + 1] = c.g;
    pixels_[i + 2] = c.b;
  }

  void fill_rect(const BBox& b, Rgb c) {
    const BBox clipped = clip_to(b, width_, height_);
    for (int y = clipped.y; y < clipped.bottom(); ++y)
      for (int x = clipped.x; x < clipped.right(); ++x) set(x, y, c);
  }

  Image crop(const BBox& b) const {
    const BBox clipped = clip_to(b, width_, height_);
    if (clipped.area() == 0) throw ImageError("crop outside image");
    Image out(clipped.w, clipped.h);
    for (int y = 0; y < clipped.h; ++y)
      for (int x = 0; x < clipped.w; ++x) out.set(x, y, at(clipped.x + x, clipped.y + y));
    return out;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int x, int y) const {
    return (static_cast<std::size_t>(y) * width_ + x) * 3;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

inline std::string encode_ppm(const Image& img) {
  std::string out = "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) +
                    "\n255\n";
  out.append(reinterpret_cast<const char*>(img.data().data()), img.data().size());
  return out;
}

inline Image decode_ppm(std::string_view bytes) {
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return std::string(bytes.substr(start, pos - start));
  };
  if (next_token() != "P6") throw ImageError("not a binary PPM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token());
    h = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    throw ImageError("malformed PPM header");
  }
  if (maxval != 255 || w <= 0 || h <= 0) throw ImageError("unsupported PPM");
  ++pos;  // single whitespace after maxval
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() < pos + need) throw ImageError("truncated PPM");
  Image img(w, h);
  std::copy(bytes.begin() + pos, bytes.begin() + pos + need, img.data().begin());
  return img;
}

inline std::string encode_png(const Image& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.data().data(), 0, nullptr)) {
    throw ImageError(std::string("png encode: ") + image.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.data().data(), 0, nullptr)) {
    throw ImageError(std::string("png encode: ") + image.message);
  }
  out.resize(size);
  return out;
}

inline Image decode_png(std::string_view bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw ImageError(std::string("png decode: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  Image img(static_cast<int>(image.width), static_cast<int>(image.height));
  if (!png_image_finish_read(&image, nullptr, img.data().data(), 0, nullptr)) {
    png_image_free(&image);
    throw ImageError(std::string("png decode: ") + image.message);
  }
  return img;
}

inline bool looks_like_png(std::string_view bytes) {
  return bytes.size() >= 8 && bytes.substr(0, 8) == std::string_view("\x89PNG\r\n\x1a\n", 8);
}

inline Image decode_image(std::string_view bytes) {
  if (looks_like_png(bytes)) return decode_png(bytes);
  return decode_ppm(bytes);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Image load_image(const std::filesystem::path& path) {
  return decode_image(read_file(path));
}

inline std::string encode_for_path(const Image& img, const std::filesystem::path& path) {
  return path.extension() == ".png" ? encode_png(img) : encode_ppm(img);
}

inline void save_image(const Image& img, const std::filesystem::path& path) {
  const std::string bytes = encode_for_path(img, path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::string mime_type_for(std::string_view bytes) {
  return looks_like_png(bytes) ? "image/png" : "image/x-portable-pixmap";
}

// ---------------------------------------------------------------------------
// Glyph grid
// ---------------------------------------------------------------------------

inline constexpr int kGlyphWidth = 8;
inline constexpr int kGlyphHeight = 16;

/// 8x16 bitmap for a byte value; rows 0 and 15 and column 7 are always blank
/// so adjacent glyphs never touch. Space is empty.
inline std::array<std::uint8_t, kGlyphHeight> glyph_bitmap(unsigned char c) {
  std::array<std::uint8_t, kGlyphHeight> rows{};
  if (c == ' ') return rows;
  std::uint64_t state = 0xC0FFEEULL ^ (static_cast<std::uint64_t>(c) * 0x100000001B3ULL);
  for (int r = 1; r < kGlyphHeight - 1; ++r) {
    rows[r] = static_cast<std::uint8_t>(splitmix64(state) & 0xFE);
  }
  rows[2] |= 0x40;  // every visible glyph has at least one set pixel
  return rows;
}

/// Columns x rows of glyph cells available in a box.
struct GlyphCapacity {
  int columns = 0;
  int rows = 0;
  std::size_t cells() const { return static_cast<std::size_t>(columns) * rows; }
};

constexpr GlyphCapacity glyph_capacity(const BBox& b) {
  return {b.w / kGlyphWidth, b.h / kGlyphHeight};
}

/// True when `text` does not fit the box under character wrapping.
inline bool text_overflows(const BBox& b, std::string_view text) {
  return text.size() > glyph_capacity(b).cells();
}

/// Fills `box` with `bg` and draws `text` character-wrapped on the glyph grid,
/// clipping at the box edge. Returns true if text was clipped.
inline bool draw_text(Image& img, const BBox& box, std::string_view text, Rgb fg, Rgb bg) {
  const BBox b = clip_to(box, img.width(), img.height());
  img.fill_rect(b, bg);
  const GlyphCapacity cap = glyph_capacity(b);
  std::size_t i = 0;
  for (int row = 0; row < cap.rows && i < text.size(); ++row) {
    for (int col = 0; col < cap.columns && i < text.size(); ++col, ++i) {
      const auto bits = glyph_bitmap(static_cast<unsigned char>(text[i]));
      const int ox = b.x + col * kGlyphWidth;
      const int oy = b.y + row * kGlyphHeight;
      for (int gy = 0; gy < kGlyphHeight; ++gy)
        for (int gx = 0; gx < kGlyphWidth; ++gx)
          if (bits[gy] & (0x80 >> gx)) img.set(ox + gx, oy + gy, fg);
    }
  }
  return i < text.size();
}

/// Thin rectangle outline (not filled), clipped to the image.
inline void draw_outline(Image& img, const BBox& b, Rgb c, int thickness = 2) {
  for (int t = 0; t < thickness; ++t) {
    for (int x = b.x; x < b.right(); ++x) {
      img.set(x, b.y + t, c);
      img.set(x, b.bottom() - 1 - t, c);
    }
    for (int y = b.y; y < b.bottom(); ++y) {
      img.set(b.x + t, y, c);
      img.set(b.right() - 1 - t, y, c);
    }
  }
}

inline void draw_label(Image& img, int x, int y, std::string_view label, Rgb fg, Rgb bg) {
  const BBox box{x, y, static_cast<int>(label.size()) * kGlyphWidth, kGlyphHeight};
  draw_text(img, box, label, fg, bg);
}

/// Overlay for moderators: each box outlined with its label drawn above it
/// (or inside when there is no room above). Never persisted into samples.
inline Image annotate_boxes(const Image& base,
                            const std::vector<std::pair<BBox, std::string>>& boxes) {
  Image out = base;
  const Rgb red{220, 20, 20};
  const Rgb white{255, 255, 255};
  for (const auto& [box, label] : boxes) {
    draw_outline(out, box, red);
    const int ly = box.y >= kGlyphHeight ? box.y - kGlyphHeight : box.y;
    draw_label(out, box.x, ly, label, white, red);
  }
  return out;
}

}  // namespace injectbench
