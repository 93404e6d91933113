#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace sfnet {

// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct RasterImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  RasterImage() = default;
  RasterImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::uint8_t* at(int x, int y) { return &pixels[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* at(int x, int y) const {
    return &pixels[(static_cast<std::size_t>(y) * width + x) * 3];
  }
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    std::uint8_t* p = at(x, y);
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
  bool operator==(const RasterImage&) const = default;
};

// 8-bit single-channel raster.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
  bool operator==(const GrayImage&) const = default;
};

// Binary PPM (P6) / PGM (P5) with maxval 255 and the header
// "P6\n<w> <h>\n255\n". Readers accept any whitespace and comments in the
// header and throw IoError naming the file on malformed or short data.
std::vector<std::uint8_t> encode_ppm(const RasterImage& image);
void write_ppm(const RasterImage& image, const std::filesystem::path& path);
RasterImage read_ppm(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_pgm(const GrayImage& image);
void write_pgm(const GrayImage& image, const std::filesystem::path& path);
GrayImage read_pgm(const std::filesystem::path& path);

// Whole-file helpers that throw IoError with the path.
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace sfnet
