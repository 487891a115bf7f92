#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nerfloc {

/// Row-major interleaved float image.
template <int Channels>
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, float fill = 0.f) : width(w), height(h), data(size_t(w) * h * Channels, fill) {}

  static constexpr int channels = Channels;
  bool empty() const { return data.empty(); }
  size_t pixel_count() const { return size_t(width) * height; }

  float& at(int x, int y, int c = 0) { return data[(size_t(y) * width + x) * Channels + c]; }
  float at(int x, int y, int c = 0) const { return data[(size_t(y) * width + x) * Channels + c]; }

  bool same_shape(const Image& o) const { return width == o.width && height == o.height; }
};

using RgbImage = Image<3>;
using GrayImage = Image<1>;

/// Luma 0.299/0.587/0.114, same value range as the input.
GrayImage to_gray(const RgbImage& rgb);

/// Separable box blur of odd width `kernel`, clamped borders.
RgbImage box_blur(const RgbImage& img, int kernel);
GrayImage box_blur(const GrayImage& img, int kernel);

/// Binary P6, 8-bit. Values are clamped to [0,1] and rounded.
void write_ppm(const std::string& path, const RgbImage& img);
RgbImage read_ppm(const std::string& path);

/// Binary P5, 16-bit big-endian.
void write_pgm16(const std::string& path, int width, int height, const std::vector<uint16_t>& values);
std::vector<uint16_t> read_pgm16(const std::string& path, int& width, int& height);

/// Depth in meters to 16-bit millimeters (0 = undefined), and back.
std::vector<uint16_t> encode_depth_mm(const GrayImage& depth);
GrayImage decode_depth_mm(int width, int height, const std::vector<uint16_t>& mm);

/// Quantizes to 8 bits and back, as a PPM round trip would.
RgbImage quantize8(const RgbImage& img);

}  // namespace nerfloc
