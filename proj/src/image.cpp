#include "nerfloc/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "nerfloc/error.hpp"

namespace nerfloc {

namespace {

uint8_t to_byte(float v) { return uint8_t(std::lround(std::clamp(v, 0.f, 1.f) * 255.f)); }

template <int C>
Image<C> box_blur_impl(const Image<C>& img, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) throw Error(ErrorCode::InvalidArgument, "box blur width must be odd");
  if (kernel == 1) return img;
  const int r = kernel / 2;
  const int w = img.width, h = img.height;
  Image<C> tmp(w, h), out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < C; ++c) {
        double s = 0;
        for (int k = -r; k <= r; ++k) s += img.at(std::clamp(x + k, 0, w - 1), y, c);
        tmp.at(x, y, c) = float(s / kernel);
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < C; ++c) {
        double s = 0;
        for (int k = -r; k <= r; ++k) s += tmp.at(x, std::clamp(y + k, 0, h - 1), c);
        out.at(x, y, c) = float(s / kernel);
      }
  return out;
}

// Reads the P5/P6 header: magic, width, height, maxval, one whitespace byte.
void read_pnm_header(std::istream& is, const std::string& expected_magic, int& w, int& h, int& maxval,
                     const std::string& path) {
  auto next_token = [&]() {
    std::string tok;
    char ch;
    while (is.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(is, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(ch);
    }
    return tok;
  };
  if (next_token() != expected_magic) throw Error(ErrorCode::Io, "not a " + expected_magic + " file: " + path);
  try {
    w = std::stoi(next_token());
    h = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    throw Error(ErrorCode::Io, "malformed header: " + path);
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw Error(ErrorCode::Io, "bad header: " + path);
}

}  // namespace

GrayImage to_gray(const RgbImage& rgb) {
  GrayImage g(rgb.width, rgb.height);
  for (size_t i = 0; i < rgb.pixel_count(); ++i)
    g.data[i] = 0.299f * rgb.data[3 * i] + 0.587f * rgb.data[3 * i + 1] + 0.114f * rgb.data[3 * i + 2];
  return g;
}

RgbImage box_blur(const RgbImage& img, int kernel) { return box_blur_impl(img, kernel); }
GrayImage box_blur(const GrayImage& img, int kernel) { return box_blur_impl(img, kernel); }

void write_ppm(const std::string& path, const RgbImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + path);
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<uint8_t> bytes(img.data.size());
  std::transform(img.data.begin(), img.data.end(), bytes.begin(), to_byte);
  os.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!os) throw Error(ErrorCode::Io, "write failed: " + path);
}

RgbImage read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, "cannot read " + path);
  int w, h, maxval;
  read_pnm_header(is, "P6", w, h, maxval, path);
  if (maxval != 255) throw Error(ErrorCode::Io, "only 8-bit PPM supported: " + path);
  std::vector<uint8_t> bytes(size_t(w) * h * 3);
  is.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!is) throw Error(ErrorCode::Io, "truncated PPM: " + path);
  RgbImage img(w, h);
  for (size_t i = 0; i < bytes.size(); ++i) img.data[i] = float(bytes[i]) / 255.f;
  return img;
}

void write_pgm16(const std::string& path, int width, int height, const std::vector<uint16_t>& values) {
  if (values.size() != size_t(width) * height) throw Error(ErrorCode::DimensionMismatch, "write_pgm16");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + path);
  os << "P5\n" << width << " " << height << "\n65535\n";
  std::vector<uint8_t> bytes(values.size() * 2);
  for (size_t i = 0; i < values.size(); ++i) {
    bytes[2 * i] = uint8_t(values[i] >> 8);
    bytes[2 * i + 1] = uint8_t(values[i] & 0xff);
  }
  os.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!os) throw Error(ErrorCode::Io, "write failed: " + path);
}

std::vector<uint16_t> read_pgm16(const std::string& path, int& width, int& height) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, "cannot read " + path);
  int maxval;
  read_pnm_header(is, "P5", width, height, maxval, path);
  if (maxval < 256) throw Error(ErrorCode::Io, "expected 16-bit PGM: " + path);
  std::vector<uint8_t> bytes(size_t(width) * height * 2);
  is.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!is) throw Error(ErrorCode::Io, "truncated PGM: " + path);
  std::vector<uint16_t> out(size_t(width) * height);
  for (size_t i = 0; i < out.size(); ++i) out[i] = uint16_t((bytes[2 * i] << 8) | bytes[2 * i + 1]);
  return out;
}

std::vector<uint16_t> encode_depth_mm(const GrayImage& depth) {
  std::vector<uint16_t> out(depth.data.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double mm = std::round(double(depth.data[i]) * 1000.0);
    out[i] = uint16_t(std::clamp(mm, 0.0, 65535.0));
  }
  return out;
}

GrayImage decode_depth_mm(int width, int height, const std::vector<uint16_t>& mm) {
  if (mm.size() != size_t(width) * height) throw Error(ErrorCode::DimensionMismatch, "decode_depth_mm");
  GrayImage d(width, height);
  for (size_t i = 0; i < mm.size(); ++i) d.data[i] = float(mm[i]) / 1000.f;
  return d;
}

RgbImage quantize8(const RgbImage& img) {
  RgbImage out = img;
  for (auto& v : out.data) v = float(to_byte(v)) / 255.f;
  return out;
}

}  // namespace nerfloc
