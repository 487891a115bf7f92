#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nerfloc/image.hpp"

namespace nerfloc {

/// Axis-aligned voxel grid of (density, RGB emission). Values live at voxel
/// centers; storage is x-fastest. Density is in 1/m and kept >= 0, color in [0,1].
class RadianceField {
 public:
  static constexpr uint32_t kFormatVersion = 1;

  RadianceField() = default;
  RadianceField(const Eigen::Vector3f& bbox_min, const Eigen::Vector3f& bbox_max, std::array<int, 3> dims,
                float init_density = 0.f, const Eigen::Vector3f& init_color = Eigen::Vector3f::Zero());

  const Eigen::Vector3f& bbox_min() const { return bbox_min_; }
  const Eigen::Vector3f& bbox_max() const { return bbox_max_; }
  const std::array<int, 3>& dims() const { return dims_; }
  size_t voxel_count() const { return density_.size(); }

  Eigen::Vector3d voxel_size() const;
  Eigen::Vector3d voxel_center(int x, int y, int z) const;
  bool contains(const Eigen::Vector3d& p) const;

  size_t index(int x, int y, int z) const { return size_t(x) + size_t(dims_[0]) * (size_t(y) + size_t(dims_[1]) * z); }

  std::vector<float>& density() { return density_; }
  const std::vector<float>& density() const { return density_; }
  /// Interleaved RGB, 3 floats per voxel.
  std::vector<float>& color() { return color_; }
  const std::vector<float>& color() const { return color_; }

  void set_voxel(size_t idx, float density, const Eigen::Vector3f& rgb);

  /// Clamps density to >= 0 and color to [0,1].
  void enforce_bounds();

  bool operator==(const RadianceField&) const = default;

 private:
  Eigen::Vector3f bbox_min_ = Eigen::Vector3f::Zero();
  Eigen::Vector3f bbox_max_ = Eigen::Vector3f::Ones();
  std::array<int, 3> dims_{0, 0, 0};
  std::vector<float> density_;
  std::vector<float> color_;
};

struct FieldSample {
  double density = 0;
  Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
};

/// Eight voxel indices and trilinear weights around a point. Corners past the
/// outermost voxel centers are clamped to the edge voxel.
struct TrilinearStencil {
  std::array<uint32_t, 8> index{};
  std::array<double, 8> weight{};
};

/// Returns false (and leaves the stencil untouched) when p is outside the bbox.
bool trilinear_stencil(const RadianceField& field, const Eigen::Vector3d& p, TrilinearStencil& out);

/// Points outside the bbox return density 0 and color (0,0,0).
FieldSample sample_field(const RadianceField& field, const Eigen::Vector3d& p);

/// 10 log10(1 / MSE) over all channels, capped at 100 dB.
double psnr(const RgbImage& a, const RgbImage& b);

/// Little-endian: "RFLD", u32 version, f32 bbox[6], u32 dims[3], f32 density[n],
/// f32 color[3n], u32 CRC32 of all preceding bytes.
std::vector<uint8_t> serialize_field(const RadianceField& field);
RadianceField deserialize_field(const std::vector<uint8_t>& bytes);
size_t field_file_size(std::array<int, 3> dims);

/// Returns the number of bytes written.
size_t save_field(const RadianceField& field, const std::string& path);
RadianceField load_field(const std::string& path);

}  // namespace nerfloc
