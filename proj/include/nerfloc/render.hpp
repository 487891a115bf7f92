#pragma once

#include <Eigen/Core>

#include <cstdint>

#include "nerfloc/field.hpp"
#include "nerfloc/geom.hpp"
#include "nerfloc/image.hpp"

namespace nerfloc {

struct RenderOptions {
  int samples_per_ray = 128;
  double t_near = 0.05;
  double t_far = 10.0;
  Eigen::Vector3d background = Eigen::Vector3d::Ones();
  /// Per-sample jitter within each stratum, seeded from (seed, ray index).
  bool stratified_jitter = false;
  uint64_t seed = 0;
  /// Depth is reported as 0 where accumulated opacity falls below this.
  double depth_opacity_threshold = 1e-6;

  void validate() const;
};

struct RayRender {
  Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
  double depth = 0;
  double opacity = 0;
  /// Transmittance remaining past the last sample.
  double transmittance = 1;
};

/// Emission-absorption quadrature. Samples are stratified over the part of
/// [t_near, t_far] that lies inside the field bbox; stratum width is delta_i.
RayRender render_ray(const RadianceField& field, const Ray& ray, const RenderOptions& opts,
                     uint64_t ray_index = 0);

struct RenderedView {
  RgbImage rgb;
  GrayImage depth;  ///< planar z-depth in the camera frame, meters; 0 = undefined
  GrayImage opacity;
};

/// Rows are rendered in parallel; output is bit-identical to render_image_serial.
RenderedView render_image(const RadianceField& field, const CameraModel& cam, const Pose& pose,
                          const RenderOptions& opts);
RenderedView render_image_serial(const RadianceField& field, const CameraModel& cam, const Pose& pose,
                                 const RenderOptions& opts);

}  // namespace nerfloc
