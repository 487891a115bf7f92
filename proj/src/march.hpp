#pragma once

// Ray-marching helpers shared by the renderer and the gradient kernel.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "nerfloc/field.hpp"
#include "nerfloc/geom.hpp"
#include "nerfloc/render.hpp"

namespace nerfloc::detail {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Grid geometry hoisted out of the per-sample loop.
struct GridGeometry {
  double lo[3], hi[3], size[3];
  int n[3];
  size_t stride_y, stride_z;

  explicit GridGeometry(const RadianceField& f) {
    const Eigen::Vector3d vs = f.voxel_size();
    for (int a = 0; a < 3; ++a) {
      lo[a] = f.bbox_min()[a];
      hi[a] = f.bbox_max()[a];
      size[a] = vs[a];
      n[a] = f.dims()[a];
    }
    stride_y = size_t(n[0]);
    stride_z = size_t(n[0]) * size_t(n[1]);
  }

  bool stencil(const Eigen::Vector3d& p, TrilinearStencil& out) const {
    int i0[3], i1[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
      if (!(p[a] >= lo[a] && p[a] <= hi[a])) return false;
      const double g = (p[a] - lo[a]) / size[a] - 0.5;
      const double fl = std::floor(g);
      f[a] = g - fl;
      const int i = int(fl);
      i0[a] = std::clamp(i, 0, n[a] - 1);
      i1[a] = std::clamp(i + 1, 0, n[a] - 1);
    }
    const size_t x0 = size_t(i0[0]), x1 = size_t(i1[0]);
    const size_t y0 = i0[1] * stride_y, y1 = i1[1] * stride_y;
    const size_t z0 = i0[2] * stride_z, z1 = i1[2] * stride_z;
    const double fx = f[0], fy = f[1], fz = f[2];
    const double gx = 1 - fx, gy = 1 - fy, gz = 1 - fz;
    out.index = {uint32_t(x0 + y0 + z0), uint32_t(x1 + y0 + z0), uint32_t(x0 + y1 + z0), uint32_t(x1 + y1 + z0),
                 uint32_t(x0 + y0 + z1), uint32_t(x1 + y0 + z1), uint32_t(x0 + y1 + z1), uint32_t(x1 + y1 + z1)};
    out.weight = {gx * gy * gz, fx * gy * gz, gx * fy * gz, fx * fy * gz,
                  gx * gy * fz, fx * gy * fz, gx * fy * fz, fx * fy * fz};
    return true;
  }
};

/// Offset of sample i inside its stratum, in [0,1).
inline double stratum_offset(const RenderOptions& opts, uint64_t ray_index, int i) {
  if (!opts.stratified_jitter) return 0.5;
  const uint64_t h = splitmix64(splitmix64(opts.seed ^ splitmix64(ray_index)) + uint64_t(i));
  return double(h >> 11) * 0x1.0p-53;
}

/// Clips [t_near, t_far] to the field bbox. Returns false if nothing is left.
inline bool march_interval(const RadianceField& field, const Ray& ray, const RenderOptions& opts, double& a,
                           double& b) {
  double t0 = opts.t_near, t1 = opts.t_far;
  for (int k = 0; k < 3; ++k) {
    const double lo = field.bbox_min()[k], hi = field.bbox_max()[k];
    const double o = ray.origin[k], d = ray.direction[k];
    if (std::abs(d) < 1e-15) {
      if (o < lo || o > hi) return false;
      continue;
    }
    double ta = (lo - o) / d, tb = (hi - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t1 > t0)) return false;
  a = t0;
  b = t1;
  return true;
}

}  // namespace nerfloc::detail
