#include "nerfloc/render.hpp"

#include "march.hpp"
#include "nerfloc/error.hpp"

namespace nerfloc {

void RenderOptions::validate() const {
  if (samples_per_ray < 2) throw Error(ErrorCode::InvalidArgument, "samples_per_ray must be >= 2");
  if (!(t_near > 0 && t_far > t_near)) throw Error(ErrorCode::InvalidArgument, "need 0 < t_near < t_far");
}

RayRender render_ray(const RadianceField& field, const Ray& ray, const RenderOptions& opts, uint64_t ray_index) {
  RayRender out;
  out.rgb = opts.background;
  double a, b;
  if (!detail::march_interval(field, ray, opts, a, b)) return out;

  const int n = opts.samples_per_ray;
  const double dt = (b - a) / n;
  const detail::GridGeometry grid(field);
  const float* dens = field.density().data();
  const float* col = field.color().data();
  double transmittance = 1.0, sum_w = 0.0, sum_wt = 0.0;
  Eigen::Vector3d acc = Eigen::Vector3d::Zero();
  TrilinearStencil st;
  for (int i = 0; i < n; ++i) {
    const double t = a + (i + detail::stratum_offset(opts, ray_index, i)) * dt;
    if (!grid.stencil(ray.origin + t * ray.direction, st)) continue;
    double sigma = 0, r = 0, g = 0, bl = 0;
    for (int k = 0; k < 8; ++k) {
      const double w = st.weight[k];
      const size_t v = st.index[k];
      sigma += w * dens[v];
      r += w * col[3 * v];
      g += w * col[3 * v + 1];
      bl += w * col[3 * v + 2];
    }
    const double survive = std::exp(-sigma * dt);
    const double w = transmittance * (1.0 - survive);
    acc += w * Eigen::Vector3d(r, g, bl);
    sum_w += w;
    sum_wt += w * t;
    transmittance *= survive;
  }
  out.rgb = acc + transmittance * opts.background;
  out.opacity = sum_w;
  out.transmittance = transmittance;
  if (sum_w >= std::max(opts.depth_opacity_threshold, 1e-6))
    out.depth = std::clamp(sum_wt / sum_w, opts.t_near, opts.t_far);
  return out;
}

namespace {

void render_row(const RadianceField& field, const CameraModel& cam, const Pose& pose, const RenderOptions& opts,
                int y, RenderedView& view) {
  for (int x = 0; x < cam.width; ++x) {
    const Ray ray = ray_for_pixel(cam, pose, Eigen::Vector2d(x, y));
    const uint64_t pixel = uint64_t(y) * uint64_t(cam.width) + uint64_t(x);
    const RayRender r = render_ray(field, ray, opts, pixel);
    for (int c = 0; c < 3; ++c) view.rgb.at(x, y, c) = float(r.rgb[c]);
    // Ray distance to planar z-depth: the camera-frame ray has unit z before normalization.
    const double u = (x - cam.cx) / cam.fx, v = (y - cam.cy) / cam.fy;
    view.depth.at(x, y) = float(r.depth / std::sqrt(u * u + v * v + 1.0));
    view.opacity.at(x, y) = float(r.opacity);
  }
}

RenderedView allocate_view(const CameraModel& cam) {
  return {RgbImage(cam.width, cam.height), GrayImage(cam.width, cam.height), GrayImage(cam.width, cam.height)};
}

}  // namespace

RenderedView render_image(const RadianceField& field, const CameraModel& cam, const Pose& pose,
                          const RenderOptions& opts) {
  opts.validate();
  RenderedView view = allocate_view(cam);
#pragma omp parallel for schedule(dynamic, 4)
  for (int y = 0; y < cam.height; ++y) render_row(field, cam, pose, opts, y, view);
  return view;
}

RenderedView render_image_serial(const RadianceField& field, const CameraModel& cam, const Pose& pose,
                                 const RenderOptions& opts) {
  opts.validate();
  RenderedView view = allocate_view(cam);
  for (int y = 0; y < cam.height; ++y) render_row(field, cam, pose, opts, y, view);
  return view;
}

}  // namespace nerfloc
