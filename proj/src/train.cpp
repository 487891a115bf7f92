#include "nerfloc/train.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <omp.h>

#include "march.hpp"
#include "nerfloc/error.hpp"

namespace nerfloc {

namespace {

// Per-ray result of the backward pass. Sample gradients (d/dsigma, d/dr,
// d/dg, d/db) are stored in a flat buffer at offset ray * samples_per_ray * 4.
struct RayGrad {
  double a = 0, dt = 0;
  bool hit = false;
  double loss = 0;
};

struct SampleScratch {
  std::vector<double> sigma, survive, trans;
  std::vector<Eigen::Vector3d> rgb;
  std::vector<char> inside;
  void resize(int n) {
    sigma.resize(n);
    survive.resize(n);
    trans.resize(n);
    rgb.resize(n);
    inside.resize(n);
  }
};

uint64_t ray_id_of(const RayBatch& batch, size_t r) { return batch.ray_ids.empty() ? r : batch.ray_ids[r]; }

void ray_backward(const RadianceField& field, const Ray& ray, const Eigen::Vector3d& target,
                  const RenderOptions& opts, uint64_t ray_id, double inv_count, RayGrad& out, double* sgrad,
                  SampleScratch& s) {
  const int n = opts.samples_per_ray;
  std::fill(sgrad, sgrad + 4 * n, 0.0);
  double a = 0, b = 0;
  out.hit = detail::march_interval(field, ray, opts, a, b);
  if (!out.hit) {
    const Eigen::Vector3d diff = opts.background - target;
    out.loss = diff.squaredNorm() * inv_count;
    return;
  }
  out.a = a;
  out.dt = (b - a) / n;
  const double dt = out.dt;
  s.resize(n);

  const detail::GridGeometry grid(field);
  const float* dens = field.density().data();
  const float* col = field.color().data();
  TrilinearStencil st;
  double transmittance = 1.0;
  Eigen::Vector3d acc = Eigen::Vector3d::Zero();
  for (int i = 0; i < n; ++i) {
    const double t = a + (i + detail::stratum_offset(opts, ray_id, i)) * dt;
    s.trans[i] = transmittance;
    s.inside[i] = grid.stencil(ray.origin + t * ray.direction, st);
    if (!s.inside[i]) {
      s.sigma[i] = 0;
      s.survive[i] = 1;
      s.rgb[i].setZero();
      continue;
    }
    double sigma = 0, r = 0, g = 0, bl = 0;
    for (int k = 0; k < 8; ++k) {
      const double w = st.weight[k];
      const size_t v = st.index[k];
      sigma += w * dens[v];
      r += w * col[3 * v];
      g += w * col[3 * v + 1];
      bl += w * col[3 * v + 2];
    }
    s.sigma[i] = sigma;
    s.rgb[i] = Eigen::Vector3d(r, g, bl);
    s.survive[i] = std::exp(-sigma * dt);
    const double w = transmittance * (1.0 - s.survive[i]);
    acc += w * s.rgb[i];
    transmittance *= s.survive[i];
  }
  const Eigen::Vector3d color = acc + transmittance * opts.background;
  const Eigen::Vector3d diff = color - target;
  out.loss = diff.squaredNorm() * inv_count;
  const Eigen::Vector3d dl_dc = 2.0 * diff * inv_count;

  // behind = dL/dC . (sum_{j>i} w_j c_j + T_final * background)
  double behind = transmittance * dl_dc.dot(opts.background);
  for (int i = n - 1; i >= 0; --i) {
    if (!s.inside[i]) continue;
    const double w = s.trans[i] * (1.0 - s.survive[i]);
    const double g_dot_c = dl_dc.dot(s.rgb[i]);
    double* out4 = sgrad + 4 * i;
    out4[0] = dt * (s.trans[i] * s.survive[i] * g_dot_c - behind);
    out4[1] = w * dl_dc[0];
    out4[2] = w * dl_dc[1];
    out4[3] = w * dl_dc[2];
    behind += w * g_dot_c;
  }
}

inline void add_sample(FieldGradient& grad, uint32_t v, double w, const double* g4) {
  grad.density[v] += w * g4[0];
  grad.color[3 * size_t(v)] += w * g4[1];
  grad.color[3 * size_t(v) + 1] += w * g4[2];
  grad.color[3 * size_t(v) + 2] += w * g4[3];
}

// Parallel forward/backward over rays into per-ray buffers.
void backward_all(const RadianceField& field, const RayBatch& batch, const RenderOptions& opts,
                  std::vector<RayGrad>& rays, std::vector<double>& sgrad, bool parallel) {
  const size_t count = batch.rays.size();
  const int n = opts.samples_per_ray;
  const double inv_count = 1.0 / (3.0 * double(count));
  rays.assign(count, {});
  sgrad.resize(count * size_t(n) * 4);
#pragma omp parallel if (parallel)
  {
    SampleScratch scratch;
#pragma omp for schedule(dynamic, 64)
    for (long r = 0; r < long(count); ++r)
      ray_backward(field, batch.rays[r], batch.targets[r], opts, ray_id_of(batch, r), inv_count, rays[r],
                   sgrad.data() + size_t(r) * n * 4, scratch);
  }
}

void scatter_serial(const RadianceField& field, const RayBatch& batch, const RenderOptions& opts,
                    const std::vector<RayGrad>& rays, const std::vector<double>& sgrad, FieldGradient& grad) {
  const detail::GridGeometry grid(field);
  const int n = opts.samples_per_ray;
  TrilinearStencil st;
  for (size_t r = 0; r < rays.size(); ++r) {
    if (!rays[r].hit) continue;
    const Ray& ray = batch.rays[r];
    const uint64_t id = ray_id_of(batch, r);
    for (int i = 0; i < n; ++i) {
      const double* g4 = sgrad.data() + (r * n + i) * 4;
      if (g4[0] == 0 && g4[1] == 0 && g4[2] == 0 && g4[3] == 0) continue;
      const double t = rays[r].a + (i + detail::stratum_offset(opts, id, i)) * rays[r].dt;
      if (!grid.stencil(ray.origin + t * ray.direction, st)) continue;
      for (int k = 0; k < 8; ++k) add_sample(grad, st.index[k], st.weight[k], g4);
    }
  }
}

double tv_term(const RadianceField& field, double tv_weight, FieldGradient& grad, bool parallel) {
  const auto [nx, ny, nz] = field.dims();
  const double pairs = double(nx - 1) * ny * nz + double(nx) * (ny - 1) * nz + double(nx) * ny * (nz - 1);
  if (tv_weight == 0.0 || pairs == 0) return 0.0;
  const float* d = field.density().data();
  std::vector<double> slice_sum(nz, 0.0);
  const double scale = 2.0 * tv_weight / pairs;
#pragma omp parallel for if (parallel) schedule(static)
  for (int z = 0; z < nz; ++z) {
    double acc = 0;
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        const size_t v = field.index(x, y, z);
        const double dv = d[v];
        double g = 0;
        // Each pair is counted once in the loss (forward neighbor) but
        // contributes to both endpoints' gradients.
        if (x + 1 < nx) { const double e = dv - d[v + 1]; acc += e * e; g += e; }
        if (y + 1 < ny) { const double e = dv - d[v + nx]; acc += e * e; g += e; }
        if (z + 1 < nz) { const double e = dv - d[v + size_t(nx) * ny]; acc += e * e; g += e; }
        if (x > 0) g += dv - d[v - 1];
        if (y > 0) g += dv - d[v - nx];
        if (z > 0) g += dv - d[v - size_t(nx) * ny];
        grad.density[v] += scale * g;
      }
    slice_sum[z] = acc;
  }
  double total = 0;
  for (double s : slice_sum) total += s;
  return tv_weight * total / pairs;
}

void reset_gradient(const RadianceField& field, FieldGradient& grad) {
  grad.density.assign(field.voxel_count(), 0.0);
  grad.color.assign(3 * field.voxel_count(), 0.0);
}

LossTerms finish_loss(const std::vector<RayGrad>& rays) {
  LossTerms terms;
  for (const auto& r : rays) terms.photometric += r.loss;
  return terms;
}

void check_batch(const RayBatch& batch, const RenderOptions& opts) {
  opts.validate();
  if (batch.rays.empty()) throw Error(ErrorCode::InvalidArgument, "empty ray batch");
  if (batch.targets.size() != batch.rays.size() || (!batch.ray_ids.empty() && batch.ray_ids.size() != batch.rays.size()))
    throw Error(ErrorCode::DimensionMismatch, "ray batch arrays differ in length");
}

// Each z-slab of voxels is owned by one task, which walks every sample in
// batch order. Per-voxel summation order therefore matches the serial path.
void scatter_slabs(const RadianceField& field, const RayBatch& batch, const RenderOptions& opts,
                   const std::vector<RayGrad>& rays, const std::vector<double>& sgrad, FieldGradient& grad) {
  const detail::GridGeometry grid(field);
  const int n = opts.samples_per_ray;
  const int nz = field.dims()[2];
  const size_t plane = grid.stride_z;
  constexpr int kSlabs = 16;
#pragma omp parallel for schedule(dynamic, 1)
  for (int slab = 0; slab < kSlabs; ++slab) {
    const int z0 = nz * slab / kSlabs, z1 = nz * (slab + 1) / kSlabs;
    if (z0 == z1) continue;
    TrilinearStencil st;
    for (size_t r = 0; r < rays.size(); ++r) {
      if (!rays[r].hit) continue;
      const Ray& ray = batch.rays[r];
      const uint64_t id = ray_id_of(batch, r);
      for (int i = 0; i < n; ++i) {
        const double* g4 = sgrad.data() + (r * n + i) * 4;
        if (g4[0] == 0 && g4[1] == 0 && g4[2] == 0 && g4[3] == 0) continue;
        const double t = rays[r].a + (i + detail::stratum_offset(opts, id, i)) * rays[r].dt;
        const Eigen::Vector3d p = ray.origin + t * ray.direction;
        const int iz = int(std::floor((p.z() - grid.lo[2]) / grid.size[2] - 0.5));
        if (std::clamp(iz + 1, 0, nz - 1) < z0 || std::clamp(iz, 0, nz - 1) >= z1) continue;
        if (!grid.stencil(p, st)) continue;
        for (int k = 0; k < 8; ++k) {
          const int vz = int(st.index[k] / plane);
          if (vz >= z0 && vz < z1) add_sample(grad, st.index[k], st.weight[k], g4);
        }
      }
    }
  }
}

}  // namespace

LossTerms loss_and_gradient_serial(const RadianceField& field, const RayBatch& batch, const RenderOptions& opts,
                                   double tv_weight, FieldGradient& grad) {
  check_batch(batch, opts);
  std::vector<RayGrad> rays;
  std::vector<double> sgrad;
  backward_all(field, batch, opts, rays, sgrad, false);
  reset_gradient(field, grad);
  scatter_serial(field, batch, opts, rays, sgrad, grad);
  LossTerms terms = finish_loss(rays);
  terms.total_variation = tv_term(field, tv_weight, grad, false);
  terms.total = terms.photometric + terms.total_variation;
  return terms;
}

LossTerms loss_and_gradient(const RadianceField& field, const RayBatch& batch, const RenderOptions& opts,
                            double tv_weight, FieldGradient& grad) {
  check_batch(batch, opts);
  std::vector<RayGrad> rays;
  std::vector<double> sgrad;
  backward_all(field, batch, opts, rays, sgrad, true);
  reset_gradient(field, grad);
  if (omp_get_max_threads() == 1) {
    scatter_serial(field, batch, opts, rays, sgrad, grad);
  } else {
    scatter_slabs(field, batch, opts, rays, sgrad, grad);
  }
  LossTerms terms = finish_loss(rays);
  terms.total_variation = tv_term(field, tv_weight, grad, true);
  terms.total = terms.photometric + terms.total_variation;
  return terms;
}

namespace {

inline void adam_update(float& param, double g, double& m, double& v, double lr, const AdamParams& p,
                        double bc1, double bc2) {
  m = p.beta1 * m + (1.0 - p.beta1) * g;
  v = p.beta2 * v + (1.0 - p.beta2) * g * g;
  const double step = lr * (m / bc1) / (std::sqrt(v / bc2) + p.epsilon);
  param = float(double(param) - step);
}

void adam_impl(RadianceField& field, const FieldGradient& grad, AdamState& state, const AdamParams& params,
               bool parallel) {
  const size_t n = field.voxel_count();
  if (grad.density.size() != n || grad.color.size() != 3 * n)
    throw Error(ErrorCode::DimensionMismatch, "gradient layout does not match field");
  if (state.m_density.size() != n) {
    state.m_density.assign(n, 0.0);
    state.v_density.assign(n, 0.0);
    state.m_color.assign(3 * n, 0.0);
    state.v_color.assign(3 * n, 0.0);
    state.step = 0;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(params.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(params.beta2, double(state.step));
  float* dens = field.density().data();
  float* col = field.color().data();
#pragma omp parallel for if (parallel) schedule(static)
  for (long i = 0; i < long(n); ++i) {
    adam_update(dens[i], grad.density[i], state.m_density[i], state.v_density[i], params.density_lr, params, bc1,
                bc2);
    // Clamp-at-write: a voxel pushed below zero sits at the boundary.
    dens[i] = std::max(dens[i], 0.f);
    for (int c = 0; c < 3; ++c) {
      const size_t j = 3 * size_t(i) + c;
      adam_update(col[j], grad.color[j], state.m_color[j], state.v_color[j], params.color_lr, params, bc1, bc2);
      col[j] = std::clamp(col[j], 0.f, 1.f);
    }
  }
}

}  // namespace

void adam_step(RadianceField& field, const FieldGradient& grad, AdamState& state, const AdamParams& params) {
  adam_impl(field, grad, state, params, true);
}

void adam_step_serial(RadianceField& field, const FieldGradient& grad, AdamState& state, const AdamParams& params) {
  adam_impl(field, grad, state, params, false);
}

void TrainConfig::validate() const {
  if (iterations < 0) throw Error(ErrorCode::InvalidArgument, "iterations must be >= 0");
  if (rays_per_batch <= 0) throw Error(ErrorCode::InvalidArgument, "rays_per_batch must be positive");
  if (!(learning_rate > 0 && density_learning_rate > 0 && epsilon > 0))
    throw Error(ErrorCode::InvalidArgument, "learning rates and epsilon must be positive");
  if (!(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1)) throw Error(ErrorCode::InvalidArgument, "Adam betas in (0,1)");
  if (tv_weight < 0) throw Error(ErrorCode::InvalidArgument, "tv_weight must be >= 0");
  if (!(holdout_fraction > 0 && holdout_fraction < 1))
    throw Error(ErrorCode::InvalidArgument, "holdout_fraction must be in (0,1)");
  render.validate();
}

std::vector<int> select_holdout(int n, double fraction) {
  if (n < 2) return {};
  const int count = std::clamp(int(std::lround(fraction * n)), 1, n - 1);
  std::vector<int> out;
  out.reserve(count);
  for (int k = 0; k < count; ++k) out.push_back(int((2 * k + 1) * int64_t(n) / (2 * count)));
  return out;
}

double mean_psnr(const RadianceField& field, const TrainingSet& data, const std::vector<int>& indices,
                 const RenderOptions& opts) {
  if (indices.empty()) return 0.0;
  RenderOptions eval = opts;
  eval.stratified_jitter = false;
  double sum = 0;
  for (int i : indices) {
    const auto view = render_image(field, data.camera, data.views[i].pose, eval);
    sum += psnr(view.rgb, data.views[i].image);
  }
  return sum / double(indices.size());
}

TrainReport train(RadianceField& field, const TrainingSet& data, const TrainConfig& cfg,
                  const std::optional<std::vector<int>>& holdout) {
  cfg.validate();
  data.camera.validate();
  const int n = int(data.views.size());
  if (n < 2) throw Error(ErrorCode::EmptyDataset, "training needs at least 2 images");
  double spread = 0;
  for (const auto& v : data.views) {
    spread = std::max(spread, (v.pose.translation() - data.views[0].pose.translation()).norm());
    if (v.image.width != data.camera.width || v.image.height != data.camera.height)
      throw Error(ErrorCode::DimensionMismatch, "training image does not match camera");
  }
  if (spread < 1e-9) throw Error(ErrorCode::DegenerateBounds, "all training cameras share one center");

  TrainReport report;
  report.holdout_indices = holdout ? *holdout : select_holdout(n, cfg.holdout_fraction);
  std::vector<char> is_holdout(n, 0);
  for (int i : report.holdout_indices) {
    if (i < 0 || i >= n) throw Error(ErrorCode::InvalidArgument, "holdout index out of range");
    is_holdout[i] = 1;
  }
  for (int i = 0; i < n; ++i)
    if (!is_holdout[i]) report.train_indices.push_back(i);
  if (report.train_indices.empty()) throw Error(ErrorCode::EmptyDataset, "no training images left after holdout");

  report.initial_holdout_psnr = mean_psnr(field, data, report.holdout_indices, cfg.render);

  const AdamParams adam{cfg.density_learning_rate, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon};
  AdamState state;
  FieldGradient grad;
  RayBatch batch;
  batch.rays.resize(cfg.rays_per_batch);
  batch.targets.resize(cfg.rays_per_batch);
  batch.ray_ids.resize(cfg.rays_per_batch);
  const int w = data.camera.width, h = data.camera.height;
  const int n_train = int(report.train_indices.size());
  for (int it = 0; it < cfg.iterations; ++it) {
    std::mt19937_64 rng(detail::splitmix64(cfg.seed) ^ detail::splitmix64(uint64_t(it) + 0x51ed27ull));
    std::uniform_int_distribution<int> pick_view(0, n_train - 1), pick_x(0, w - 1), pick_y(0, h - 1);
    for (int r = 0; r < cfg.rays_per_batch; ++r) {
      const auto& view = data.views[report.train_indices[pick_view(rng)]];
      const int x = pick_x(rng), y = pick_y(rng);
      batch.rays[r] = ray_for_pixel(data.camera, view.pose, Eigen::Vector2d(x, y));
      batch.targets[r] = Eigen::Vector3d(view.image.at(x, y, 0), view.image.at(x, y, 1), view.image.at(x, y, 2));
      batch.ray_ids[r] = uint64_t(it) * uint64_t(cfg.rays_per_batch) + uint64_t(r);
    }
    const LossTerms loss = loss_and_gradient(field, batch, cfg.render, cfg.tv_weight, grad);
    report.loss_curve.push_back(loss.total);
    adam_step(field, grad, state, adam);
  }
  report.iterations = cfg.iterations;
  report.final_holdout_psnr = cfg.iterations == 0 ? report.initial_holdout_psnr
                                                  : mean_psnr(field, data, report.holdout_indices, cfg.render);
  return report;
}

}  // namespace nerfloc
