#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <vector>

#include "nerfloc/field.hpp"
#include "nerfloc/geom.hpp"
#include "nerfloc/image.hpp"
#include "nerfloc/render.hpp"

namespace nerfloc {

struct RayBatch {
  std::vector<Ray> rays;
  std::vector<Eigen::Vector3d> targets;
  /// Jitter seeds; empty means ray i uses index i.
  std::vector<uint64_t> ray_ids;
};

/// Same layout as the field parameters: density[n], interleaved color[3n].
struct FieldGradient {
  std::vector<double> density;
  std::vector<double> color;
};

struct LossTerms {
  double total = 0;
  double photometric = 0;  ///< mean over rays and channels of squared error
  double total_variation = 0;  ///< already multiplied by tv_weight
};

/// Photometric MSE plus tv_weight * mean squared density difference over
/// axis-adjacent voxel pairs. `grad` is resized and overwritten.
/// Accumulation order is fixed (batch order, then sample order), so the
/// result is bit-identical to the serial version for any thread count.
LossTerms loss_and_gradient(const RadianceField& field, const RayBatch& batch, const RenderOptions& opts,
                            double tv_weight, FieldGradient& grad);
LossTerms loss_and_gradient_serial(const RadianceField& field, const RayBatch& batch, const RenderOptions& opts,
                                   double tv_weight, FieldGradient& grad);

struct AdamParams {
  double density_lr = 1.0;
  double color_lr = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> m_density, v_density, m_color, v_color;
  long step = 0;
};

/// One Adam update followed by clamping density >= 0 and color to [0,1].
void adam_step(RadianceField& field, const FieldGradient& grad, AdamState& state, const AdamParams& params);
void adam_step_serial(RadianceField& field, const FieldGradient& grad, AdamState& state, const AdamParams& params);

struct TrainConfig {
  int iterations = 2000;
  int rays_per_batch = 4096;
  double learning_rate = 0.05;          ///< color parameters
  double density_learning_rate = 1.0;   ///< density parameters, 1/m per step
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
  double tv_weight = 1e-4;
  double holdout_fraction = 0.1;
  uint64_t seed = 0;
  RenderOptions render;

  void validate() const;
};

struct PosedImage {
  double timestamp = 0;
  Pose pose;
  RgbImage image;
};

struct TrainingSet {
  CameraModel camera;
  std::vector<PosedImage> views;
};

struct TrainReport {
  std::vector<double> loss_curve;
  double initial_holdout_psnr = 0;
  double final_holdout_psnr = 0;
  std::vector<int> train_indices;
  std::vector<int> holdout_indices;
  int iterations = 0;
};

/// Evenly spaced holdout indices: max(1, round(fraction * n)) of them.
std::vector<int> select_holdout(int n, double fraction);

/// Mean per-image PSNR of renders at the given views.
double mean_psnr(const RadianceField& field, const TrainingSet& data, const std::vector<int>& indices,
                 const RenderOptions& opts);

/// Fits the field to the training views. Holdout views (explicit, or chosen by
/// select_holdout) are only rendered for evaluation.
TrainReport train(RadianceField& field, const TrainingSet& data, const TrainConfig& cfg,
                  const std::optional<std::vector<int>>& holdout = std::nullopt);

}  // namespace nerfloc
