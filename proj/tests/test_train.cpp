#include <omp.h>

#include "nerfloc/synthdata.hpp"
#include "nerfloc/train.hpp"
#include "test_support.hpp"

using namespace nerfloc;

namespace {

RayBatch random_batch(int n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RayBatch b;
  for (int i = 0; i < n; ++i) {
    Ray r;
    r.origin = Eigen::Vector3d(g(rng), g(rng), g(rng)).normalized() * 2.5;
    r.direction = (Eigen::Vector3d(0.4 * g(rng), 0.4 * g(rng), 0.4 * g(rng)) - r.origin).normalized();
    b.rays.push_back(r);
    b.targets.emplace_back(u(rng), u(rng), u(rng));
  }
  return b;
}

double loss_at(const RadianceField& f, const RayBatch& b, const RenderOptions& o, double tv) {
  FieldGradient scratch;
  return loss_and_gradient_serial(f, b, o, tv, scratch).total;
}

}  // namespace

TEST_CASE("analytic gradients match central differences") {
  RadianceField f = testing::random_field(8, 21, 3.0);
  for (auto& d : f.density()) d += 0.1f;
  const RayBatch b = random_batch(32, 22);
  RenderOptions o;
  o.samples_per_ray = 64;
  const double tv = 1e-3;
  FieldGradient grad;
  loss_and_gradient(f, b, o, tv, grad);

  std::mt19937_64 rng(23);
  int checked = 0;
  double worst = 0;
  while (checked < 10) {
    const bool density = checked % 2 == 0;
    std::vector<float>& params = density ? f.density() : f.color();
    const std::vector<double>& g = density ? grad.density : grad.color;
    const size_t i = std::uniform_int_distribution<size_t>(0, params.size() - 1)(rng);
    if (std::abs(g[i]) < 1e-7) continue;
    const float saved = params[i];
    // Central difference over the perturbation that float storage actually realizes.
    const float plus = saved + 1e-4f, minus = saved - 1e-4f;
    params[i] = plus;
    const double lp = loss_at(f, b, o, tv);
    params[i] = minus;
    const double lm = loss_at(f, b, o, tv);
    params[i] = saved;
    const double fd = (lp - lm) / (double(plus) - double(minus));
    const double rel = std::abs(fd - g[i]) / std::max(std::abs(fd), std::abs(g[i]));
    worst = std::max(worst, rel);
    ++checked;
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("total variation term and its gradient") {
  RadianceField f(Eigen::Vector3f::Constant(-1.f), Eigen::Vector3f::Constant(1.f), {2, 1, 1});
  f.density() = {1.f, 3.f};
  RayBatch b;
  b.rays.push_back(Ray{Eigen::Vector3d(5, 5, 5), Eigen::Vector3d::UnitX()});
  b.targets.push_back(Eigen::Vector3d::Ones());
  FieldGradient g;
  const LossTerms l = loss_and_gradient(f, b, RenderOptions(), 0.5, g);
  CHECK(l.photometric == doctest::Approx(0.0));
  CHECK(l.total_variation == doctest::Approx(2.0));
  CHECK(l.total == doctest::Approx(2.0));
  CHECK(g.density[0] == doctest::Approx(-2.0));
  CHECK(g.density[1] == doctest::Approx(2.0));
}

TEST_CASE("parallel gradient and Adam are bit-identical to serial") {
  const RadianceField f = testing::random_field(10, 24, 5.0);
  RayBatch b = random_batch(300, 25);
  for (size_t i = 0; i < b.rays.size(); ++i) b.ray_ids.push_back(1000 + i);
  RenderOptions o;
  o.samples_per_ray = 48;
  o.stratified_jitter = true;
  FieldGradient gs, gp;
  const LossTerms ls = loss_and_gradient_serial(f, b, o, 1e-3, gs);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(4);
  const LossTerms lp = loss_and_gradient(f, b, o, 1e-3, gp);
  RadianceField fs = f, fp = f;
  AdamState ss, sp;
  adam_step_serial(fs, gs, ss, AdamParams());
  adam_step(fp, gp, sp, AdamParams());
  omp_set_num_threads(saved);
  CHECK(ls.total == lp.total);
  CHECK(gs.density == gp.density);
  CHECK(gs.color == gp.color);
  CHECK(fs == fp);
  CHECK(ss.m_density == sp.m_density);
  CHECK(ss.v_color == sp.v_color);
}

TEST_CASE("first Adam step moves each parameter by the learning rate") {
  RadianceField f(Eigen::Vector3f::Zero(), Eigen::Vector3f::Ones(), {2, 1, 1}, 5.f, Eigen::Vector3f::Constant(0.5f));
  FieldGradient g{{0.3, -2.0}, {1e-3, -1e-3, 0.0, 4.0, -4.0, 0.0}};
  AdamState s;
  AdamParams p;
  p.density_lr = 1.0;
  p.color_lr = 0.1;
  adam_step(f, g, s, p);
  CHECK(s.step == 1);
  CHECK(f.density()[0] == doctest::Approx(4.0).epsilon(1e-6));
  CHECK(f.density()[1] == doctest::Approx(6.0).epsilon(1e-6));
  CHECK(f.color()[0] == doctest::Approx(0.4).epsilon(1e-4));
  CHECK(f.color()[1] == doctest::Approx(0.6).epsilon(1e-4));
  CHECK(f.color()[2] == 0.5f);
  FieldGradient big{{100.0, 0.0}, {0, 0, 0, 0, 0, 0}};
  for (int k = 0; k < 10; ++k) adam_step(f, big, s, p);
  CHECK(f.density()[0] == 0.f);
  FieldGradient bad{{0.0}, {}};
  CHECK_THROWS_CODE(adam_step(f, bad, s, p), ErrorCode::DimensionMismatch);
}

TEST_CASE("holdout selection is evenly spaced") {
  CHECK(select_holdout(50, 0.1) == std::vector<int>{5, 15, 25, 35, 45});
  CHECK(select_holdout(10, 0.01) == std::vector<int>{5});
  CHECK(select_holdout(1, 0.5).empty());
  CHECK(select_holdout(4, 1.0).size() == 3);
}

TEST_CASE("training config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.rays_per_batch = 0;
  CHECK_THROWS_CODE(c.validate(), ErrorCode::InvalidArgument);
  c = TrainConfig();
  c.beta2 = 1.0;
  CHECK_THROWS_CODE(c.validate(), ErrorCode::InvalidArgument);
  c = TrainConfig();
  c.holdout_fraction = 0;
  CHECK_THROWS_CODE(c.validate(), ErrorCode::InvalidArgument);
}

TEST_CASE("a short training run is deterministic and improves holdout PSNR") {
  const RadianceField gt = voxelize_scene(default_scene(), {24, 24, 24});
  const CameraModel cam = CameraModel::create(40, 40, 23.5, 17.5, 48, 36);
  TrajectoryParams tp;
  tp.radius = 3;
  tp.pivot = Eigen::Vector3d(0, 0, 0.4);
  tp.look_at = Eigen::Vector3d(0, 0, -1);
  tp.length = 2 * M_PI * 3 * 11 / 12;
  RenderOptions ro;
  ro.samples_per_ray = 64;
  DatasetOptions dopt;
  dopt.render = ro;
  const Dataset ds = make_dataset(gt, cam, generate_trajectory(TrajectoryKind::Orbit, tp, 12), dopt);
  TrainConfig cfg;
  cfg.iterations = 60;
  cfg.rays_per_batch = 512;
  cfg.holdout_fraction = 0.2;
  cfg.render = ro;
  RadianceField a(Eigen::Vector3f::Constant(-1.5f), Eigen::Vector3f::Constant(1.5f), {16, 16, 16}, 0.f,
                  Eigen::Vector3f::Constant(0.5f));
  RadianceField b = a;
  const TrainReport ra = train(a, ds.training_set(), cfg);
  const TrainReport rb = train(b, ds.training_set(), cfg);
  CHECK(a == b);
  CHECK(ra.loss_curve == rb.loss_curve);
  CHECK(ra.loss_curve.size() == 60);
  CHECK(ra.holdout_indices == select_holdout(12, 0.2));
  CHECK(ra.final_holdout_psnr > ra.initial_holdout_psnr + 3.0);
  CHECK(ra.loss_curve.back() < ra.loss_curve.front());

  TrainingSet tiny;
  tiny.camera = cam;
  tiny.views.push_back(ds.training_set().views[0]);
  CHECK_THROWS_CODE(train(a, tiny, cfg), ErrorCode::EmptyDataset);
}
