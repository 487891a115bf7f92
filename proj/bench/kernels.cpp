// Serial vs OpenMP kernels. Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <random>

#include "nerfloc/synthdata.hpp"
#include "nerfloc/train.hpp"

using namespace nerfloc;

namespace {

const RadianceField& scene_field() {
  static const RadianceField f = voxelize_scene(default_scene(), {64, 64, 64});
  return f;
}

const CameraModel& camera() {
  static const CameraModel cam = CameraModel::create(110, 110, 63.5, 47.5, 128, 96);
  return cam;
}

RayBatch make_batch(int n) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Pose pose = look_at({3, 0.5, 0.4}, {0, 0, -0.3});
  RayBatch b;
  for (int i = 0; i < n; ++i) {
    b.rays.push_back(ray_for_pixel(camera(), pose, {u(rng) * 127.9, u(rng) * 95.9}));
    b.targets.emplace_back(u(rng), u(rng), u(rng));
  }
  return b;
}

template <bool Parallel>
void BM_render_image(benchmark::State& state) {
  const Pose pose = look_at({3, 0.5, 0.4}, {0, 0, -0.3});
  RenderOptions ro;
  for (auto _ : state) {
    auto v = Parallel ? render_image(scene_field(), camera(), pose, ro)
                      : render_image_serial(scene_field(), camera(), pose, ro);
    benchmark::DoNotOptimize(v.rgb.data.data());
  }
  state.SetItemsProcessed(state.iterations() * camera().width * camera().height);
}

template <bool Parallel>
void BM_loss_and_gradient(benchmark::State& state) {
  const RayBatch batch = make_batch(int(state.range(0)));
  RenderOptions ro;
  FieldGradient g;
  for (auto _ : state) {
    const LossTerms l = Parallel ? loss_and_gradient(scene_field(), batch, ro, 1e-4, g)
                                 : loss_and_gradient_serial(scene_field(), batch, ro, 1e-4, g);
    benchmark::DoNotOptimize(l.total);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Parallel>
void BM_adam_step(benchmark::State& state) {
  RadianceField f = scene_field();
  FieldGradient g;
  loss_and_gradient_serial(f, make_batch(256), RenderOptions{}, 1e-4, g);
  AdamState s;
  const AdamParams p;
  for (auto _ : state) {
    if (Parallel)
      adam_step(f, g, s, p);
    else
      adam_step_serial(f, g, s, p);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * int64_t(f.density().size()));
}

}  // namespace

BENCHMARK(BM_render_image<false>)->Name("render_image/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_render_image<true>)->Name("render_image/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_loss_and_gradient<false>)->Name("loss_and_gradient/serial")->Arg(4096)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_loss_and_gradient<true>)->Name("loss_and_gradient/omp")->Arg(4096)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_adam_step<false>)->Name("adam_step/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_adam_step<true>)->Name("adam_step/omp")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
