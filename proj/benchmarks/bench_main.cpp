#include <benchmark/benchmark.h>

#include "zipmo/evalkit.hpp"
#include "zipmo/motiongen.hpp"
#include "zipmo/motionvae.hpp"
#include "zipmo/nn/rope.hpp"
#include "zipmo/random.hpp"
#include "zipmo/synthkin.hpp"

using namespace zipmo;

namespace {

vae::VaeConfig narrow_desk(int t_c) {
  auto c = vae::desk_config();
  c.t_c = t_c;
  c.nn = {64, 2, 4, 3, 1e-6};
  return c;
}

std::shared_ptr<const vae::FrameEmbedding> flat_frame(int channels) {
  return std::make_shared<const vae::FrameEmbedding>(
      vae::FrameEmbedding{8, 8, channels, nn::Matrix<double>::Constant(64, channels, 0.1)});
}

}  // namespace

// Full sampling cost per t_c at fixed geometry, width and NFE.
static void BM_Sample(benchmark::State& st) {
  auto gc = gen::GenConfig::for_vae(narrow_desk(static_cast<int>(st.range(0))));
  gc.nn = {64, 2, 4, 3, 1e-6};
  const auto g = gen::MotionGenerator::create(gc, 1);
  gen::Condition c;
  c.frame = flat_frame(gc.frame_channels);
  std::uint64_t seed = 0;
  for (auto _ : st) benchmark::DoNotOptimize(gen::sample(g, c, 10, seed++));
  st.counters["latent_tokens"] = gc.latent_tokens();
  st.counters["timesteps/s"] = benchmark::Counter(gc.T, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Sample)->Arg(8)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_Encode(benchmark::State& st) {
  const auto c = narrow_desk(64);
  const auto m = vae::MotionVae::create(c, 2);
  const auto s = synth::generate(synth::Family::RotationCwCcw, 3, static_cast<int>(st.range(0)), c.T);
  const auto f = vae::encode_frame(s.raster, m);
  for (auto _ : st) benchmark::DoNotOptimize(vae::encode(s.tracks, f, m));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}
BENCHMARK(BM_Encode)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_Decode(benchmark::State& st) {
  const auto c = narrow_desk(64);
  const auto m = vae::MotionVae::create(c, 2);
  const auto s = synth::generate(synth::Family::RotationCwCcw, 3, 8, c.T);
  const auto f = vae::encode_frame(s.raster, m);
  const auto z = vae::mean_latent(vae::encode(s.tracks, f, m));
  Rng rng(4);
  std::vector<track::Point2> q;
  for (int i = 0; i < st.range(0); ++i) q.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1)});
  for (auto _ : st) benchmark::DoNotOptimize(vae::decode(q, z, f, m));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}
BENCHMARK(BM_Decode)->Arg(16)->Arg(256)->Unit(benchmark::kMillisecond);

static void BM_VaeLossStep(benchmark::State& st) {
  const auto c = narrow_desk(64);
  const auto m = vae::MotionVae::create(c, 5);
  const auto s = synth::generate(synth::Family::LinearGoalChoice, 6, 8, c.T);
  const vae::VaeExample ex{s.tracks, s.raster, nullptr};
  std::uint64_t seed = 0;
  for (auto _ : st) {
    nn::Graph<float> g(true);
    auto l = vae::vae_loss_graph(g, m, m.params(), ex, seed++);
    g.backward(l);
    benchmark::DoNotOptimize(l.value());
  }
}
BENCHMARK(BM_VaeLossStep)->Unit(benchmark::kMillisecond);

static void BM_RopeApply(benchmark::State& st) {
  const auto spec = nn::RopeSpec::xyt(64);
  Rng rng(7);
  nn::RopePositions pos{{"x", "y", "t"}, nn::Matrix<double>(st.range(0), 3)};
  nn::Matrix<double> x(st.range(0), 64);
  for (Eigen::Index i = 0; i < pos.coords.size(); ++i) pos.coords.data()[i] = rng.uniform(-10, 10);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  for (auto _ : st) benchmark::DoNotOptimize(nn::rope_apply(x, pos, spec));
}
BENCHMARK(BM_RopeApply)->Arg(64)->Arg(2048);

static void BM_MinMeanMse(benchmark::State& st) {
  const auto gt = synth::generate(synth::Family::PendulumArm, 8, 32, 64).tracks;
  eval::SampleSet set;
  for (int k = 0; k < st.range(0); ++k) set.samples.push_back(synth::generate(synth::Family::PendulumArm, 8 + k, 32, 64).tracks);
  for (auto _ : st) benchmark::DoNotOptimize(eval::min_mean_mse(gt, set));
}
BENCHMARK(BM_MinMeanMse)->Arg(8)->Arg(64);
BENCHMARK_MAIN();
