#include <cmath>
#include <fstream>

#include <spdlog/spdlog.h>

#include "zipmo/errors.hpp"
#include "zipmo/hash.hpp"
#include "zipmo/motiongen.hpp"
#include "zipmo/random.hpp"

namespace zipmo::gen {

Condition training_condition(const GenExample& ex, const GenTrainConfig& tc, std::uint64_t seed) {
  Rng rng(seed, 0x636e);
  Condition c;
  c.frame = ex.frame;
  if (ex.label && rng.bernoulli(tc.p_label)) c.label = ex.label;
  const int n_tracks = ex.tracks.size();
  if (n_tracks > 0 && tc.max_pokes > 0 && !rng.bernoulli(tc.p_no_pokes)) {
    const int T = ex.tracks.horizon();
    const int n = 1 + rng.index(tc.max_pokes);
    for (int k = 0; k < n; ++k) {
      const auto& tr = ex.tracks[static_cast<std::size_t>(rng.index(n_tracks))];
      const int t = rng.bernoulli(tc.p_end_frame) ? T - 1 : 1 + rng.index(T - 1);
      c.pokes.push_back({tr.start, tr.positions[static_cast<std::size_t>(t)], t});
    }
  }
  return c;
}

GenTrainResult train_generator(MotionGenerator& model, const std::vector<GenExample>& corpus,
                               const GenTrainConfig& tc, const std::filesystem::path& out_dir) {
  if (corpus.empty()) throw ArgumentError("train_generator: empty corpus");
  if (tc.steps < 0 || tc.batch_size < 1 || tc.log_every < 1)
    throw ConfigError("train_generator: steps >= 0, batch_size >= 1 and log_every >= 1 required");
  const auto& cfg = model.config();
  for (const auto& ex : corpus)
    if (ex.z1.z.rows() != cfg.latent_tokens() || ex.z1.z.cols() != cfg.D)
      throw ShapeError("train_generator: corpus latent shape does not match the generator");

  std::vector<vae::LatentGrid> grids;
  grids.reserve(corpus.size());
  for (const auto& ex : corpus) grids.push_back(ex.z1);
  model.set_stats(LatentStats::from(grids));
  std::vector<Matrix<double>> white;
  white.reserve(corpus.size());
  for (const auto& ex : corpus) white.push_back(model.stats().whiten(ex.z1.z));

  auto& ps = model.params();
  nn::AdamW opt(ps, tc.optim);
  GenTrainResult res;
  std::ofstream csv;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    csv.open(out_dir / "gen_loss.csv");
    csv << "step,loss\n";
  }
  Rng pick(tc.seed, 0x6762);
  const float inv_b = 1.0f / static_cast<float>(tc.batch_size);
  for (int step = 0; step <= tc.steps; ++step) {
    const bool update = step < tc.steps;
    if (update) ps.zero_grad();
    double mean = 0.0;
    for (int i = 0; i < tc.batch_size; ++i) {
      const auto k = static_cast<std::size_t>(pick.index(static_cast<int>(corpus.size())));
      const auto seed = mix_seed(tc.seed, static_cast<std::uint64_t>(step) * 1024 + static_cast<std::uint64_t>(i));
      FmExample ex{white[k], training_condition(corpus[k], tc, seed)};
      nn::Graph<float> g(update);
      auto loss = fm_loss_graph(g, model, ps, ex, seed, 0);
      const double v = loss.value()(0, 0);
      if (!std::isfinite(v)) throw NumericError("train_generator: loss is not finite at step " + std::to_string(step));
      if (update) {
        g.backward(loss);
        g.accumulate_grads(ps, inv_b);
      }
      mean += v / tc.batch_size;
    }
    if (step % tc.log_every == 0 || step == tc.steps) {
      res.log.push_back(mean);
      res.log_steps.push_back(step);
      if (csv) csv << step << ',' << mean << '\n';
      spdlog::info("gen step {:>6}  loss {:.5f}", step, mean);
    }
    if (update) opt.step(ps);
  }
  if (!out_dir.empty()) model.save(out_dir / "gen.ckpt");
  return res;
}

}  // namespace zipmo::gen
