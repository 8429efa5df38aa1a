#include <cmath>
#include <fstream>
#include <numeric>

#include <spdlog/spdlog.h>

#include "zipmo/errors.hpp"
#include "zipmo/hash.hpp"
#include "zipmo/motionvae.hpp"
#include "zipmo/random.hpp"

namespace zipmo::vae {

VaeTrainResult train_vae(MotionVae& model, const std::vector<VaeExample>& dataset, const VaeTrainConfig& tc,
                         const std::filesystem::path& out_dir) {
  if (dataset.empty()) throw ArgumentError("train_vae: empty dataset");
  if (tc.steps < 0 || tc.batch_size < 1) throw ConfigError("train_vae: steps >= 0 and batch_size >= 1 required");
  nn::AdamW opt(model.params(), tc.optim);
  auto& ps = model.params();
  VaeTrainResult res;
  std::ofstream csv;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    csv.open(out_dir / "vae_loss.csv");
    csv << "step,total,recon,masked,kl\n";
  }
  Rng pick(tc.seed, 0x6261);
  const float inv_b = 1.0f / static_cast<float>(tc.batch_size);
  for (int step = 0; step <= tc.steps; ++step) {
    // Batch for this step; the final iteration only measures the loss.
    VaeLoss mean;
    std::vector<std::size_t> batch(static_cast<std::size_t>(tc.batch_size));
    for (auto& b : batch) b = static_cast<std::size_t>(pick.index(static_cast<int>(dataset.size())));
    const bool update = step < tc.steps;
    if (update) ps.zero_grad();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      nn::Graph<float> g(update);
      VaeLoss t;
      const auto seed = mix_seed(tc.seed, static_cast<std::uint64_t>(step) * 1024 + i);
      const VaeExample* ex = &dataset[batch[i]];
      VaeExample sub;
      if (tc.tracks_per_example > 0 && tc.tracks_per_example < ex->tracks.size()) {
        std::vector<int> idx(static_cast<std::size_t>(ex->tracks.size()));
        std::iota(idx.begin(), idx.end(), 0);
        for (int k = 0; k < tc.tracks_per_example; ++k)
          std::swap(idx[static_cast<std::size_t>(k)],
                    idx[static_cast<std::size_t>(k + pick.index(ex->tracks.size() - k))]);
        idx.resize(static_cast<std::size_t>(tc.tracks_per_example));
        sub = {ex->tracks.subset(idx), ex->raster, ex->features};
        ex = &sub;
      }
      auto loss = vae_loss_graph(g, model, ps, *ex, seed, &t);
      if (!std::isfinite(t.total))
        throw NumericError("train_vae: loss is not finite at step " + std::to_string(step) +
                           " (recon=" + std::to_string(t.recon) + ", kl=" + std::to_string(t.kl) + ")");
      if (update) {
        g.backward(loss);
        g.accumulate_grads(ps, inv_b);
      }
      mean.total += t.total / tc.batch_size;
      mean.recon += t.recon / tc.batch_size;
      mean.masked += t.masked / tc.batch_size;
      mean.kl += t.kl / tc.batch_size;
    }
    if (step % tc.log_every == 0 || step == tc.steps) {
      res.log.push_back(mean);
      res.log_steps.push_back(step);
      if (csv) csv << step << ',' << mean.total << ',' << mean.recon << ',' << mean.masked << ',' << mean.kl << '\n';
      spdlog::info("vae step {:>6}  total {:.5f}  recon {:.5f}  masked {:.5f}  kl {:.2f}", step, mean.total,
                   mean.recon, mean.masked, mean.kl);
    }
    if (update) opt.step(ps);
  }
  if (!out_dir.empty()) model.save(out_dir / "vae.ckpt");
  return res;
}

}  // namespace zipmo::vae
