#include "zipmo/pipeline.hpp"

#include <algorithm>

#include "zipmo/errors.hpp"
#include "zipmo/hash.hpp"

namespace zipmo::pipeline {

using track::Point2;

ModelPair ModelPair::load(const std::filesystem::path& gen_path, const std::filesystem::path& vae_path) {
  auto g = gen::MotionGenerator::load(gen_path);
  std::filesystem::path vp = vae_path;
  if (vp.empty()) {
    if (g.vae_path().empty()) throw ConfigError("generator checkpoint records no VAE path; pass one explicitly");
    vp = g.vae_path();
    // A relative recorded path is resolved next to the generator checkpoint.
    if (vp.is_relative() && !std::filesystem::exists(vp)) vp = gen_path.parent_path() / vp;
  }
  return from(vae::MotionVae::load(vp), std::move(g));
}

ModelPair ModelPair::from(vae::MotionVae vae, gen::MotionGenerator gen) {
  gen.check_vae(vae);
  const auto& vc = vae.config();
  const auto& gc = gen.config();
  if (vc.T != gc.T || vc.t_c != gc.t_c || vc.H != gc.H || vc.W != gc.W || vc.D != gc.D)
    throw ConfigError("generator latent geometry differs from the VAE");
  ModelPair m{std::move(vae), std::move(gen), {}, {}};
  m.vae_hash = m.vae.hash();
  m.gen_hash = m.gen.hash();
  return m;
}

std::vector<Point2> grid_queries(int g) {
  if (g < 1) throw ArgumentError("grid size must be >= 1");
  std::vector<Point2> q;
  q.reserve(static_cast<std::size_t>(g) * g);
  for (int r = 0; r < g; ++r)
    for (int c = 0; c < g; ++c) q.push_back({2.0 * (c + 0.5) / g - 1.0, 2.0 * (r + 0.5) / g - 1.0});
  return q;
}

std::vector<Point2> default_queries(const std::vector<gen::Poke>& pokes, int grid) {
  auto q = grid_queries(grid);
  for (const auto& p : pokes) q.push_back(p.anchor);
  return q;
}

std::uint64_t sample_seed(std::uint64_t seed, int index) {
  return mix_seed(seed, 0x73616d70ULL + static_cast<std::uint64_t>(index));
}

SampleResult sample_and_decode(const ModelPair& models, const vae::FrameEmbedding& frame, const SampleRequest& req,
                               const std::string& frame_id) {
  if (req.num_samples < 1) throw ArgumentError("num_samples must be >= 1");
  if (req.queries.empty()) throw ArgumentError("no query points");
  gen::Condition c;
  c.pokes = req.pokes;
  c.label = req.label;
  c.frame = std::make_shared<const vae::FrameEmbedding>(frame);
  SampleResult out;
  for (int k = 0; k < req.num_samples; ++k) {
    const auto s = sample_seed(req.seed, k);
    const auto z = gen::sample(models.gen, c, req.nfe, s);
    auto ts = vae::decode(models.vae, models.vae.params(), req.queries, z, vae::FrameInput::from(frame), frame_id);
    if (!req.pokes.empty()) {
      eval::SampleSet one;
      one.samples.push_back(ts);
      out.epe.push_back(eval::epe(req.pokes, one));
    }
    out.samples.push_back(std::move(ts));
    out.seeds.push_back(s);
  }
  return out;
}

vae::FrameEmbedding scene_frame(const synth::Scenario& s, const vae::MotionVae& vae) {
  const int res = vae.config().frame.resolution;
  if (s.raster.width == res && s.raster.height == res) return vae::encode_frame(s.raster, vae);
  return vae::encode_frame(synth::rasterize(s.family, s.params, res), vae);
}

std::vector<std::string> list_scenes(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw MissingFileError("scene directory not found: " + dir.string());
  const std::string suffix = ".tracks.json";
  std::vector<std::string> stems;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
      continue;
    const auto stem = name.substr(0, name.size() - suffix.size());
    if (std::filesystem::exists(dir / (stem + ".meta.json"))) stems.push_back(stem);
  }
  std::sort(stems.begin(), stems.end());
  return stems;
}

}  // namespace zipmo::pipeline
