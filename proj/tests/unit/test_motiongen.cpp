#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "zipmo/errors.hpp"
#include "zipmo/evalkit.hpp"
#include "zipmo/nn/gradcheck.hpp"

using namespace zipmo;
using namespace zipmo::gen;
using track::Point2;

namespace {

struct Models {
  vae::VaeConfig vc;
  vae::MotionVae vae;
  GenConfig gc;
  MotionGenerator gen;
  std::shared_ptr<const vae::FrameEmbedding> frame;

  explicit Models(int t_c = 8, std::uint64_t seed = 1)
      : vc(zt::tiny_vae_config(8, t_c)),
        vae(vae::MotionVae::create(vc, seed)),
        gc(zt::tiny_gen_config(vc)),
        gen(MotionGenerator::create(gc, seed)) {
    frame = std::make_shared<vae::FrameEmbedding>(vae::encode_frame(GrayImage(32, 32, 0.3), vae));
  }
};

Matrix<double> randn(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Matrix<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

TEST(Flow, InterpolateAndTarget) {
  Rng rng(1);
  const auto z0 = randn(rng, 4, 3), z1 = randn(rng, 4, 3);
  EXPECT_EQ(interpolate(z0, z1, 0.0).z_t, z0);
  EXPECT_EQ(interpolate(z0, z1, 1.0).z_t, z1);
  const auto mid = interpolate(z0, z1, 0.5).z_t;
  for (int i = 0; i < mid.size(); ++i) EXPECT_DOUBLE_EQ(mid.data()[i], 0.5 * (z0.data()[i] + z1.data()[i]));
  const auto v = target_flow(z0, z1);
  EXPECT_EQ(v, Matrix<double>(z1 - z0));
  // Velocity of the path is the same at every t.
  for (double t : {0.1, 0.37, 0.9}) {
    const auto a = interpolate(z0, z1, t).z_t, b = interpolate(z0, z1, t + 1e-3).z_t;
    EXPECT_TRUE(((b - a) / 1e-3).isApprox(v, 1e-9));
  }
}

TEST(Flow, LatentStats) {
  Rng rng(2);
  std::vector<vae::LatentGrid> corpus;
  for (int i = 0; i < 10; ++i) {
    vae::LatentGrid g{1, 2, 2, 3, randn(rng, 4, 3)};
    g.z.col(1) = g.z.col(1) * 5.0 + Matrix<double>::Constant(4, 1, 2.0);
    g.z.col(2).setConstant(7.0);
    corpus.push_back(g);
  }
  const auto s = LatentStats::from(corpus);
  ASSERT_EQ(s.std.size(), 3u);
  for (double v : s.std) EXPECT_GT(v, 0.0);
  EXPECT_EQ(s.std[2], 1.0);
  EXPECT_DOUBLE_EQ(s.mean[2], 7.0);
  const auto w = s.whiten(corpus[3].z);
  EXPECT_TRUE(s.unwhiten(w).isApprox(corpus[3].z, 1e-12));
  Matrix<double> all(40, 3);
  for (int i = 0; i < 10; ++i) all.middleRows(4 * i, 4) = s.whiten(corpus[i].z);
  for (int d = 0; d < 2; ++d) {
    EXPECT_NEAR(all.col(d).mean(), 0.0, 1e-12);
    EXPECT_NEAR(std::sqrt(all.col(d).array().square().mean()), 1.0, 1e-9);
  }
  EXPECT_THROW(LatentStats::from({}), ArgumentError);
}

TEST(GenConfig, JsonAndValidation) {
  Models m;
  EXPECT_EQ(m.gc.latent_tokens(), m.vc.latent_tokens());
  EXPECT_EQ(to_json(gen_config_from_json(to_json(m.gc))), to_json(m.gc));
  auto bad = m.gc;
  bad.p_drop = 2;
  EXPECT_THROW(bad.validate(), ConfigError);
  try {
    gen_config_from_json(R"({"nn": {"heads": "x"}})", "gen");
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.path(), "gen.nn.heads");
  }
  const auto d = GenConfig::for_vae(vae::desk_config());
  EXPECT_DOUBLE_EQ(d.p_drop, 0.1);
  EXPECT_DOUBLE_EQ(d.sigma_aug, 0.05);
}

TEST(Condition, TokenCounts) {
  Models m;
  Condition c;
  EXPECT_EQ(embed_condition(c, m.gen).rows(), 0);
  c.pokes = {{{0.1, 0.1}, {0.3, 0.2}, 7}};
  EXPECT_EQ(embed_condition(c, m.gen).rows(), 1);
  c.pokes.push_back({{0.1, 0.1}, {0.4, 0.1}, 3});
  c.pokes.push_back({{-0.5, 0.2}, {-0.5, 0.5}, 7});
  const auto tok = embed_condition(c, m.gen);
  EXPECT_EQ(tok.rows(), 3);
  EXPECT_EQ(tok.cols(), m.gc.nn.d_model);
  EXPECT_GT((tok.row(0) - tok.row(1)).norm(), 1e-6);
  c.label = 2;
  EXPECT_EQ(embed_condition(c, m.gen).rows(), 4);
}

TEST(Condition, RangeErrors) {
  Models m;
  Condition c;
  c.pokes = {{{0, 0}, {0, 0}, 8}};
  EXPECT_THROW(embed_condition(c, m.gen), RangeError);
  c.pokes = {{{0, 0}, {1.2, 0}, 2}};
  EXPECT_THROW(embed_condition(c, m.gen), RangeError);
  c.pokes.clear();
  c.label = 3;
  EXPECT_THROW(embed_condition(c, m.gen), RangeError);
  FlowState s{Matrix<double>::Zero(m.gc.latent_tokens(), m.gc.D), 1.5};
  EXPECT_THROW(vfield(s, Condition{}, m.gen), RangeError);
}

TEST(VField, ShapeForEveryPresetAndDeterministic) {
  for (int t_c : {2, 4, 8}) {
    Models m(t_c);
    Rng rng(t_c);
    for (bool frame : {false, true}) {
      Condition c;
      if (frame) c.frame = m.frame;
      const FlowState s{randn(rng, m.gc.latent_tokens(), m.gc.D), 0.3};
      const auto v = vfield(s, c, m.gen);
      EXPECT_EQ(v.rows(), s.z_t.rows());
      EXPECT_EQ(v.cols(), s.z_t.cols());
      EXPECT_TRUE(v.allFinite());
      EXPECT_EQ(vfield(s, c, m.gen), v);
    }
    EXPECT_EQ(vfield_token_count(m.gc), (8 / t_c) * m.gc.H * m.gc.W);
  }
}

TEST(VField, TokenCountScalesInverselyWithCompression) {
  auto g = GenConfig::for_vae(vae::desk_config());
  for (int t_c : {2, 4, 8, 16, 32, 64}) {
    g.t_c = t_c;
    EXPECT_EQ(vfield_token_count(g), (64 / t_c) * 64);
  }
}

TEST(VField, PokeOrderInvariant) {
  Models m;
  Rng rng(3);
  Condition c;
  c.frame = m.frame;
  c.label = 1;
  for (int i = 0; i < 4; ++i)
    c.pokes.push_back({{rng.uniform(-1, 1), rng.uniform(-1, 1)}, {rng.uniform(-1, 1), rng.uniform(-1, 1)}, 1 + rng.index(7)});
  const FlowState s{randn(rng, m.gc.latent_tokens(), m.gc.D), 0.6};
  const auto a = vfield(s, c, m.gen);
  std::reverse(c.pokes.begin(), c.pokes.end());
  std::swap(c.pokes[0], c.pokes[2]);
  EXPECT_LT((vfield(s, c, m.gen) - a).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(VField, NoPeAblationFlag) {
  auto vc = zt::tiny_vae_config();
  auto gc = zt::tiny_gen_config(vc);
  const auto a = MotionGenerator::create(gc, 4);
  gc.grid_rope = false;
  const auto b = MotionGenerator::create(gc, 4);
  Rng rng(4);
  const FlowState s{randn(rng, gc.latent_tokens(), gc.D), 0.5};
  EXPECT_GT((vfield(s, {}, a) - vfield(s, {}, b)).norm(), 1e-6);
}

TEST(FmLoss, RiggedFieldIsZero) {
  Models m;
  Rng rng(5);
  std::vector<FmExample> batch(3);
  for (auto& ex : batch) ex.z1 = randn(rng, m.gc.latent_tokens(), m.gc.D);
  const std::uint64_t seed = 9;
  // The rigged field knows z1 and recovers z0 from z_t and t.
  std::size_t k = 0;
  VectorField exact = [&](const FlowState& s, const Condition&) {
    const auto& z1 = batch[k++].z1;
    const Matrix<double> z0 = (s.z_t - s.t * z1) / (1.0 - s.t);
    return Matrix<double>(z1 - z0);
  };
  EXPECT_NEAR(fm_loss_with(exact, m.gc, batch, seed), 0.0, 1e-18 + 1e-9);
}

TEST(FmLoss, MatchesLoopOracle) {
  Models m;
  Rng rng(6);
  std::vector<FmExample> batch(4);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    batch[i].z1 = randn(rng, m.gc.latent_tokens(), m.gc.D);
    if (i % 2) batch[i].cond.pokes = {{{0.1, 0.2}, {0.3, -0.4}, 7}};
  }
  const std::uint64_t seed = 11;
  const auto ps = m.gen.params().cast<double>();
  double oracle = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto d = fm_draw(m.gc, batch[i], seed, i);
    Matrix<double> zt(d.z0.rows(), d.z0.cols());
    for (Eigen::Index r = 0; r < zt.rows(); ++r)
      for (Eigen::Index c = 0; c < zt.cols(); ++c) zt(r, c) = (1 - d.t) * d.z0(r, c) + d.t * batch[i].z1(r, c);
    Condition c = batch[i].cond;
    c.drop_frame = d.drop_frame;
    const auto v = vfield(m.gen, ps, {zt, d.t}, c);
    double s = 0;
    for (Eigen::Index r = 0; r < zt.rows(); ++r)
      for (Eigen::Index col = 0; col < zt.cols(); ++col) {
        const double e = v(r, col) - (batch[i].z1(r, col) - d.z0(r, col));
        s += e * e;
      }
    oracle += s / static_cast<double>(zt.size());
  }
  oracle /= batch.size();
  double graph = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    nn::Graph<double> g(false);
    graph += fm_loss_graph(g, m.gen, ps, batch[i], seed, i).value()(0, 0);
  }
  EXPECT_NEAR(graph / batch.size(), oracle, 1e-9);
  const VectorField f = [&](const FlowState& s, const Condition& c) { return vfield(m.gen, ps, s, c); };
  EXPECT_NEAR(fm_loss_with(f, m.gc, batch, seed), oracle, 1e-9);
  EXPECT_NEAR(fm_loss(batch, m.gen, seed), oracle, 1e-4 * std::max(1.0, oracle));
}

TEST(FmLoss, FrameDropoutPaths) {
  auto vc = zt::tiny_vae_config();
  auto gc = zt::tiny_gen_config(vc);
  const auto vae = vae::MotionVae::create(vc, 7);
  auto frame = std::make_shared<vae::FrameEmbedding>(vae::encode_frame(GrayImage(32, 32, 0.5), vae));
  Rng rng(7);
  FmExample ex{randn(rng, gc.latent_tokens(), gc.D), {}};
  ex.cond.frame = frame;
  gc.p_drop = 0.0;
  const auto keep = MotionGenerator::create(gc, 7);
  EXPECT_FALSE(fm_draw(gc, ex, 1, 0).drop_frame);
  EXPECT_FALSE(fm_draw(gc, ex, 1, 0).frame_noise.size() == 0);
  gc.p_drop = 1.0;
  const auto drop = MotionGenerator::create(gc, 7);
  EXPECT_TRUE(fm_draw(gc, ex, 1, 0).drop_frame);
  EXPECT_EQ(fm_draw(gc, ex, 1, 0).frame_noise.size(), 0);
  EXPECT_NE(fm_loss({ex}, keep, 1), fm_loss({ex}, drop, 1));
}

TEST(FmLoss, GradCheckWidth16) {
  Models m;
  Rng rng(8);
  FmExample ex{randn(rng, m.gc.latent_tokens(), m.gc.D), {}};
  ex.cond.frame = m.frame;
  ex.cond.label = 1;
  ex.cond.pokes = {{{0.2, 0.1}, {0.4, 0.3}, 7}, {{-0.3, 0.5}, {-0.2, 0.6}, 4}};
  auto ps = m.gen.params().cast<double>();
  // Index 0 of seed 2 keeps the frame so every branch is exercised.
  std::uint64_t seed = 2;
  while (fm_draw(m.gc, ex, seed, 0).drop_frame) ++seed;
  const auto res = nn::grad_check(
      [&](nn::Graph<double>& g, const nn::ParamStore<double>& p) { return fm_loss_graph(g, m.gen, p, ex, seed, 0); },
      ps, {.eps = 1e-5, .samples = 60, .seed = 4});
  EXPECT_GE(res.checked, 50);
  EXPECT_LE(res.max_rel_error, 1e-4) << res.worst;
}

TEST(Euler, ConstantAndLinearFields) {
  Rng rng(9);
  const auto z0 = randn(rng, 3, 2);
  const Matrix<double> c = randn(rng, 3, 2);
  for (int nfe : {1, 3, 10, 64}) {
    const auto z = euler_integrate(z0, nfe, [&](const Matrix<double>&, double) { return c; });
    EXPECT_LT((z - (z0 + c)).cwiseAbs().maxCoeff(), 1e-12);
    const auto lin = euler_integrate(z0, nfe, [](const Matrix<double>& z, double) { return z; });
    EXPECT_TRUE(lin.isApprox(z0 * std::pow(1.0 + 1.0 / nfe, nfe), 1e-12));
  }
  EXPECT_THROW(euler_integrate(z0, 0, [](const Matrix<double>& z, double) { return z; }), ArgumentError);
  try {
    euler_integrate(z0, 5, [](const Matrix<double>& z, double t) {
      return t > 0.5 ? Matrix<double>(z * NAN) : z;
    });
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 3"), std::string::npos) << e.what();
  }
}

TEST(Sample, SingleStepComposition) {
  Models m;
  Rng rng(10);
  std::vector<vae::LatentGrid> corpus;
  for (int i = 0; i < 5; ++i) corpus.push_back({1, 2, 2, 2, randn(rng, 4, 2) * 3.0});
  m.gen.set_stats(LatentStats::from(corpus));
  Condition c;
  c.frame = m.frame;
  c.pokes = {{{0, 0}, {0.2, 0.2}, 7}};
  const auto z0 = sample_noise(m.gc, 5);
  const auto expect = m.gen.stats().unwhiten(z0 + vfield(FlowState{z0, 0.0}, c, m.gen));
  const auto got = sample(m.gen, c, 1, 5);
  EXPECT_LT((got.z - expect).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(sample(m.gen, c, 4, 5).z, sample(m.gen, c, 4, 5).z);
  EXPECT_NE(sample(m.gen, c, 4, 5).z, sample(m.gen, c, 4, 6).z);
  // Unconditional path.
  EXPECT_TRUE(sample(m.gen, Condition{}, 3, 1).z.allFinite());
}

TEST(Pokes, FromTracks) {
  Rng rng(11);
  const auto ts = zt::random_tracks(rng, 5, 8);
  const auto end = tracks_to_pokes(ts, {7});
  ASSERT_EQ(end.size(), 5u);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(end[i].anchor, ts[i].start);
    EXPECT_EQ(end[i].target, ts[i].positions[7]);
    EXPECT_EQ(end[i].t_star, 7);
  }
  EXPECT_TRUE(tracks_to_pokes(ts, {}).empty());
  EXPECT_EQ(tracks_to_pokes(ts, {2, 5}).size(), 10u);
  EXPECT_THROW(tracks_to_pokes(ts, {8}), RangeError);
  eval::SampleSet self{{ts}, "", {0}, 1};
  EXPECT_EQ(eval::epe(tracks_to_pokes(ts, {3, 7}), self), 0.0);
}

TEST(GenCheckpoint, RoundTripAndVaeBinding) {
  Models m;
  Rng rng(12);
  std::vector<vae::LatentGrid> corpus;
  for (int i = 0; i < 4; ++i) corpus.push_back({1, 2, 2, 2, randn(rng, 4, 2)});
  m.gen.set_stats(LatentStats::from(corpus));
  m.gen.bind_vae(m.vae.hash(), "vae.ckpt");
  zt::TempDir dir("gen");
  m.gen.save(dir / "gen.ckpt");
  const auto back = MotionGenerator::load(dir / "gen.ckpt");
  EXPECT_EQ(back.hash(), m.gen.hash());
  EXPECT_EQ(back.vae_hash(), m.vae.hash());
  EXPECT_EQ(back.vae_path(), "vae.ckpt");
  EXPECT_EQ(back.stats().std, m.gen.stats().std);
  EXPECT_EQ(back.stats().mean, m.gen.stats().mean);
  EXPECT_NO_THROW(back.check_vae(m.vae));
  EXPECT_THROW(back.check_vae(vae::MotionVae::create(m.vc, 99)), ConfigError);
  Condition c;
  c.frame = m.frame;
  EXPECT_EQ(sample(back, c, 3, 1).z, sample(m.gen, c, 3, 1).z);
  EXPECT_THROW(vae::MotionVae::load(dir / "gen.ckpt"), ParseError);
}

TEST(GenTrain, ConditionDraws) {
  Rng rng(13);
  GenExample ex;
  ex.tracks = zt::random_tracks(rng, 6, 8);
  ex.label = 2;
  GenTrainConfig tc;
  int labelled = 0, empty = 0;
  for (std::uint64_t s = 0; s < 2000; ++s) {
    const auto c = training_condition(ex, tc, s);
    labelled += c.label.has_value();
    empty += c.pokes.empty();
    EXPECT_LE(static_cast<int>(c.pokes.size()), tc.max_pokes);
    for (const auto& p : c.pokes) {
      EXPECT_GE(p.t_star, 1);
      EXPECT_LE(p.t_star, 7);
    }
  }
  EXPECT_NEAR(labelled / 2000.0, tc.p_label, 0.05);
  EXPECT_NEAR(empty / 2000.0, tc.p_no_pokes, 0.05);
  tc.p_no_pokes = 1.0;
  EXPECT_TRUE(training_condition(ex, tc, 1).pokes.empty());
}

TEST(GenTrain, SmokeLossDecreasesOnRotationCorpus) {
  Models m(8, 14);
  std::vector<GenExample> corpus;
  for (int i = 0; i < 64; ++i) {
    synth::SynthOptions o;
    o.resolution = 32;
    const auto s = synth::generate(synth::Family::RotationCwCcw, 500 + i, 6, 8, o);
    auto frame = std::make_shared<vae::FrameEmbedding>(vae::encode_frame(s.raster, m.vae));
    const auto post = vae::encode(s.tracks, *frame, m.vae);
    corpus.push_back({vae::mean_latent(post), s.tracks, frame, s.label % m.gc.n_labels});
  }
  GenTrainConfig tc;
  tc.steps = 150;
  tc.batch_size = 8;
  tc.log_every = 1;
  tc.optim.lr = 3e-3;
  tc.optim.warmup_steps = 10;
  zt::TempDir dir("gentrain");
  const auto res = train_generator(m.gen, corpus, tc, dir.path());
  ASSERT_EQ(res.log.size(), 151u);
  const double first = std::accumulate(res.log.begin(), res.log.begin() + 10, 0.0) / 10;
  const double last = std::accumulate(res.log.end() - 10, res.log.end(), 0.0) / 10;
  EXPECT_LT(last, first);
  const auto back = MotionGenerator::load(dir / "gen.ckpt");
  for (double s : back.stats().std) EXPECT_GT(s, 0.0);
  EXPECT_TRUE(std::filesystem::exists(dir / "gen_loss.csv"));
}
