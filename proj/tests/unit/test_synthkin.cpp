#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "zipmo/errors.hpp"
#include "zipmo/synthkin.hpp"

using namespace zipmo;
using namespace zipmo::synth;
using track::Point2;

TEST(Synth, FamilyNames) {
  for (auto f : kAllFamilies) EXPECT_EQ(parse_family(family_name(f)), f);
  EXPECT_THROW(parse_family("teleport"), ConfigError);
}

TEST(Synth, RotationMotionLaw) {
  const auto s = generate(Family::RotationCwCcw, 11, 24, 32);
  const double cx = s.params.at("cx"), cy = s.params.at("cy"), r = s.params.at("radius");
  const double w = std::numbers::pi / 32.0;
  const double sign = s.mode_id == 0 ? 1.0 : -1.0;
  int moving = 0;
  for (const auto& tr : s.tracks.tracks()) {
    const double dx = tr.start.x - cx, dy = tr.start.y - cy;
    const bool fg = dx * dx + dy * dy <= r * r;
    moving += fg;
    for (int t = 0; t < 32; ++t) {
      const double a = fg ? sign * w * t : 0.0;
      const double ex = cx + std::cos(a) * dx - std::sin(a) * dy;
      const double ey = cy + std::sin(a) * dx + std::cos(a) * dy;
      ASSERT_NEAR(tr.positions[t].x, ex, 1e-9);
      ASSERT_NEAR(tr.positions[t].y, ey, 1e-9);
    }
  }
  EXPECT_GT(moving, 0);
}

TEST(Synth, TracksMatchOracleForEveryFamily) {
  for (auto f : kAllFamilies) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto s = generate(f, seed, 16, 24);
      const auto o = oracle(f, s.params);
      const auto& fn = o.modes.at(s.mode_id).trajectory;
      for (const auto& tr : s.tracks.tracks())
        for (int t = 0; t < 24; ++t) {
          const auto e = fn(tr.start, t);
          ASSERT_NEAR(tr.positions[t].x, e.x, 1e-9) << family_name(f);
          ASSERT_NEAR(tr.positions[t].y, e.y, 1e-9) << family_name(f);
        }
      EXPECT_EQ(s.label, family_label(f));
      EXPECT_NO_THROW(track::validate_ground_truth(s.tracks));
    }
  }
}

TEST(Synth, OracleInvariants) {
  for (auto f : kAllFamilies) {
    const auto p = sample_params(f, 3, 40);
    const auto o = oracle(f, p);
    double total = 0;
    for (const auto& m : o.modes) total += m.probability;
    EXPECT_NEAR(total, 1.0, 1e-12) << family_name(f);
    Rng rng(9);
    for (const auto& m : o.modes)
      for (int t = 0; t < 40; ++t) {
        const auto q = m.trajectory({rng.uniform(-1, 1), rng.uniform(-1, 1)}, t);
        ASSERT_TRUE(std::isfinite(q.x) && std::isfinite(q.y));
      }
  }
}

TEST(Synth, OracleExamples) {
  const auto rot = oracle(Family::RotationCwCcw, sample_params(Family::RotationCwCcw, 1, 16));
  ASSERT_EQ(rot.modes.size(), 2u);
  EXPECT_EQ(rot.modes[0].probability, 0.5);
  EXPECT_EQ(rot.modes[1].probability, 0.5);

  const auto st = oracle(Family::StaticBackground, sample_params(Family::StaticBackground, 1, 16));
  ASSERT_EQ(st.modes.size(), 1u);
  EXPECT_EQ(st.modes[0].trajectory({0.3, -0.2}, 9), (Point2{0.3, -0.2}));

  SynthOptions opts;
  opts.goal_weights = {0.25, 0.75};
  const auto goal = oracle(Family::LinearGoalChoice, sample_params(Family::LinearGoalChoice, 1, 16, opts));
  ASSERT_EQ(goal.modes.size(), 2u);
  EXPECT_DOUBLE_EQ(goal.modes[0].probability, 0.25);
  EXPECT_DOUBLE_EQ(goal.modes[1].probability, 0.75);
}

TEST(Synth, Deterministic) {
  for (auto f : kAllFamilies) {
    const auto a = generate(f, 42, 12, 16);
    const auto b = generate(f, 42, 12, 16);
    EXPECT_EQ(a.mode_id, b.mode_id);
    EXPECT_EQ(a.raster, b.raster);
    for (int i = 0; i < a.tracks.size(); ++i) EXPECT_EQ(a.tracks[i].positions, b.tracks[i].positions);
  }
}

TEST(Synth, BackgroundShare) {
  for (auto f : kAllFamilies) {
    if (f == Family::StaticBackground) continue;
    const auto s = generate(f, 5, 20, 8);
    int bg = 0;
    for (const auto& tr : s.tracks.tracks()) bg += !on_foreground(f, s.params, tr.start);
    EXPECT_GE(bg, 4) << family_name(f);
  }
}

TEST(Synth, GoalChoiceModeFrequencies) {
  SynthOptions opts;
  opts.goal_weights = {0.3, 0.7};
  const int n = 10000;
  int first = 0;
  for (int i = 0; i < n; ++i) {
    // Only the mode draw matters here; a tiny scene keeps this fast.
    first += generate(Family::LinearGoalChoice, static_cast<std::uint64_t>(i), 1, 2, opts).mode_id == 0;
  }
  EXPECT_NEAR(static_cast<double>(first) / n, 0.3, 0.02);
}

TEST(Synth, ForegroundStartsUniformKs) {
  // Foreground starts of the goal-choice family are uniform over the square.
  const auto p = sample_params(Family::LinearGoalChoice, 8, 2);
  const int total = 12500;
  const auto s = realize(Family::LinearGoalChoice, p, 0, 8, total);
  const double lo = p.at("cx") - p.at("half"), hi = p.at("cx") + p.at("half");
  std::vector<double> xs;
  for (const auto& tr : s.tracks.tracks())
    if (on_foreground(Family::LinearGoalChoice, p, tr.start)) xs.push_back((tr.start.x - lo) / (hi - lo));
  ASSERT_GE(xs.size(), 9000u);
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    d = std::max({d, std::abs((i + 1) / n - xs[i]), std::abs(xs[i] - i / n)});
  EXPECT_LT(d, 1.628 / std::sqrt(n));  // alpha = 0.01
}

TEST(Synth, Raster) {
  const auto s = generate(Family::RotationCwCcw, 2, 16, 8);
  const auto big = rasterize(s, 224);
  EXPECT_EQ(big.width, 224);
  EXPECT_EQ(big.height, 224);
  for (double v : big.pixels) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  EXPECT_THROW(rasterize(s, 16), RangeError);

  // Mass around each foreground start beats the image mean.
  const int R = 64;
  const auto img = rasterize(s, R);
  const double mean = std::accumulate(img.pixels.begin(), img.pixels.end(), 0.0) / img.pixels.size();
  for (const auto& tr : s.tracks.tracks()) {
    if (!on_foreground(s.family, s.params, tr.start)) continue;
    const auto px = track::denormalize(tr.start, track::PixelSpace(R, R));
    const int cx = std::clamp(static_cast<int>(std::lround(px.x)), 1, R - 2);
    const int cy = std::clamp(static_cast<int>(std::lround(px.y)), 1, R - 2);
    double m = 0;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) m += img.at(cx + dx, cy + dy);
    EXPECT_GT(m / 9.0, mean);
  }
}

TEST(Synth, StaticRasterIndependentOfTrackSeed) {
  const auto p = sample_params(Family::StaticBackground, 4, 8);
  const auto a = realize(Family::StaticBackground, p, 0, 1, 8);
  const auto b = realize(Family::StaticBackground, p, 0, 2, 8);
  EXPECT_EQ(a.raster, b.raster);
  EXPECT_NE(a.tracks[0].start, b.tracks[0].start);
}

TEST(Synth, SaveLoadCrossModule) {
  zt::TempDir dir("synth");
  const auto s = generate(Family::PendulumArm, 3, 10, 12);
  save_scenario(s, dir.path(), "scene_00000");
  const auto tf = track::load_tracks(dir / "scene_00000.tracks.json");
  EXPECT_EQ(tf.tracks.size(), 10);
  EXPECT_EQ(tf.tracks.horizon(), 12);
  const auto back = load_scenario(dir.path(), "scene_00000");
  EXPECT_EQ(back.family, s.family);
  EXPECT_EQ(back.mode_id, s.mode_id);
  EXPECT_EQ(back.label, s.label);
  EXPECT_EQ(back.params, s.params);
  EXPECT_EQ(back.raster.width, s.raster.width);
  EXPECT_THROW(load_scenario(dir.path(), "missing"), MissingFileError);
}

TEST(Synth, Errors) {
  EXPECT_THROW(generate(Family::RotationCwCcw, 0, 0, 8), RangeError);
  EXPECT_THROW(generate(Family::RotationCwCcw, 0, 4, 1), RangeError);
  SynthOptions bad;
  bad.goal_weights = {};
  EXPECT_THROW(generate(Family::LinearGoalChoice, 0, 4, 8, bad), ConfigError);
}
