#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "zipmo/errors.hpp"
#include "zipmo/trackdata.hpp"

using namespace zipmo;
using namespace zipmo::track;

TEST(Normalize, PixelCenterConvention) {
  const PixelSpace s(128, 128);
  const auto c = normalize(Point2{63.5, 63.5}, s);
  EXPECT_DOUBLE_EQ(c.x, 0.0);
  EXPECT_DOUBLE_EQ(c.y, 0.0);
  const auto corner = normalize(Point2{0, 0}, s);
  EXPECT_DOUBLE_EQ(corner.x, -0.9921875);
  EXPECT_DOUBLE_EQ(corner.y, -0.9921875);
}

TEST(Normalize, Denormalize) {
  const PixelSpace s(128, 128);
  EXPECT_EQ(denormalize(Point2{0, 0}, s), (Point2{63.5, 63.5}));
  EXPECT_EQ(denormalize(Point2{-1, -1}, s), (Point2{-0.5, -0.5}));
}

TEST(Normalize, OutOfRangePixel) {
  const PixelSpace s(64, 32);
  EXPECT_THROW(normalize(Point2{64, 0}, s), RangeError);
  EXPECT_THROW(normalize(Point2{0, -0.6}, s), RangeError);
  EXPECT_THROW(normalize(Point2{63.6, 0}, s), RangeError);
  EXPECT_THROW(denormalize(Point2{1.5, 0}, s), RangeError);
  EXPECT_THROW(PixelSpace(0, 4), RangeError);
}

TEST(Normalize, RoundTripProperty) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const PixelSpace s(1 + rng.index(512), 1 + rng.index(512));
    const Point2 px{rng.uniform(-0.5, s.width - 0.5), rng.uniform(-0.5, s.height - 0.5)};
    const auto back = denormalize(normalize(px, s), s);
    ASSERT_NEAR(back.x, px.x, 1e-12 * s.width);
    ASSERT_NEAR(back.y, px.y, 1e-12 * s.height);
    const Point2 n{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const auto n2 = normalize(denormalize(n, s), s);
    ASSERT_NEAR(n2.x, n.x, 1e-12);
    ASSERT_NEAR(n2.y, n.y, 1e-12);
  }
}

TEST(Track, GroundTruthInvariants) {
  EXPECT_THROW(Track::ground_truth({{0, 0}}), RangeError);
  EXPECT_THROW(Track::ground_truth({{0, 0}, {1.2, 0}}), RangeError);
  EXPECT_THROW(Track::ground_truth({{0, 0}, {NAN, 0}}), RangeError);
  EXPECT_THROW(Track::ground_truth({{0, 0}, {0, 0}}, {true}), RangeError);
  const auto t = Track::ground_truth({{0.1, 0.2}, {0.3, 0.4}});
  EXPECT_EQ(t.start, (Point2{0.1, 0.2}));
}

TEST(TrackSet, StructuralInvariants) {
  const auto a = Track::ground_truth({{0, 0}, {0, 0}});
  const auto b = Track::ground_truth({{0, 0}, {0, 0}, {0, 0}});
  EXPECT_THROW(TrackSet({}, "f"), RangeError);
  EXPECT_THROW(TrackSet({a}, ""), RangeError);
  EXPECT_THROW(TrackSet({a, b}, "f"), RangeError);
  EXPECT_TRUE(TrackSet::empty("f").is_empty());
  TrackSet ok({a, a}, "f");
  EXPECT_EQ(ok.size(), 2);
  EXPECT_EQ(ok.horizon(), 2);
}

TEST(TrackSet, ValidateGroundTruthCatchesMovedStart) {
  Track t;
  t.start = {0, 0};
  t.positions = {{0.5, 0}, {0.5, 0}};
  TrackSet ts({t}, "f");
  EXPECT_THROW(validate_ground_truth(ts), RangeError);
}

namespace {

Track constant_track(Point2 p, int T) { return Track::ground_truth(std::vector<Point2>(T, p)); }

Track circle_track(double r, double phase, int T) {
  std::vector<Point2> p;
  for (int t = 0; t < T; ++t) p.push_back({r * std::cos(phase + 0.1 * t), r * std::sin(phase + 0.1 * t)});
  return Track::ground_truth(std::move(p));
}

double naive_variance(const Track& tr) {
  double mx = 0, my = 0;
  for (const auto& p : tr.positions) mx += p.x, my += p.y;
  mx /= tr.length();
  my /= tr.length();
  double v = 0;
  for (const auto& p : tr.positions) v += (p.x - mx) * (p.x - mx) + (p.y - my) * (p.y - my);
  return v / tr.length();
}

}  // namespace

TEST(FilterStatic, ConstantTrackRemoved) {
  TrackSet ts({constant_track({0.2, 0.2}, 8)}, "f");
  EXPECT_TRUE(filter_static(ts, 1e-6).is_empty());
}

TEST(FilterStatic, ZeroThresholdKeepsMovingTrack) {
  TrackSet ts({circle_track(0.5, 0, 8)}, "f");
  EXPECT_EQ(filter_static(ts, 0.0).size(), 1);
}

TEST(FilterStatic, MixedSetKeepsExactlyTheMovers) {
  std::vector<Track> tr;
  for (int i = 0; i < 10; ++i) {
    tr.push_back(constant_track({-0.5 + 0.1 * i, 0.3}, 16));
    tr.push_back(circle_track(0.3 + 0.02 * i, 0.5 * i, 16));
  }
  TrackSet ts(tr, "f");
  const double thr = 1e-4;
  const auto kept = filter_static(ts, thr);
  std::vector<int> expect;
  for (int i = 0; i < ts.size(); ++i)
    if (naive_variance(ts[i]) > thr) expect.push_back(i);
  ASSERT_EQ(kept.size(), 10);
  ASSERT_EQ(static_cast<int>(expect.size()), 10);
  for (int k = 0; k < 10; ++k) EXPECT_EQ(kept[k].positions, ts[expect[k]].positions);
  for (int i = 0; i < ts.size(); ++i) EXPECT_NEAR(motion_variance(ts[i]), naive_variance(ts[i]), 1e-15);
}

TEST(FilterStatic, IdempotentAndPermutationEquivariant) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Track> tr;
    for (int i = 0; i < 12; ++i)
      tr.push_back(rng.bernoulli(0.5) ? constant_track({rng.uniform(-1, 1), rng.uniform(-1, 1)}, 6)
                                      : circle_track(rng.uniform(0.05, 0.9), rng.uniform(0, 6), 6));
    TrackSet ts(tr, "f");
    const auto once = filter_static(ts, 1e-3);
    if (once.is_empty()) continue;
    const auto twice = filter_static(once, 1e-3);
    ASSERT_EQ(once.size(), twice.size());
    std::vector<int> perm(ts.size());
    for (int i = 0; i < ts.size(); ++i) perm[i] = ts.size() - 1 - i;
    const auto permuted = filter_static(ts.subset(perm), 1e-3);
    ASSERT_EQ(permuted.size(), once.size());
    for (int i = 0; i < once.size(); ++i)
      EXPECT_EQ(permuted[once.size() - 1 - i].positions, once[i].positions);
  }
  EXPECT_THROW(filter_static(TrackSet({circle_track(0.2, 0, 4)}, "f"), -1.0), RangeError);
}

TEST(Window, Counts) {
  Rng rng(2);
  const auto ts = zt::random_tracks(rng, 3, 64);
  EXPECT_EQ(window(ts, 64, 1).size(), 1u);
  EXPECT_EQ(window(ts, 16, 16).size(), 4u);
  EXPECT_EQ(window(ts, 10, 7).size(), static_cast<std::size_t>((64 - 10) / 7 + 1));
  EXPECT_THROW(window(ts, 65, 1), RangeError);
}

TEST(Window, EqualsNaiveSlicing) {
  Rng rng(3);
  const auto ts = zt::random_tracks(rng, 4, 30);
  const auto ws = window(ts, 7, 5);
  for (std::size_t w = 0; w < ws.size(); ++w) {
    ASSERT_EQ(ws[w].horizon(), 7);
    for (int i = 0; i < ts.size(); ++i) {
      EXPECT_EQ(ws[w][i].start, ts[i].positions[w * 5]);
      for (int t = 0; t < 7; ++t) EXPECT_EQ(ws[w][i].positions[t], ts[i].positions[w * 5 + t]);
    }
  }
}

TEST(Subsample, IdentityAndStrideOracle) {
  Rng rng(5);
  const auto ts = zt::random_tracks(rng, 3, 64);
  const auto same = subsample_time(ts, 1);
  for (int i = 0; i < ts.size(); ++i) EXPECT_EQ(same[i].positions, ts[i].positions);
  const auto sub = subsample_time(ts, 4);
  EXPECT_EQ(sub.horizon(), 16);
  const auto odd = subsample_time(zt::random_tracks(rng, 2, 10), 3);
  EXPECT_EQ(odd.horizon(), 4);
  for (int i = 0; i < ts.size(); ++i) {
    EXPECT_EQ(sub[i].start, ts[i].start);
    for (int t = 0; t < 16; ++t) EXPECT_EQ(sub[i].positions[t], ts[i].positions[4 * t]);
  }
}

TEST(Subsample, CommutesWithWindow) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 1 + rng.index(4), M = 6 + rng.index(10);
    const int tw = 2 + rng.index(M - 1), s = 1 + rng.index(3);
    const auto ts = zt::random_tracks(rng, 2, k * M);
    const auto a = window(subsample_time(ts, k), tw, s);
    const auto raw = window(ts, (tw - 1) * k + 1, s * k);
    ASSERT_EQ(a.size(), raw.size());
    for (std::size_t w = 0; w < a.size(); ++w) {
      const auto b = subsample_time(raw[w], k);
      for (int i = 0; i < ts.size(); ++i) {
        EXPECT_EQ(a[w][i].positions, b[i].positions);
        EXPECT_EQ(a[w][i].start, b[i].start);
      }
    }
  }
}

TEST(TrackFile, RoundTrip) {
  Rng rng(7);
  auto ts = zt::random_tracks(rng, 5, 9, "frame_7");
  zt::TempDir dir("tracks");
  save_tracks(ts, PixelSpace(96, 64), dir / "a.tracks.json");
  const auto back = load_tracks(dir / "a.tracks.json");
  EXPECT_EQ(back.space.width, 96);
  EXPECT_EQ(back.space.height, 64);
  EXPECT_EQ(back.tracks.frame_id(), "frame_7");
  ASSERT_EQ(back.tracks.size(), 5);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(back.tracks[i].positions, ts[i].positions);
}

TEST(TrackFile, VisibilityRoundTrip) {
  Track t = Track::ground_truth({{0, 0}, {0.1, 0}, {0.2, 0}}, {true, false, true});
  const auto back = parse_tracks(dump_tracks(TrackSet({t}, "v"), PixelSpace(8, 8)));
  EXPECT_EQ(back.tracks[0].visible, t.visible);
}

TEST(TrackFile, Errors) {
  Rng rng(8);
  const auto text = dump_tracks(zt::random_tracks(rng, 2, 4), PixelSpace(16, 16));
  EXPECT_THROW(parse_tracks(text.substr(0, text.size() / 2)), ParseError);
  EXPECT_THROW(load_tracks("/nonexistent/x.tracks.json"), MissingFileError);
  const std::string short_track =
      R"({"version":1,"frame_id":"f","width":8,"height":8,"T":3,"tracks":[{"xy":[[0,0],[0,0],[0,0]]},{"xy":[[0,0],[0,0]]}]})";
  try {
    parse_tracks(short_track);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("tracks[1]"), std::string::npos) << e.what();
  }
  const std::string nan_coord =
      R"({"version":1,"frame_id":"f","width":8,"height":8,"T":2,"tracks":[{"xy":[[0,0],[0,"x"]]}]})";
  EXPECT_THROW(parse_tracks(nan_coord), ParseError);
  EXPECT_THROW(parse_tracks(R"({"version":2,"frame_id":"f","width":8,"height":8,"T":2,"tracks":[]})"), ParseError);
}
