#include <cmath>
#include <numeric>

#include <json.hpp>

#include "../oracles.hpp"
#include "helpers.hpp"
#include "zipmo/errors.hpp"
#include "zipmo/evalkit.hpp"

using namespace zipmo;
using namespace zipmo::eval;
using track::Point2;
using track::Track;
using track::TrackSet;

namespace {

// Builds a track set from 128-grid pixel coordinates.
TrackSet from_px(const std::vector<std::vector<Point2>>& px) {
  std::vector<Track> out;
  for (const auto& tr : px) {
    std::vector<Point2> n;
    for (auto p : tr) n.push_back({p.x / 64.0 - 1.0, p.y / 64.0 - 1.0});
    out.push_back(Track::ground_truth(n));
  }
  return {out, "px"};
}

TrackSet jitter(const TrackSet& ts, Rng& rng, double sd) {
  std::vector<Track> out;
  for (const auto& tr : ts.tracks()) {
    Track t = tr;
    for (auto& p : t.positions) {
      p.x = std::clamp(p.x + rng.normal(0, sd), -1.0, 1.0);
      p.y = std::clamp(p.y + rng.normal(0, sd), -1.0, 1.0);
    }
    out.push_back(t);
  }
  return {out, ts.frame_id()};
}

}  // namespace

TEST(MinMeanMse, WorkedExample) {
  const auto gt = from_px({{{0, 0}, {10, 0}}});
  const auto a = from_px({{{0, 0}, {10, 0}}});
  const auto b = from_px({{{0, 0}, {10, 10}}});
  const auto r = min_mean_mse(gt, {{a, b}});
  EXPECT_NEAR(r.min, 0.0, 1e-9);
  EXPECT_NEAR(r.mean, 25.0, 1e-9);
  const auto same = min_mean_mse(gt, {{gt, gt, gt}});
  EXPECT_EQ(same.min, 0.0);
  EXPECT_EQ(same.mean, 0.0);
}

TEST(MinMeanMse, RandomMatchesOracleAndOrderInvariant) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const int N = 1 + rng.index(8), T = 2 + rng.index(7), K = 1 + rng.index(8);
    const auto gt = zt::random_tracks(rng, N, T);
    SampleSet s;
    for (int k = 0; k < K; ++k) s.samples.push_back(jitter(gt, rng, 0.1));
    const auto r = min_mean_mse(gt, s);
    const auto [lo, mean] = oracle::min_mean(gt, s.samples);
    EXPECT_NEAR(r.min, lo, 1e-9);
    EXPECT_NEAR(r.mean, mean, 1e-9);
    EXPECT_LE(r.min, r.mean);
    std::reverse(s.samples.begin(), s.samples.end());
    const auto r2 = min_mean_mse(gt, s);
    EXPECT_EQ(r2.min, r.min);
    EXPECT_NEAR(r2.mean, r.mean, 1e-12);
  }
}

TEST(MinMeanMse, Errors) {
  Rng rng(2);
  const auto gt = zt::random_tracks(rng, 2, 4);
  EXPECT_THROW(min_mean_mse(gt, {}), ArgumentError);
  EXPECT_THROW(min_mean_mse(gt, {{zt::random_tracks(rng, 3, 4)}}), ShapeError);
  EXPECT_THROW(track_mse(gt, zt::random_tracks(rng, 2, 5)), ShapeError);
}

TEST(Epe, WorkedExample) {
  const auto s = from_px({{{64, 64}, {64, 67}}});
  const std::vector<gen::Poke> pokes{{{0, 0}, {0, 0}, 1}};
  EXPECT_NEAR(epe(pokes, {{s}}), 3.0, 1e-12);
}

TEST(Epe, RandomMatchesOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int N = 1 + rng.index(8), T = 2 + rng.index(7), K = 1 + rng.index(8);
    SampleSet s;
    for (int k = 0; k < K; ++k) s.samples.push_back(zt::random_tracks(rng, N, T));
    std::vector<gen::Poke> pokes;
    for (int p = 0, P = 1 + rng.index(4); p < P; ++p)
      pokes.push_back({{rng.uniform(-1, 1), rng.uniform(-1, 1)}, {rng.uniform(-1, 1), rng.uniform(-1, 1)}, rng.index(T)});
    EXPECT_NEAR(epe(pokes, s), oracle::epe(pokes, s.samples), 1e-9);
  }
  EXPECT_THROW(epe({}, {{zt::random_tracks(rng, 1, 2)}}), ArgumentError);
}

TEST(Pck, Examples) {
  Rng rng(4);
  const auto gt = zt::random_tracks(rng, 5, 6);
  const auto same = pck(gt, gt, default_pck_thresholds());
  for (double f : same.fractions) EXPECT_EQ(f, 1.0);
  EXPECT_EQ(same.delta_avg, 1.0);

  // Uniform 3-px offset on the 256 grid.
  std::vector<Track> moved;
  for (int i = 0; i < 4; ++i) {
    std::vector<Point2> g, p;
    for (int t = 0; t < 5; ++t) g.push_back({-0.5 + 0.1 * t, 0.1 * i});
    moved.push_back(Track::ground_truth(g));
  }
  TrackSet gts(moved, "g");
  for (auto& tr : moved)
    for (auto& q : tr.positions) q.x += 3.0 / 128.0;
  for (auto& tr : moved) tr.start = tr.positions[0];
  TrackSet pred(moved, "p");
  const auto r = pck(gts, pred, default_pck_thresholds());
  const std::vector<double> expect{0, 0, 1, 1, 1};
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(r.fractions[k], expect[k]);
  EXPECT_NEAR(r.delta_avg, 0.6, 1e-12);
  EXPECT_THROW(pck(gts, pred, {}), ArgumentError);
}

TEST(Pck, RandomMatchesOracleMonotoneAndScaleInvariant) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int N = 1 + rng.index(8), T = 2 + rng.index(7);
    const auto gt = zt::random_tracks(rng, N, T);
    const auto pred = jitter(gt, rng, 0.05);
    std::vector<double> thr;
    for (int k = 0, K = 1 + rng.index(6); k < K; ++k) thr.push_back(rng.uniform(0.5, 20));
    std::sort(thr.begin(), thr.end());
    const int w = 32 + rng.index(300), h = 32 + rng.index(300);
    const auto r = pck(gt, pred, thr, {w, h});
    const auto o = oracle::pck(gt, pred, thr, w, h);
    for (std::size_t k = 0; k < thr.size(); ++k) {
      EXPECT_NEAR(r.fractions[k], o[k], 1e-9);
      EXPECT_GE(r.fractions[k], 0.0);
      EXPECT_LE(r.fractions[k], 1.0);
      if (k) EXPECT_GE(r.fractions[k], r.fractions[k - 1]);
    }
    // Doubling the pixel space and the thresholds changes nothing.
    std::vector<double> thr2;
    for (double t : thr) thr2.push_back(2 * t);
    const auto r2 = pck(gt, pred, thr2, {2 * w, 2 * h});
    for (std::size_t k = 0; k < thr.size(); ++k) EXPECT_EQ(r2.fractions[k], r.fractions[k]);
  }
}

TEST(Knn, TightClusters) {
  Rng rng(6);
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  for (int c = 0; c < 3; ++c)
    for (int cluster = 0; cluster < 2; ++cluster) {
      std::vector<double> center(6);
      for (auto& v : center) v = rng.normal();
      for (int m = 0; m < 5; ++m) {
        auto p = center;
        for (auto& v : p) v += 1e-3 * rng.normal();
        x.push_back(p);
        y.push_back(c);
      }
    }
  EXPECT_EQ(knn_accuracy(x, y, 1), 1.0);
  EXPECT_EQ(knn_accuracy(x, y, 3), 1.0);
}

TEST(Knn, ShuffledLabelsNearChance) {
  Rng rng(7);
  double acc = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    for (int i = 0; i < 200; ++i) {
      std::vector<double> p(8);
      for (auto& v : p) v = rng.normal();
      x.push_back(p);
      y.push_back(i % 4);
    }
    acc += knn_accuracy(x, y, 1);
  }
  EXPECT_NEAR(acc / 20, 0.25, 0.05);
}

TEST(Knn, RandomMatchesOracle) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const int classes = 2 + rng.index(3), k = 1 + rng.index(3);
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    for (int c = 0; c < classes; ++c)
      for (int m = 0, M = k + 1 + rng.index(4); m < M; ++m) {
        std::vector<double> p(1 + rng.index(6));
        p.resize(4);
        for (auto& v : p) v = rng.normal() + 0.5 * c;
        x.push_back(p);
        y.push_back(c);
      }
    EXPECT_NEAR(knn_accuracy(x, y, k), oracle::knn(x, y, k), 1e-9);
  }
}

TEST(Knn, Preconditions) {
  std::vector<std::vector<double>> x{{1, 0}, {0, 1}, {1, 1}, {2, 1}};
  EXPECT_THROW(knn_accuracy(x, {0, 0, 1, 1}, 2), ArgumentError);
  EXPECT_THROW(knn_accuracy(x, {0, 0, 0, 0}, 1), ArgumentError);
  EXPECT_NO_THROW(knn_accuracy(x, {0, 0, 1, 1}, 1));
}

TEST(Coverage, Examples) {
  const auto p = synth::sample_params(synth::Family::RotationCwCcw, 3, 16);
  const auto o = synth::oracle(synth::Family::RotationCwCcw, p);
  const auto s = synth::realize(synth::Family::RotationCwCcw, p, 0, 3, 12);
  const auto starts = s.tracks.starts();
  const auto m0 = o.realize(0, starts, 16, "a"), m1 = o.realize(1, starts, 16, "b");
  const double gap = min_mode_gap(o, starts, 16);
  EXPECT_NEAR(gap, track_mse(m0, m1), 1e-12);
  EXPECT_EQ(mode_coverage(o, {{m0, m1}}, gap / 2).fraction, 1.0);
  const auto half = mode_coverage(o, {{m0, m0, m0}}, gap / 2);
  EXPECT_EQ(half.fraction, 0.5);
  EXPECT_TRUE(half.hit[0]);
  EXPECT_FALSE(half.hit[1]);
  Rng rng(9);
  EXPECT_EQ(mode_coverage(o, {{jitter(m0, rng, 0.01), jitter(m1, rng, 0.01)}}, 0.0).fraction, 0.0);
  // Each mode's expected MSE against mode-0 ground truth.
  EXPECT_NEAR(oracle_mean_mse(o, m0), 0.5 * track_mse(m0, m1), 1e-9);
}

TEST(Report, JsonAndCsv) {
  MetricReport r;
  r.min_mse = 1.5;
  r.mean_mse = 2.25;
  r.epe = 0.75;
  PckResult p;
  p.thresholds = {1, 2};
  p.fractions = {0.5, 1.0};
  p.delta_avg = 0.75;
  r.pck = p;
  r.n_items = 3;
  r.n_samples = 4;
  r.config_json = R"({"nfe":10})";
  const auto back = MetricReport::from_json(r.to_json());
  EXPECT_EQ(back.min_mse, 1.5);
  EXPECT_EQ(back.mean_mse, 2.25);
  EXPECT_EQ(*back.epe, 0.75);
  EXPECT_EQ(back.pck->fractions, p.fractions);
  EXPECT_FALSE(back.knn_acc.has_value());
  EXPECT_EQ(back.n_samples, 4);
  EXPECT_EQ(nlohmann::json::parse(back.config_json), nlohmann::json::parse(r.config_json));
  EXPECT_EQ(MetricReport::csv_header(), "run,n_items,n_samples,min_mse,mean_mse,epe,delta_avg,knn_acc");
  const auto row = r.csv_row("x");
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 7);
  EXPECT_EQ(row.rfind("x,3,4,", 0), 0u);
}
