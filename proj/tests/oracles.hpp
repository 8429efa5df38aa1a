#pragma once

// Deliberately naive reference implementations of the evaluation metrics.
// Written from the metric definitions with plain loops and no shared code
// with evalkit.

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "zipmo/motiongen.hpp"
#include "zipmo/trackdata.hpp"

namespace oracle {

using zipmo::track::TrackSet;

// Normalized units -> 128-pixel grid.
inline double px128(double v) { return v * 64.0; }

inline double mse(const TrackSet& gt, const TrackSet& pred) {
  double s = 0;
  int count = 0;
  for (int i = 0; i < gt.size(); ++i)
    for (int t = 0; t < gt.horizon(); ++t) {
      const double dx = px128(gt[i].positions[t].x) - px128(pred[i].positions[t].x);
      const double dy = px128(gt[i].positions[t].y) - px128(pred[i].positions[t].y);
      s += dx * dx + dy * dy;
      ++count;
    }
  return s / count;
}

inline std::pair<double, double> min_mean(const TrackSet& gt, const std::vector<TrackSet>& samples) {
  double lo = 1e300, sum = 0;
  for (const auto& s : samples) {
    const double m = mse(gt, s);
    lo = std::min(lo, m);
    sum += m;
  }
  return {lo, sum / samples.size()};
}

inline double epe(const std::vector<zipmo::gen::Poke>& pokes, const std::vector<TrackSet>& samples) {
  double total = 0;
  for (const auto& s : samples) {
    double per = 0;
    for (const auto& p : pokes) {
      int best = 0;
      for (int i = 1; i < s.size(); ++i) {
        const double di = std::hypot(s[i].start.x - p.anchor.x, s[i].start.y - p.anchor.y);
        const double db = std::hypot(s[best].start.x - p.anchor.x, s[best].start.y - p.anchor.y);
        if (di < db) best = i;
      }
      const auto q = s[best].positions[p.t_star];
      per += std::hypot(px128(q.x) - px128(p.target.x), px128(q.y) - px128(p.target.y));
    }
    total += per / pokes.size();
  }
  return total / samples.size();
}

inline std::vector<double> pck(const TrackSet& gt, const TrackSet& pred, const std::vector<double>& thr, int w,
                               int h) {
  std::vector<double> frac(thr.size(), 0.0);
  int n = 0;
  for (int i = 0; i < gt.size(); ++i)
    for (int t = 0; t < gt.horizon(); ++t) {
      // Through pixel coordinates, as a user would measure it.
      const auto a = zipmo::track::denormalize(gt[i].positions[t], {w, h});
      const auto b = zipmo::track::denormalize(pred[i].positions[t], {w, h});
      const double e = std::hypot(a.x - b.x, a.y - b.y);
      for (std::size_t k = 0; k < thr.size(); ++k) frac[k] += e < thr[k] ? 1 : 0;
      ++n;
    }
  for (auto& f : frac) f /= n;
  return frac;
}

inline double knn(const std::vector<std::vector<double>>& x, const std::vector<int>& labels, int k) {
  const int n = static_cast<int>(x.size());
  auto cosd = [&](int i, int j) {
    double d = 0, a = 0, b = 0;
    for (std::size_t c = 0; c < x[i].size(); ++c) {
      d += x[i][c] * x[j][c];
      a += x[i][c] * x[i][c];
      b += x[j][c] * x[j][c];
    }
    if (a == 0 || b == 0) return 1.0;
    return 1.0 - d / (std::sqrt(a) * std::sqrt(b));
  };
  int correct = 0;
  for (int i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> d;
    for (int j = 0; j < n; ++j)
      if (j != i) d.push_back({cosd(i, j), j});
    std::sort(d.begin(), d.end());
    std::map<int, int> cnt;
    std::map<int, double> sum;
    for (int m = 0; m < k; ++m) {
      cnt[labels[d[m].second]] += 1;
      sum[labels[d[m].second]] += d[m].first;
    }
    int best = -1;
    for (const auto& [label, c] : cnt) {
      if (best < 0 || c > cnt[best] || (c == cnt[best] && sum[label] < sum[best])) best = label;
    }
    correct += best == labels[i];
  }
  return static_cast<double>(correct) / n;
}

}  // namespace oracle
