#include "zipmo/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

#include "zipmo/errors.hpp"

namespace zipmo::eval {

using track::Point2;
using track::TrackSet;

namespace {

void check_shapes(const TrackSet& a, const TrackSet& b) {
  if (a.size() != b.size() || a.horizon() != b.horizon())
    throw ShapeError("track sets differ in shape: " + std::to_string(a.size()) + "x" + std::to_string(a.horizon()) +
                     " vs " + std::to_string(b.size()) + "x" + std::to_string(b.horizon()));
}

double sq_dist(Point2 a, Point2 b, double scale) {
  const double dx = (a.x - b.x) * scale, dy = (a.y - b.y) * scale;
  return dx * dx + dy * dy;
}

}  // namespace

double track_mse(const TrackSet& gt, const TrackSet& pred) {
  check_shapes(gt, pred);
  if (gt.is_empty()) throw ArgumentError("track_mse: empty track set");
  double s = 0.0;
  for (int i = 0; i < gt.size(); ++i) {
    const auto& a = gt[static_cast<std::size_t>(i)].positions;
    const auto& b = pred[static_cast<std::size_t>(i)].positions;
    for (std::size_t t = 0; t < a.size(); ++t) s += sq_dist(a[t], b[t], kMetricScale);
  }
  return s / (static_cast<double>(gt.size()) * gt.horizon());
}

MinMean min_mean_mse(const TrackSet& gt, const SampleSet& samples) {
  if (samples.samples.empty()) throw ArgumentError("min_mean_mse: no samples");
  MinMean r{std::numeric_limits<double>::infinity(), 0.0};
  for (const auto& s : samples.samples) {
    const double m = track_mse(gt, s);
    r.min = std::min(r.min, m);
    r.mean += m;
  }
  r.mean /= samples.size();
  return r;
}

double epe(const std::vector<gen::Poke>& pokes, const SampleSet& samples) {
  if (samples.samples.empty()) throw ArgumentError("epe: no samples");
  if (pokes.empty()) throw ArgumentError("epe: no pokes");
  double total = 0.0;
  for (const auto& s : samples.samples) {
    if (s.is_empty()) throw ArgumentError("epe: empty sample");
    double per = 0.0;
    for (const auto& p : pokes) {
      if (p.t_star < 0 || p.t_star >= s.horizon()) throw RangeError("epe: poke t_star outside the sample horizon");
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < s.tracks().size(); ++i) {
        const double d = sq_dist(s[i].start, p.anchor, 1.0);
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      per += std::sqrt(sq_dist(s[best].positions[static_cast<std::size_t>(p.t_star)], p.target, kMetricScale));
    }
    total += per / static_cast<double>(pokes.size());
  }
  return total / samples.size();
}

std::vector<double> default_pck_thresholds() { return {1, 2, 4, 8, 16}; }

PckResult pck(const TrackSet& gt, const TrackSet& pred, const std::vector<double>& thresholds,
              const track::PixelSpace& space) {
  if (thresholds.empty()) throw ArgumentError("pck: empty threshold list");
  check_shapes(gt, pred);
  if (gt.is_empty()) throw ArgumentError("pck: empty track set");
  const double sx = space.width / 2.0, sy = space.height / 2.0;
  PckResult r;
  r.thresholds = thresholds;
  r.fractions.assign(thresholds.size(), 0.0);
  double n = 0.0;
  for (int i = 0; i < gt.size(); ++i) {
    const auto& a = gt[static_cast<std::size_t>(i)].positions;
    const auto& b = pred[static_cast<std::size_t>(i)].positions;
    for (std::size_t t = 0; t < a.size(); ++t) {
      const double dx = (a[t].x - b[t].x) * sx, dy = (a[t].y - b[t].y) * sy;
      const double e = std::sqrt(dx * dx + dy * dy);
      for (std::size_t k = 0; k < thresholds.size(); ++k)
        if (e < thresholds[k]) r.fractions[k] += 1.0;
      n += 1.0;
    }
  }
  for (auto& f : r.fractions) f /= n;
  for (double f : r.fractions) r.delta_avg += f;
  r.delta_avg /= static_cast<double>(r.fractions.size());
  return r;
}

double knn_accuracy(const std::vector<std::vector<double>>& latents, const std::vector<int>& labels, int k) {
  if (latents.size() != labels.size()) throw ArgumentError("knn_accuracy: latents and labels differ in count");
  if (k < 1) throw ArgumentError("knn_accuracy: k must be >= 1");
  std::map<int, int> counts;
  for (int l : labels) ++counts[l];
  if (counts.size() < 2) throw ArgumentError("knn_accuracy: need at least 2 classes");
  for (const auto& [l, c] : counts)
    if (c < k + 1)
      throw ArgumentError("knn_accuracy: class " + std::to_string(l) + " has " + std::to_string(c) +
                          " members, needs k + 1 = " + std::to_string(k + 1));
  const std::size_t n = latents.size();
  const std::size_t dim = latents.front().size();
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (latents[i].size() != dim) throw ShapeError("knn_accuracy: latents differ in length");
    double s = 0.0;
    for (double v : latents[i]) s += v * v;
    norms[i] = std::sqrt(s);
  }
  auto cosine_distance = [&](std::size_t i, std::size_t j) {
    if (norms[i] == 0.0 || norms[j] == 0.0) return 1.0;
    double dot = 0.0;
    for (std::size_t d = 0; d < dim; ++d) dot += latents[i][d] * latents[j][d];
    return 1.0 - dot / (norms[i] * norms[j]);
  };
  int correct = 0;
  std::vector<std::pair<double, std::size_t>> dist;
  for (std::size_t i = 0; i < n; ++i) {
    dist.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) dist.emplace_back(cosine_distance(i, j), j);
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    std::map<int, std::pair<int, double>> votes;  // label -> (count, distance sum)
    for (int m = 0; m < k; ++m) {
      auto& v = votes[labels[dist[static_cast<std::size_t>(m)].second]];
      ++v.first;
      v.second += dist[static_cast<std::size_t>(m)].first;
    }
    int best = votes.begin()->first;
    for (const auto& [l, v] : votes) {
      const auto& b = votes[best];
      if (v.first > b.first || (v.first == b.first && v.second < b.second)) best = l;
    }
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

Coverage mode_coverage(const synth::ModeOracle& oracle, const SampleSet& samples, double eps) {
  if (samples.samples.empty()) throw ArgumentError("mode_coverage: no samples");
  if (oracle.modes.empty()) throw ArgumentError("mode_coverage: oracle has no modes");
  Coverage c;
  c.hit.assign(oracle.modes.size(), false);
  for (const auto& s : samples.samples) {
    const auto starts = s.starts();
    for (std::size_t m = 0; m < oracle.modes.size(); ++m) {
      if (c.hit[m]) continue;
      const auto ref = oracle.realize(static_cast<int>(m), starts, s.horizon(), s.frame_id());
      if (track_mse(ref, s) < eps) c.hit[m] = true;
    }
  }
  c.fraction = static_cast<double>(std::count(c.hit.begin(), c.hit.end(), true)) / c.hit.size();
  return c;
}

double oracle_mean_mse(const synth::ModeOracle& oracle, const TrackSet& gt) {
  double r = 0.0;
  for (std::size_t m = 0; m < oracle.modes.size(); ++m)
    r += oracle.modes[m].probability *
         track_mse(gt, oracle.realize(static_cast<int>(m), gt.starts(), gt.horizon(), gt.frame_id()));
  return r;
}

double min_mode_gap(const synth::ModeOracle& oracle, const std::vector<Point2>& starts, int T) {
  if (oracle.modes.size() < 2) throw ArgumentError("min_mode_gap: oracle has fewer than 2 modes");
  std::vector<TrackSet> real;
  for (std::size_t m = 0; m < oracle.modes.size(); ++m) real.push_back(oracle.realize(static_cast<int>(m), starts, T, "gap"));
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < real.size(); ++a)
    for (std::size_t b = a + 1; b < real.size(); ++b) gap = std::min(gap, track_mse(real[a], real[b]));
  return gap;
}

// ---------------------------------------------------------------------------
// Report

std::string MetricReport::to_json() const {
  using nlohmann::json;
  json j{{"min_mse", min_mse}, {"mean_mse", mean_mse}, {"n_items", n_items}, {"n_samples", n_samples}};
  j["epe"] = epe ? json(*epe) : json(nullptr);
  j["knn_acc"] = knn_acc ? json(*knn_acc) : json(nullptr);
  if (pck)
    j["pck"] = {{"thresholds", pck->thresholds}, {"fractions", pck->fractions}, {"delta_avg", pck->delta_avg}};
  else
    j["pck"] = nullptr;
  j["config"] = json::parse(config_json);
  return j.dump(2);
}

MetricReport MetricReport::from_json(const std::string& text) {
  using nlohmann::json;
  MetricReport r;
  try {
    const auto j = json::parse(text);
    r.min_mse = j.at("min_mse").get<double>();
    r.mean_mse = j.at("mean_mse").get<double>();
    r.n_items = j.at("n_items").get<int>();
    r.n_samples = j.at("n_samples").get<int>();
    if (!j.at("epe").is_null()) r.epe = j["epe"].get<double>();
    if (!j.at("knn_acc").is_null()) r.knn_acc = j["knn_acc"].get<double>();
    if (!j.at("pck").is_null()) {
      PckResult p;
      p.thresholds = j["pck"].at("thresholds").get<std::vector<double>>();
      p.fractions = j["pck"].at("fractions").get<std::vector<double>>();
      p.delta_avg = j["pck"].at("delta_avg").get<double>();
      r.pck = p;
    }
    r.config_json = j.value("config", json::object()).dump();
  } catch (const json::exception& e) {
    throw ParseError(std::string("metric report: ") + e.what());
  }
  return r;
}

std::string MetricReport::csv_header() { return "run,n_items,n_samples,min_mse,mean_mse,epe,delta_avg,knn_acc"; }

std::string MetricReport::csv_row(const std::string& run) const {
  std::ostringstream os;
  os.precision(10);
  os << run << ',' << n_items << ',' << n_samples << ',' << min_mse << ',' << mean_mse << ',';
  if (epe) os << *epe;
  os << ',';
  if (pck) os << pck->delta_avg;
  os << ',';
  if (knn_acc) os << *knn_acc;
  return os.str();
}

}  // namespace zipmo::eval
