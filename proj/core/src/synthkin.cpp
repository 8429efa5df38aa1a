#include "zipmo/synthkin.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "zipmo/errors.hpp"
#include "zipmo/random.hpp"

namespace zipmo::synth {

using track::Point2;
using nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kFloor = 0.85;  // bounce floor and side walls
constexpr double kArmWidth = 0.08;

double get(const Params& p, const char* key) {
  auto it = p.find(key);
  if (it == p.end()) throw ConfigError(std::string("scenario parameter missing: ") + key);
  return it->second;
}

Point2 rotate_about(Point2 p, Point2 c, double angle) {
  const double dx = p.x - c.x, dy = p.y - c.y;
  const double cs = std::cos(angle), sn = std::sin(angle);
  return {c.x + cs * dx - sn * dy, c.y + sn * dx + cs * dy};
}

// Mirror-folds x into [lo, hi] (elastic wall bounces).
double fold(double x, double lo, double hi) {
  const double span = hi - lo;
  double u = std::fmod(x - lo, 2.0 * span);
  if (u < 0) u += 2.0 * span;
  return lo + (u <= span ? u : 2.0 * span - u);
}

struct Bounce {
  double cx, cy, r, tau, g, v;
  Point2 center(int t, double sign) const {
    const double lo = -kFloor + r, hi = kFloor - r;
    const double x = fold(cx + sign * v * t, lo, hi);
    // Elastic floor bounce; t = 0 is the apex of the first arc.
    double u = std::fmod(t + tau, 2.0 * tau);
    if (u < 0) u += 2.0 * tau;
    u -= tau;
    const double y = (kFloor - r) - 0.5 * g * (tau * tau - u * u);
    return {x, y};
  }
};

Bounce bounce_of(const Params& p) {
  return {get(p, "cx"), get(p, "cy"), get(p, "radius"), get(p, "tau"), get(p, "gravity"),
          get(p, "speed")};
}

int choose_mode(const ModeOracle& o, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t m = 0; m < o.modes.size(); ++m) {
    acc += o.modes[m].probability;
    if (u < acc) return static_cast<int>(m);
  }
  return static_cast<int>(o.modes.size()) - 1;
}

}  // namespace

std::string_view family_name(Family f) {
  switch (f) {
    case Family::LinearGoalChoice: return "linear-goal-choice";
    case Family::RotationCwCcw: return "rotation-cw-ccw";
    case Family::PendulumArm: return "pendulum-arm";
    case Family::Bounce: return "bounce";
    case Family::StaticBackground: return "static-background";
  }
  return "unknown";
}

Family parse_family(std::string_view name) {
  for (Family f : kAllFamilies)
    if (family_name(f) == name) return f;
  throw ConfigError("unknown scenario family: " + std::string(name));
}

int family_label(Family f) { return static_cast<int>(f); }

track::TrackSet ModeOracle::realize(int mode, const std::vector<Point2>& starts, int T,
                                    const std::string& frame_id) const {
  if (mode < 0 || mode >= static_cast<int>(modes.size())) throw RangeError("mode out of range");
  std::vector<track::Track> tracks;
  tracks.reserve(starts.size());
  const auto& fn = modes[mode].trajectory;
  for (const auto& s : starts) {
    track::Track tr;
    tr.start = s;
    tr.positions.reserve(T);
    for (int t = 0; t < T; ++t) tr.positions.push_back(fn(s, t));
    tracks.push_back(std::move(tr));
  }
  return track::TrackSet(std::move(tracks), frame_id);
}

Params sample_params(Family family, std::uint64_t seed, int T, const SynthOptions& opts) {
  if (T < 2) throw RangeError("horizon must be >= 2");
  Rng rng(seed, 1);
  Params p;
  p["horizon"] = T;
  switch (family) {
    case Family::RotationCwCcw:
      p["cx"] = rng.uniform(-0.4, 0.4);
      p["cy"] = rng.uniform(-0.4, 0.4);
      p["radius"] = rng.uniform(0.2, 0.35);
      p["omega"] = opts.omega;
      p["spoke"] = rng.uniform(0.0, 2.0 * kPi);
      break;
    case Family::LinearGoalChoice: {
      const int k = static_cast<int>(opts.goal_weights.size());
      if (k < 1) throw ConfigError("goal-choice family needs at least one goal weight");
      const double total = std::accumulate(opts.goal_weights.begin(), opts.goal_weights.end(), 0.0);
      if (!(total > 0.0)) throw ConfigError("goal weights must sum to a positive value");
      p["cx"] = rng.uniform(-0.3, 0.3);
      p["cy"] = rng.uniform(-0.3, 0.3);
      p["half"] = rng.uniform(0.08, 0.12);
      const double phi = rng.uniform(0.0, 2.0 * kPi);
      const double dist = rng.uniform(0.45, 0.55);
      p["n_goals"] = k;
      for (int i = 0; i < k; ++i) {
        const double a = phi + 2.0 * kPi * i / k;
        p["gx" + std::to_string(i)] = p["cx"] + dist * std::cos(a);
        p["gy" + std::to_string(i)] = p["cy"] + dist * std::sin(a);
        if (opts.goal_weights[i] < 0) throw ConfigError("goal weights must be non-negative");
        p["w" + std::to_string(i)] = opts.goal_weights[i] / total;
      }
      break;
    }
    case Family::PendulumArm:
      p["px"] = rng.uniform(-0.3, 0.3);
      p["py"] = rng.uniform(-0.3, 0.3);
      p["length"] = rng.uniform(0.3, 0.45);
      p["theta0"] = rng.uniform(0.0, 2.0 * kPi);
      p["amplitude"] = rng.uniform(0.5, 0.9);
      break;
    case Family::Bounce: {
      p["radius"] = rng.uniform(0.08, 0.12);
      p["cx"] = rng.uniform(-0.5, 0.5);
      p["cy"] = rng.uniform(-0.5, 0.0);
      const double tau = rng.uniform(T / 5.0, T / 3.0);
      p["tau"] = tau;
      p["gravity"] = 2.0 * (kFloor - p["radius"] - p["cy"]) / (tau * tau);
      p["speed"] = rng.uniform(0.008, 0.015);
      break;
    }
    case Family::StaticBackground:
      for (int i = 0; i < 3; ++i) {
        p["bx" + std::to_string(i)] = rng.uniform(-0.7, 0.7);
        p["by" + std::to_string(i)] = rng.uniform(-0.7, 0.7);
        p["bs" + std::to_string(i)] = rng.uniform(0.1, 0.2);
      }
      break;
  }
  return p;
}

bool on_foreground(Family family, const Params& p, Point2 q) {
  switch (family) {
    case Family::RotationCwCcw: {
      const double dx = q.x - get(p, "cx"), dy = q.y - get(p, "cy");
      return dx * dx + dy * dy <= get(p, "radius") * get(p, "radius");
    }
    case Family::LinearGoalChoice:
      return std::abs(q.x - get(p, "cx")) <= get(p, "half") &&
             std::abs(q.y - get(p, "cy")) <= get(p, "half");
    case Family::PendulumArm: {
      const double th = get(p, "theta0");
      const double dx = q.x - get(p, "px"), dy = q.y - get(p, "py");
      const double along = dx * std::cos(th) + dy * std::sin(th);
      const double across = -dx * std::sin(th) + dy * std::cos(th);
      return along >= 0.0 && along <= get(p, "length") && std::abs(across) <= kArmWidth / 2;
    }
    case Family::Bounce: {
      const double dx = q.x - get(p, "cx"), dy = q.y - get(p, "cy");
      return dx * dx + dy * dy <= get(p, "radius") * get(p, "radius");
    }
    case Family::StaticBackground:
      return false;
  }
  return false;
}

ModeOracle oracle(Family family, const Params& p) {
  ModeOracle o;
  auto fg = [family, p](Point2 s) { return on_foreground(family, p, s); };
  switch (family) {
    case Family::RotationCwCcw: {
      const Point2 c{get(p, "cx"), get(p, "cy")};
      const double w = get(p, "omega");
      for (double sign : {1.0, -1.0}) {
        o.modes.push_back({0.5, [=](Point2 s, int t) {
                             return fg(s) ? rotate_about(s, c, sign * w * t) : s;
                           }});
      }
      break;
    }
    case Family::LinearGoalChoice: {
      const int k = static_cast<int>(get(p, "n_goals"));
      const double T = get(p, "horizon");
      const Point2 c{get(p, "cx"), get(p, "cy")};
      for (int i = 0; i < k; ++i) {
        const Point2 g{get(p, ("gx" + std::to_string(i)).c_str()),
                       get(p, ("gy" + std::to_string(i)).c_str())};
        o.modes.push_back({get(p, ("w" + std::to_string(i)).c_str()), [=](Point2 s, int t) {
                             if (!fg(s)) return s;
                             const double a = t / (T - 1.0);
                             return Point2{s.x + (g.x - c.x) * a, s.y + (g.y - c.y) * a};
                           }});
      }
      break;
    }
    case Family::PendulumArm: {
      const Point2 pivot{get(p, "px"), get(p, "py")};
      const double amp = get(p, "amplitude");
      const double period = get(p, "horizon") - 1.0;
      for (double sign : {1.0, -1.0}) {
        o.modes.push_back({0.5, [=](Point2 s, int t) {
                             if (!fg(s)) return s;
                             const double a = sign * amp * std::sin(2.0 * kPi * t / period);
                             return rotate_about(s, pivot, a);
                           }});
      }
      break;
    }
    case Family::Bounce: {
      const Bounce b = bounce_of(p);
      for (double sign : {1.0, -1.0}) {
        o.modes.push_back({0.5, [=](Point2 s, int t) {
                             if (!fg(s)) return s;
                             const Point2 c = b.center(t, sign);
                             return Point2{s.x + c.x - b.cx, s.y + c.y - b.cy};
                           }});
      }
      break;
    }
    case Family::StaticBackground:
      o.modes.push_back({1.0, [](Point2 s, int) { return s; }});
      break;
  }
  // Frame 0 is the anchor itself; rotating by a zero angle about a center
  // would otherwise round away from it.
  for (auto& m : o.modes) {
    m.trajectory = [fn = std::move(m.trajectory)](Point2 s, int t) { return t == 0 ? s : fn(s, t); };
  }
  return o;
}

Scenario realize(Family family, const Params& params, int mode_id, std::uint64_t seed,
                 int n_tracks, const SynthOptions& opts) {
  if (n_tracks < 1) throw RangeError("n_tracks must be >= 1");
  if (opts.resolution < 32) throw RangeError("raster resolution must be >= 32");
  const int T = static_cast<int>(get(params, "horizon"));
  const ModeOracle o = oracle(family, params);
  if (mode_id < 0 || mode_id >= static_cast<int>(o.modes.size()))
    throw RangeError("mode id out of range for family");

  const bool moving = family != Family::StaticBackground;
  const double bg_share = std::max(0.2, opts.background_fraction);
  const int n_bg = moving ? std::min(n_tracks, static_cast<int>(std::ceil(bg_share * n_tracks)))
                          : n_tracks;
  const int n_fg = n_tracks - n_bg;

  Rng rng(seed, 3);
  std::vector<Point2> starts;
  starts.reserve(n_tracks);
  // Foreground points by rejection inside the object's bounding region.
  while (static_cast<int>(starts.size()) < n_fg) {
    Point2 q{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    if (on_foreground(family, params, q)) starts.push_back(q);
  }
  while (static_cast<int>(starts.size()) < n_tracks) {
    Point2 q{rng.uniform(-0.95, 0.95), rng.uniform(-0.95, 0.95)};
    if (!on_foreground(family, params, q)) starts.push_back(q);
  }

  Scenario s;
  s.family = family;
  s.params = params;
  s.mode_id = mode_id;
  s.label = family_label(family);
  s.tracks = o.realize(mode_id, starts, T,
                       std::string(family_name(family)) + "-" + std::to_string(seed));
  track::validate_ground_truth(s.tracks);
  s.raster = rasterize(family, params, opts.resolution);
  return s;
}

Scenario generate(Family family, std::uint64_t seed, int n_tracks, int T,
                  const SynthOptions& opts) {
  if (n_tracks < 1) throw RangeError("n_tracks must be >= 1");
  if (T < 2) throw RangeError("horizon must be >= 2");
  Params params = sample_params(family, seed, T, opts);
  Rng mode_rng(seed, 2);
  const int mode = choose_mode(oracle(family, params), mode_rng);
  return realize(family, params, mode, seed, n_tracks, opts);
}

GrayImage rasterize(const Scenario& scenario, int resolution) {
  return rasterize(scenario.family, scenario.params, resolution);
}

GrayImage rasterize(Family family, const Params& p, int resolution) {
  if (resolution < 32) throw RangeError("raster resolution must be >= 32");
  GrayImage img(resolution, resolution, 0.1);
  for (int py = 0; py < resolution; ++py) {
    for (int px = 0; px < resolution; ++px) {
      const Point2 q{2.0 * (px + 0.5) / resolution - 1.0, 2.0 * (py + 0.5) / resolution - 1.0};
      double v = 0.1;
      switch (family) {
        case Family::RotationCwCcw: {
          if (on_foreground(family, p, q)) {
            v = 0.6;
            // A spoke makes the disk's orientation visible.
            const double a = get(p, "spoke");
            const double dx = q.x - get(p, "cx"), dy = q.y - get(p, "cy");
            const double along = dx * std::cos(a) + dy * std::sin(a);
            const double across = -dx * std::sin(a) + dy * std::cos(a);
            if (along >= 0.0 && std::abs(across) <= 0.03) v = 1.0;
          }
          break;
        }
        case Family::LinearGoalChoice: {
          const int k = static_cast<int>(get(p, "n_goals"));
          for (int i = 0; i < k; ++i) {
            const double dx = q.x - get(p, ("gx" + std::to_string(i)).c_str());
            const double dy = q.y - get(p, ("gy" + std::to_string(i)).c_str());
            const double d = std::sqrt(dx * dx + dy * dy);
            if (d >= 0.05 && d <= 0.09) v = 0.5;
          }
          if (on_foreground(family, p, q)) v = 0.9;
          break;
        }
        case Family::PendulumArm: {
          if (on_foreground(family, p, q)) v = 0.8;
          const double dx = q.x - get(p, "px"), dy = q.y - get(p, "py");
          if (dx * dx + dy * dy <= 0.04 * 0.04) v = 1.0;
          break;
        }
        case Family::Bounce: {
          if (q.y >= kFloor) v = 0.5;
          if (std::abs(q.x) >= kFloor) v = 0.3;
          if (on_foreground(family, p, q)) v = 0.9;
          break;
        }
        case Family::StaticBackground: {
          for (int i = 0; i < 3; ++i) {
            const double dx = q.x - get(p, ("bx" + std::to_string(i)).c_str());
            const double dy = q.y - get(p, ("by" + std::to_string(i)).c_str());
            const double s = get(p, ("bs" + std::to_string(i)).c_str());
            v += 0.6 * std::exp(-(dx * dx + dy * dy) / (2 * s * s));
          }
          v = std::min(v, 1.0);
          break;
        }
      }
      img.at(px, py) = v;
    }
  }
  return img;
}

void save_scenario(const Scenario& s, const std::filesystem::path& dir, const std::string& stem) {
  std::filesystem::create_directories(dir);
  track::save_tracks(s.tracks, track::PixelSpace(s.raster.width, s.raster.height),
                     dir / (stem + ".tracks.json"));
  json meta;
  meta["family"] = std::string(family_name(s.family));
  meta["params"] = s.params;
  meta["mode_id"] = s.mode_id;
  meta["label"] = s.label;
  std::ofstream(dir / (stem + ".meta.json")) << meta.dump(2);
  save_pgm(s.raster, dir / (stem + ".pgm"));
}

Scenario load_scenario(const std::filesystem::path& dir, const std::string& stem) {
  const auto meta_path = dir / (stem + ".meta.json");
  if (!std::filesystem::exists(meta_path))
    throw MissingFileError("scenario sidecar not found: " + meta_path.string());
  std::ifstream in(meta_path);
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(meta_path.string() + ": " + e.what());
  }
  Scenario s;
  try {
    s.family = parse_family(meta.at("family").get<std::string>());
    s.params = meta.at("params").get<Params>();
    s.mode_id = meta.at("mode_id").get<int>();
    s.label = meta.at("label").get<int>();
  } catch (const json::exception& e) {
    throw ParseError(meta_path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(meta_path.string() + ": " + e.what());
  }
  s.tracks = track::load_tracks(dir / (stem + ".tracks.json")).tracks;
  s.raster = load_pgm(dir / (stem + ".pgm"));
  return s;
}

}  // namespace zipmo::synth
