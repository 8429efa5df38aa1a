#pragma once

// Synthetic scenes with closed-form, multi-modal motion.
//
// Every family is a small rigid object over a static background. The
// object's motion law is chosen from a discrete set of modes; the
// ModeOracle returned by oracle() evaluates each mode's trajectory for any
// start point, which makes distributional metrics exactly computable.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "zipmo/image.hpp"
#include "zipmo/trackdata.hpp"

namespace zipmo::synth {

enum class Family { LinearGoalChoice, RotationCwCcw, PendulumArm, Bounce, StaticBackground };

inline constexpr Family kAllFamilies[] = {Family::LinearGoalChoice, Family::RotationCwCcw,
                                          Family::PendulumArm, Family::Bounce,
                                          Family::StaticBackground};

std::string_view family_name(Family f);
/// Throws ConfigError for unknown names.
Family parse_family(std::string_view name);
/// Class tag; a fixed function of the family.
int family_label(Family f);

using Params = std::map<std::string, double>;

struct ModeOracle {
  struct Mode {
    double probability = 0.0;
    std::function<track::Point2(track::Point2 start, int t)> trajectory;
  };
  std::vector<Mode> modes;

  /// Tracks obtained by running mode `mode` from each start point.
  track::TrackSet realize(int mode, const std::vector<track::Point2>& starts, int T,
                          const std::string& frame_id) const;
};

struct SynthOptions {
  int resolution = 64;
  /// Share of tracks placed on the static background (at least 0.2).
  double background_fraction = 0.25;
  /// Mode probabilities for the goal-choice family; its length sets the
  /// number of goals.
  std::vector<double> goal_weights{0.5, 0.5};
  /// Angular speed of the rotation family in rad/frame.
  double omega = std::numbers::pi / 32.0;
};

struct Scenario {
  Family family = Family::StaticBackground;
  Params params;
  int mode_id = 0;
  track::TrackSet tracks;
  int label = 0;
  GrayImage raster;
};

/// Deterministic per (family, seed, n_tracks, T, options).
Scenario generate(Family family, std::uint64_t seed, int n_tracks, int T,
                  const SynthOptions& opts = {});

/// Scene geometry for a seed, without choosing a mode.
Params sample_params(Family family, std::uint64_t seed, int T, const SynthOptions& opts = {});

/// Builds a scenario for given geometry and mode; `seed` only drives which
/// points are tracked.
Scenario realize(Family family, const Params& params, int mode_id, std::uint64_t seed,
                 int n_tracks, const SynthOptions& opts = {});

ModeOracle oracle(Family family, const Params& params);

/// True when the point lies on the moving object at frame 0.
bool on_foreground(Family family, const Params& params, track::Point2 p);

/// Start frame: the object and scene markers drawn at their frame-0 pose.
GrayImage rasterize(const Scenario& scenario, int resolution);
GrayImage rasterize(Family family, const Params& params, int resolution);

/// Writes `<stem>.tracks.json`, `<stem>.meta.json` and `<stem>.pgm`.
void save_scenario(const Scenario& s, const std::filesystem::path& dir, const std::string& stem);
Scenario load_scenario(const std::filesystem::path& dir, const std::string& stem);

}  // namespace zipmo::synth
