#pragma once

// Distributional motion metrics. Distances are reported on a 128-pixel grid
// (one normalized unit = 64 px) unless a PixelSpace says otherwise.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "zipmo/motiongen.hpp"
#include "zipmo/synthkin.hpp"
#include "zipmo/trackdata.hpp"

namespace zipmo::eval {

inline constexpr double kMetricScale = 64.0;

/// K generated TrackSets scored against one ground truth.
struct SampleSet {
  std::vector<track::TrackSet> samples;
  std::string model_hash;
  std::vector<std::uint64_t> seeds;
  int nfe = 0;

  int size() const { return static_cast<int>(samples.size()); }
};

/// (1 / (N T)) sum ||p_hat - p||^2 on the 128 grid. ShapeError when N or T
/// differ.
double track_mse(const track::TrackSet& gt, const track::TrackSet& pred);

struct MinMean {
  double min = 0.0;
  double mean = 0.0;
};
/// ArgumentError for K = 0.
MinMean min_mean_mse(const track::TrackSet& gt, const SampleSet& samples);

/// Mean over samples of the mean over pokes of the distance between the
/// sample's track starting nearest the poke anchor, at t_star, and the
/// target. 128-grid units.
double epe(const std::vector<gen::Poke>& pokes, const SampleSet& samples);

struct PckResult {
  std::vector<double> thresholds;
  std::vector<double> fractions;
  double delta_avg = 0.0;
};

/// Threshold ladder used for delta_avg (pixels on a 256 grid).
std::vector<double> default_pck_thresholds();

/// Fraction of (track, t) pairs whose error in `space` pixels is strictly
/// below each threshold; delta_avg is their mean. ArgumentError for an empty
/// threshold list.
PckResult pck(const track::TrackSet& gt, const track::TrackSet& pred, const std::vector<double>& thresholds,
              const track::PixelSpace& space = track::PixelSpace(256, 256));

/// Leave-one-out k-NN under cosine distance. Ties in the vote go to the
/// smaller summed distance, then to the lower label. ArgumentError unless
/// there are >= 2 classes each with >= k + 1 members.
double knn_accuracy(const std::vector<std::vector<double>>& latents, const std::vector<int>& labels, int k = 1);

struct Coverage {
  std::vector<bool> hit;
  double fraction = 0.0;
};

/// Mode m is hit iff some sample's track_mse to mode m (run from that
/// sample's own start points) is below eps.
Coverage mode_coverage(const synth::ModeOracle& oracle, const SampleSet& samples, double eps);

/// Expected track_mse to the ground truth of a sample drawn from the oracle:
/// sum_m p_m * track_mse(gt, mode m from gt's starts).
double oracle_mean_mse(const synth::ModeOracle& oracle, const track::TrackSet& gt);

/// Smallest track_mse between two different modes run from `starts`.
double min_mode_gap(const synth::ModeOracle& oracle, const std::vector<track::Point2>& starts, int T);

struct MetricReport {
  double min_mse = 0.0;
  double mean_mse = 0.0;
  std::optional<double> epe;
  std::optional<PckResult> pck;
  std::optional<double> knn_acc;
  int n_items = 0;
  int n_samples = 0;
  std::string config_json = "{}";

  std::string to_json() const;
  static MetricReport from_json(const std::string& text);
  static std::string csv_header();
  std::string csv_row(const std::string& run) const;
};

}  // namespace zipmo::eval
