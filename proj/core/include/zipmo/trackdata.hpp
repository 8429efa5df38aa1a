#pragma once

// Point trajectories in normalized image coordinates.
//
// Coordinates live in [-1, 1] with the pixel-center convention
//   x = 2 * (px + 0.5) / width - 1
// so that normalize/denormalize are exact inverses on the continuous domain.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace zipmo::track {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

struct PixelSpace {
  int width = 128;
  int height = 128;

  PixelSpace() = default;
  PixelSpace(int w, int h);
};

/// One tracked point. `visible` is either empty (all visible) or has one
/// entry per position.
struct Track {
  Point2 start;
  std::vector<Point2> positions;
  std::vector<bool> visible;

  int length() const { return static_cast<int>(positions.size()); }
  bool is_visible(int t) const { return visible.empty() || visible[t]; }

  /// Builds a ground-truth track; enforces positions[0] == start, every
  /// coordinate finite and inside [-1, 1], T >= 2.
  static Track ground_truth(std::vector<Point2> positions,
                            std::vector<bool> visible = {});
};

/// A set of tracks sharing one horizon T, anchored to one start frame.
///
/// Construction checks the structural invariants (N >= 1, equal T,
/// non-empty frame id, finite coordinates). Model predictions are stored in
/// the same type; ground-truth data additionally passes
/// validate_ground_truth().
class TrackSet {
 public:
  TrackSet() = default;
  TrackSet(std::vector<Track> tracks, std::string frame_id,
           std::optional<double> fps_hint = std::nullopt);

  /// An explicitly empty set; produced by filters that reject everything.
  static TrackSet empty(std::string frame_id);

  const std::vector<Track>& tracks() const { return tracks_; }
  const Track& operator[](std::size_t i) const { return tracks_[i]; }
  const std::string& frame_id() const { return frame_id_; }
  std::optional<double> fps_hint() const { return fps_hint_; }

  int size() const { return static_cast<int>(tracks_.size()); }
  bool is_empty() const { return tracks_.empty(); }
  int horizon() const { return tracks_.empty() ? 0 : tracks_.front().length(); }

  std::vector<Point2> starts() const;
  TrackSet subset(std::span<const int> indices) const;

 private:
  std::vector<Track> tracks_;
  std::string frame_id_;
  std::optional<double> fps_hint_;
};

/// Throws RangeError if any track breaks the ground-truth invariants.
void validate_ground_truth(const TrackSet& ts);

Point2 normalize(Point2 px, const PixelSpace& space);
std::vector<Point2> normalize(std::span<const Point2> px, const PixelSpace& space);
Point2 denormalize(Point2 p, const PixelSpace& space);
std::vector<Point2> denormalize(std::span<const Point2> p, const PixelSpace& space);

/// Sum over axes of the temporal variance of a track (population variance).
double motion_variance(const Track& track);

/// Keeps tracks whose motion_variance exceeds `var_threshold`, in order.
/// Returns TrackSet::empty() when nothing survives.
TrackSet filter_static(const TrackSet& ts, double var_threshold);

/// Sliding windows of `window_len` frames every `stride` frames. Each window
/// re-anchors its tracks at the first frame of the window.
std::vector<TrackSet> window(const TrackSet& ts, int window_len, int stride);

/// Keeps frames 0, k, 2k, ...; the start anchor is unchanged.
TrackSet subsample_time(const TrackSet& ts, int keep_every);

struct TrackFile {
  TrackSet tracks;
  PixelSpace space;
};

/// Reads the JSON track-file format (version 1). Throws ParseError naming
/// the offending record, MissingFileError if the path does not exist.
TrackFile load_tracks(const std::filesystem::path& path);
TrackFile parse_tracks(const std::string& json_text);

void save_tracks(const TrackSet& ts, const PixelSpace& space,
                 const std::filesystem::path& path);
std::string dump_tracks(const TrackSet& ts, const PixelSpace& space);

}  // namespace zipmo::track
