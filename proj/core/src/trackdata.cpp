#include "zipmo/trackdata.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "zipmo/errors.hpp"

namespace zipmo::track {

using nlohmann::json;

namespace {

bool in_unit_box(Point2 p) {
  return std::isfinite(p.x) && std::isfinite(p.y) && p.x >= -1.0 && p.x <= 1.0 &&
         p.y >= -1.0 && p.y <= 1.0;
}

std::string where(int track, int t) {
  return "track " + std::to_string(track) + ", frame " + std::to_string(t);
}

}  // namespace

PixelSpace::PixelSpace(int w, int h) : width(w), height(h) {
  if (w < 1 || h < 1) throw RangeError("pixel space must be at least 1x1");
}

Track Track::ground_truth(std::vector<Point2> positions, std::vector<bool> visible) {
  if (positions.size() < 2) throw RangeError("track needs at least 2 frames");
  if (!visible.empty() && visible.size() != positions.size())
    throw RangeError("visibility mask length differs from track length");
  for (std::size_t t = 0; t < positions.size(); ++t) {
    if (!in_unit_box(positions[t]))
      throw RangeError("coordinate outside [-1,1] at frame " + std::to_string(t));
  }
  Track tr;
  tr.start = positions.front();
  tr.positions = std::move(positions);
  tr.visible = std::move(visible);
  return tr;
}

TrackSet::TrackSet(std::vector<Track> tracks, std::string frame_id,
                   std::optional<double> fps_hint)
    : tracks_(std::move(tracks)), frame_id_(std::move(frame_id)), fps_hint_(fps_hint) {
  if (tracks_.empty()) throw RangeError("track set needs at least one track");
  if (frame_id_.empty()) throw RangeError("track set needs a frame id");
  const std::size_t T = tracks_.front().positions.size();
  if (T < 2) throw RangeError("tracks need at least 2 frames");
  for (std::size_t i = 0; i < tracks_.size(); ++i) {
    const auto& tr = tracks_[i];
    if (tr.positions.size() != T)
      throw RangeError("track " + std::to_string(i) + " has a different horizon");
    if (!tr.visible.empty() && tr.visible.size() != T)
      throw RangeError("track " + std::to_string(i) + " visibility length mismatch");
    if (!std::isfinite(tr.start.x) || !std::isfinite(tr.start.y))
      throw RangeError("track " + std::to_string(i) + " has a non-finite start");
    for (std::size_t t = 0; t < T; ++t) {
      if (!std::isfinite(tr.positions[t].x) || !std::isfinite(tr.positions[t].y))
        throw RangeError("non-finite coordinate at " + where(int(i), int(t)));
    }
  }
}

TrackSet TrackSet::empty(std::string frame_id) {
  TrackSet ts;
  ts.frame_id_ = std::move(frame_id);
  return ts;
}

std::vector<Point2> TrackSet::starts() const {
  std::vector<Point2> out;
  out.reserve(tracks_.size());
  for (const auto& tr : tracks_) out.push_back(tr.start);
  return out;
}

TrackSet TrackSet::subset(std::span<const int> indices) const {
  std::vector<Track> picked;
  picked.reserve(indices.size());
  for (int i : indices) {
    if (i < 0 || i >= size()) throw RangeError("track index out of range");
    picked.push_back(tracks_[i]);
  }
  return TrackSet(std::move(picked), frame_id_, fps_hint_);
}

void validate_ground_truth(const TrackSet& ts) {
  for (int i = 0; i < ts.size(); ++i) {
    const auto& tr = ts[i];
    if (!(tr.positions.front() == tr.start))
      throw RangeError("track " + std::to_string(i) + ": positions[0] differs from start");
    for (int t = 0; t < tr.length(); ++t) {
      if (!in_unit_box(tr.positions[t]))
        throw RangeError("coordinate outside [-1,1] at " + where(i, t));
    }
  }
}

Point2 normalize(Point2 px, const PixelSpace& space) {
  // Domain is the image of denormalize, so the output stays inside [-1, 1].
  if (!(px.x >= -0.5 && px.x <= space.width - 0.5 && px.y >= -0.5 && px.y <= space.height - 0.5))
    throw RangeError("pixel (" + std::to_string(px.x) + ", " + std::to_string(px.y) +
                     ") outside " + std::to_string(space.width) + "x" +
                     std::to_string(space.height));
  return {2.0 * (px.x + 0.5) / space.width - 1.0, 2.0 * (px.y + 0.5) / space.height - 1.0};
}

std::vector<Point2> normalize(std::span<const Point2> px, const PixelSpace& space) {
  std::vector<Point2> out;
  out.reserve(px.size());
  for (auto p : px) out.push_back(normalize(p, space));
  return out;
}

Point2 denormalize(Point2 p, const PixelSpace& space) {
  if (!in_unit_box(p)) throw RangeError("normalized coordinate outside [-1,1]");
  return {(p.x + 1.0) / 2.0 * space.width - 0.5, (p.y + 1.0) / 2.0 * space.height - 0.5};
}

std::vector<Point2> denormalize(std::span<const Point2> p, const PixelSpace& space) {
  std::vector<Point2> out;
  out.reserve(p.size());
  for (auto q : p) out.push_back(denormalize(q, space));
  return out;
}

double motion_variance(const Track& track) {
  const double n = static_cast<double>(track.positions.size());
  double mx = 0.0, my = 0.0;
  for (const auto& p : track.positions) {
    mx += p.x;
    my += p.y;
  }
  mx /= n;
  my /= n;
  double vx = 0.0, vy = 0.0;
  for (const auto& p : track.positions) {
    vx += (p.x - mx) * (p.x - mx);
    vy += (p.y - my) * (p.y - my);
  }
  return vx / n + vy / n;
}

TrackSet filter_static(const TrackSet& ts, double var_threshold) {
  if (!(var_threshold >= 0.0)) throw RangeError("variance threshold must be >= 0");
  std::vector<Track> kept;
  for (const auto& tr : ts.tracks()) {
    if (motion_variance(tr) > var_threshold) kept.push_back(tr);
  }
  if (kept.empty()) return TrackSet::empty(ts.frame_id());
  return TrackSet(std::move(kept), ts.frame_id(), ts.fps_hint());
}

std::vector<TrackSet> window(const TrackSet& ts, int window_len, int stride) {
  const int T = ts.horizon();
  if (window_len < 2) throw RangeError("window length must be >= 2");
  if (window_len > T) throw RangeError("window length exceeds track horizon");
  if (stride < 1) throw RangeError("window stride must be >= 1");
  std::vector<TrackSet> out;
  for (int s = 0; s + window_len <= T; s += stride) {
    std::vector<Track> tracks;
    tracks.reserve(ts.size());
    for (const auto& tr : ts.tracks()) {
      Track w;
      w.positions.assign(tr.positions.begin() + s, tr.positions.begin() + s + window_len);
      if (!tr.visible.empty())
        w.visible.assign(tr.visible.begin() + s, tr.visible.begin() + s + window_len);
      w.start = w.positions.front();
      tracks.push_back(std::move(w));
    }
    out.emplace_back(std::move(tracks), ts.frame_id() + "@" + std::to_string(s),
                     ts.fps_hint());
  }
  return out;
}

TrackSet subsample_time(const TrackSet& ts, int keep_every) {
  if (keep_every < 1) throw RangeError("keep_every must be >= 1");
  std::vector<Track> tracks;
  tracks.reserve(ts.size());
  for (const auto& tr : ts.tracks()) {
    Track s;
    s.start = tr.start;
    for (int t = 0; t < tr.length(); t += keep_every) {
      s.positions.push_back(tr.positions[t]);
      if (!tr.visible.empty()) s.visible.push_back(tr.visible[t]);
    }
    tracks.push_back(std::move(s));
  }
  std::optional<double> fps;
  if (ts.fps_hint()) fps = *ts.fps_hint() / keep_every;
  return TrackSet(std::move(tracks), ts.frame_id(), fps);
}

// ---------------------------------------------------------------------------
// File format

TrackFile parse_tracks(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("track file is not valid JSON: ") + e.what());
  }
  auto require = [&](const char* key) -> const json& {
    if (!doc.is_object() || !doc.contains(key))
      throw ParseError(std::string("track file header: missing \"") + key + "\"");
    return doc.at(key);
  };
  const json& version = require("version");
  if (!version.is_number_integer() || version.get<int>() != 1)
    throw ParseError("track file header: unsupported version");
  const json& frame_id = require("frame_id");
  const json& width = require("width");
  const json& height = require("height");
  const json& horizon = require("T");
  const json& tracks = require("tracks");
  if (!frame_id.is_string()) throw ParseError("track file header: frame_id must be a string");
  if (!width.is_number_integer() || !height.is_number_integer() || width.get<int>() < 1 ||
      height.get<int>() < 1)
    throw ParseError("track file header: width/height must be positive integers");
  if (!horizon.is_number_integer() || horizon.get<int>() < 2)
    throw ParseError("track file header: T must be an integer >= 2");
  if (!tracks.is_array() || tracks.empty())
    throw ParseError("track file header: tracks must be a non-empty array");

  const int T = horizon.get<int>();
  std::vector<Track> out;
  out.reserve(tracks.size());
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    const std::string rec = "tracks[" + std::to_string(i) + "]";
    const json& tr = tracks[i];
    if (!tr.is_object() || !tr.contains("xy") || !tr.at("xy").is_array())
      throw ParseError(rec + ": missing \"xy\" array");
    const json& xy = tr.at("xy");
    if (static_cast<int>(xy.size()) != T)
      throw ParseError(rec + ": expected " + std::to_string(T) + " points, found " +
                       std::to_string(xy.size()));
    std::vector<Point2> pos;
    pos.reserve(T);
    for (int t = 0; t < T; ++t) {
      const json& p = xy[t];
      if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
        throw ParseError(rec + ".xy[" + std::to_string(t) + "]: expected [x, y]");
      Point2 q{p[0].get<double>(), p[1].get<double>()};
      if (!std::isfinite(q.x) || !std::isfinite(q.y))
        throw ParseError(rec + ".xy[" + std::to_string(t) + "]: non-finite coordinate");
      pos.push_back(q);
    }
    std::vector<bool> vis;
    if (tr.contains("visible")) {
      const json& v = tr.at("visible");
      if (!v.is_array() || static_cast<int>(v.size()) != T)
        throw ParseError(rec + ".visible: expected " + std::to_string(T) + " booleans");
      for (const auto& b : v) {
        if (!b.is_boolean()) throw ParseError(rec + ".visible: expected booleans");
        vis.push_back(b.get<bool>());
      }
    }
    Track track;
    track.start = pos.front();
    if (tr.contains("start")) {
      const json& st = tr.at("start");
      if (!st.is_array() || st.size() != 2 || !st[0].is_number() || !st[1].is_number())
        throw ParseError(rec + ".start: expected [x, y]");
      track.start = {st[0].get<double>(), st[1].get<double>()};
    }
    track.positions = std::move(pos);
    track.visible = std::move(vis);
    out.push_back(std::move(track));
  }
  TrackFile file;
  try {
    file.tracks = TrackSet(std::move(out), frame_id.get<std::string>());
    file.space = PixelSpace(width.get<int>(), height.get<int>());
  } catch (const RangeError& e) {
    throw ParseError(std::string("track file: ") + e.what());
  }
  return file;
}

TrackFile load_tracks(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw MissingFileError("track file not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open track file: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_tracks(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string dump_tracks(const TrackSet& ts, const PixelSpace& space) {
  json doc;
  doc["version"] = 1;
  doc["frame_id"] = ts.frame_id();
  doc["width"] = space.width;
  doc["height"] = space.height;
  doc["T"] = ts.horizon();
  json tracks = json::array();
  for (const auto& tr : ts.tracks()) {
    json rec;
    json xy = json::array();
    for (const auto& p : tr.positions) xy.push_back({p.x, p.y});
    rec["xy"] = std::move(xy);
    // Decoded predictions may not pass through their query point.
    if (!(tr.start == tr.positions.front())) rec["start"] = {tr.start.x, tr.start.y};
    if (!tr.visible.empty()) {
      json v = json::array();
      for (bool b : tr.visible) v.push_back(b);
      rec["visible"] = std::move(v);
    }
    tracks.push_back(std::move(rec));
  }
  doc["tracks"] = std::move(tracks);
  return doc.dump();
}

void save_tracks(const TrackSet& ts, const PixelSpace& space,
                 const std::filesystem::path& path) {
  if (ts.is_empty()) throw ArgumentError("refusing to save an empty track set");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingFileError("cannot write track file: " + path.string());
  out << dump_tracks(ts, space);
}

}  // namespace zipmo::track
