#include "zipmo/motionvae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json_util.hpp"
#include "zipmo/errors.hpp"
#include "zipmo/hash.hpp"
#include "zipmo/random.hpp"

namespace zipmo::vae {

using detail::json;
using nn::Graph;
using nn::Matrix;
using nn::ParamStore;
using nn::RopePositions;
using nn::RopeTable;
using nn::Var;
using track::Point2;
using track::TrackSet;

// ---------------------------------------------------------------------------
// Configuration

void VaeConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& what) { throw ConfigError(field + ": " + what); };
  if (T < 2) fail("T", "must be >= 2");
  static constexpr int kCompressions[] = {1, 2, 4, 8, 16, 32, 64};
  if (std::find(std::begin(kCompressions), std::end(kCompressions), t_c) == std::end(kCompressions))
    fail("t_c", "must be a power of two up to 64");
  if (T % t_c != 0) fail("t_c", "must divide T");
  if (H < 1 || W < 1 || D < 1) fail("H/W/D", "latent grid dimensions must be >= 1");
  if (!(beta >= 0.0)) fail("beta", "must be >= 0");
  if (!(mae_fraction > 0.0 && mae_fraction < 1.0)) fail("mae_fraction", "must lie in (0, 1)");
  try {
    nn.validate();
  } catch (const ConfigError& e) {
    fail("nn", e.what());
  }
  if (fourier_freqs < 1) fail("fourier_freqs", "must be >= 1");
  if (!(fourier_sigma > 0.0)) fail("fourier_sigma", "must be positive");
  if (frame.resolution < 32) fail("frame.resolution", "must be >= 32");
  if (frame.patch < 1 || frame.resolution % frame.patch != 0) fail("frame.patch", "must divide frame.resolution");
  if (frame.channels < 1) fail("frame.channels", "must be >= 1");
  if (decoder_context_blocks < 0) fail("decoder_context_blocks", "must be >= 0");
  if (decoder_blocks < 1) fail("decoder_blocks", "must be >= 1");
  if (!(rope_base > 1.0)) fail("rope_base", "must exceed 1");
  if (!(rope_spatial_scale > 0.0)) fail("rope_spatial_scale", "must be positive");
  if (max_track_tokens < T) fail("max_track_tokens", "must allow at least one track");
}

VaeConfig desk_config() { return VaeConfig{}; }

VaeConfig full_config() {
  VaeConfig c;
  c.H = 16;
  c.W = 16;
  c.D = 16;
  c.nn = {768, 12, 12, 3, 1e-6};
  c.frame = {224, 14, 64};
  c.max_track_tokens = 65536;
  return c;
}

std::string to_json(const VaeConfig& c) {
  json j = {
      {"T", c.T},
      {"t_c", c.t_c},
      {"H", c.H},
      {"W", c.W},
      {"D", c.D},
      {"beta", c.beta},
      {"mae_fraction", c.mae_fraction},
      {"nn",
       {{"d_model", c.nn.d_model},
        {"heads", c.nn.heads},
        {"depth", c.nn.depth},
        {"ffn_expand", c.nn.ffn_expand},
        {"norm_eps", c.nn.norm_eps}}},
      {"fourier_freqs", c.fourier_freqs},
      {"fourier_sigma", c.fourier_sigma},
      {"fourier_seed", c.fourier_seed},
      {"frame", {{"resolution", c.frame.resolution}, {"patch", c.frame.patch}, {"channels", c.frame.channels}}},
      {"decoder_context_blocks", c.decoder_context_blocks},
      {"decoder_blocks", c.decoder_blocks},
      {"rope_base", c.rope_base},
      {"rope_spatial_scale", c.rope_spatial_scale},
      {"max_track_tokens", c.max_track_tokens},
  };
  return j.dump();
}

VaeConfig vae_config_from_json(const std::string& text, const std::string& prefix) {
  using namespace detail;
  const json j = parse_json(text, prefix);
  check_keys(j, prefix,
             {"T", "t_c", "H", "W", "D", "beta", "mae_fraction", "nn", "fourier_freqs", "fourier_sigma",
              "fourier_seed", "frame", "decoder_context_blocks", "decoder_blocks", "rope_base",
              "rope_spatial_scale", "max_track_tokens"});
  VaeConfig c;
  read_int(j, "T", prefix, c.T, 2, 4096);
  read_int(j, "t_c", prefix, c.t_c, 1, 64);
  read_int(j, "H", prefix, c.H, 1, 256);
  read_int(j, "W", prefix, c.W, 1, 256);
  read_int(j, "D", prefix, c.D, 1, 1024);
  read_double(j, "beta", prefix, c.beta, 0.0);
  read_double(j, "mae_fraction", prefix, c.mae_fraction, 0.0, 1.0);
  if (j.contains("nn")) {
    const auto p = join_path(prefix, "nn");
    const auto& n = j.at("nn");
    check_keys(n, p, {"d_model", "heads", "depth", "ffn_expand", "norm_eps"});
    read_int(n, "d_model", p, c.nn.d_model, 8, 4096);
    read_int(n, "heads", p, c.nn.heads, 1, 64);
    read_int(n, "depth", p, c.nn.depth, 1, 64);
    read_int(n, "ffn_expand", p, c.nn.ffn_expand, 1, 16);
    read_double(n, "norm_eps", p, c.nn.norm_eps, 0.0, 1.0);
  }
  read_int(j, "fourier_freqs", prefix, c.fourier_freqs, 1, 1024);
  read_double(j, "fourier_sigma", prefix, c.fourier_sigma, 0.0);
  read_u64(j, "fourier_seed", prefix, c.fourier_seed);
  if (j.contains("frame")) {
    const auto p = join_path(prefix, "frame");
    const auto& f = j.at("frame");
    check_keys(f, p, {"resolution", "patch", "channels"});
    read_int(f, "resolution", p, c.frame.resolution, 32, 4096);
    read_int(f, "patch", p, c.frame.patch, 1, 4096);
    read_int(f, "channels", p, c.frame.channels, 1, 4096);
  }
  read_int(j, "decoder_context_blocks", prefix, c.decoder_context_blocks, 0, 64);
  read_int(j, "decoder_blocks", prefix, c.decoder_blocks, 1, 64);
  read_double(j, "rope_base", prefix, c.rope_base, 1.0);
  read_double(j, "rope_spatial_scale", prefix, c.rope_spatial_scale, 0.0);
  read_int(j, "max_track_tokens", prefix, c.max_track_tokens, 2);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    const auto colon = msg.find(':');
    throw SchemaError(join_path(prefix, msg.substr(0, colon)), msg.substr(colon + 2));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Latents and frame features

std::vector<double> LatentGrid::flat() const { return {z.data(), z.data() + z.size()}; }

void save_frame_features(const FrameEmbedding& f, const std::filesystem::path& path) {
  json j;
  j["H"] = f.H_f;
  j["W"] = f.W_f;
  j["D"] = f.D_f;
  j["data"] = std::vector<double>(f.features.data(), f.features.data() + f.features.size());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump();
}

FrameEmbedding load_frame_features(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("feature file not found: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  auto dim = [&](const char* k) {
    if (!j.contains(k) || !j[k].is_number_integer() || j[k].get<long>() < 1)
      throw ParseError(path.string() + ": missing or invalid '" + k + "'");
    return j[k].get<int>();
  };
  FrameEmbedding f;
  f.H_f = dim("H");
  f.W_f = dim("W");
  f.D_f = dim("D");
  f.source = FrameSource::File;
  if (!j.contains("data") || !j["data"].is_array()) throw ParseError(path.string() + ": missing 'data'");
  const auto& data = j["data"];
  const std::size_t n = static_cast<std::size_t>(f.H_f) * f.W_f * f.D_f;
  if (data.size() != n)
    throw ParseError(path.string() + ": declared shape " + std::to_string(f.H_f) + "x" + std::to_string(f.W_f) +
                     "x" + std::to_string(f.D_f) + " needs " + std::to_string(n) + " values, found " +
                     std::to_string(data.size()));
  f.features.resize(f.H_f * f.W_f, f.D_f);
  for (std::size_t i = 0; i < n; ++i) {
    if (!data[i].is_number()) throw ParseError(path.string() + ": data[" + std::to_string(i) + "] is not a number");
    const double v = data[i].get<double>();
    if (!std::isfinite(v)) throw ParseError(path.string() + ": data[" + std::to_string(i) + "] is not finite");
    f.features.data()[i] = v;
  }
  return f;
}

Matrix<double> raster_patches(const GrayImage& raster, int patch) {
  if (raster.width != raster.height) throw ShapeError("frame raster must be square");
  if (raster.width < 32) throw ShapeError("frame raster must be at least 32 px");
  if (patch < 1 || raster.width % patch != 0) throw ShapeError("patch size must divide the raster side");
  const int g = raster.width / patch;
  Matrix<double> out(g * g, patch * patch);
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx)
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px)
          out(gy * g + gx, py * patch + px) = raster.at(gx * patch + px, gy * patch + py);
  return out;
}

// ---------------------------------------------------------------------------
// Model construction

MotionVae MotionVae::create(const VaeConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  MotionVae m;
  m.cfg_ = cfg;
  m.fourier_ = nn::FourierSpec::make(cfg.fourier_freqs, cfg.fourier_seed, cfg.fourier_sigma);
  auto& ps = m.params_;
  auto& L = m.layers_;
  Rng rng(seed, 0x7661);
  const int d = cfg.nn.d_model;
  const int fw = m.fourier_.width(1);
  const int p2 = cfg.frame.patch * cfg.frame.patch;

  L.patch_proj = nn::Linear::create(ps, "frame.patch", p2, cfg.frame.channels, rng);
  L.frame_in = nn::Linear::create(ps, "frame.in", cfg.frame.channels, d, rng);
  L.track_embed = nn::Mlp::create(ps, "enc.track", 3 * fw, d, d, rng);
  L.latent_query = ps.add("enc.latent", 1, d);
  nn::init_normal(ps[L.latent_query].value, rng, 1.0);
  for (int i = 0; i < cfg.nn.depth; ++i) {
    const auto s = std::to_string(i);
    L.enc_self.push_back(nn::AttentionBlock::create(ps, "enc.self" + s, cfg.nn, false, rng));
    if (i % 2 == 0) L.enc_cross.push_back(nn::AttentionBlock::create(ps, "enc.cross" + s, cfg.nn, true, rng));
    L.enc_ffn.push_back(nn::FeedForward::create(ps, "enc.ffn" + s, cfg.nn, rng));
  }
  L.enc_out_norm = nn::RmsNorm::create(ps, "enc.norm", d, cfg.nn.norm_eps);
  L.posterior_head = nn::Linear::create(ps, "enc.head", d, 2 * cfg.D, rng, true, 0.5);
  // Start with a narrow posterior (sigma ~ 0.14) so early decoding is not
  // swamped by sampling noise.
  ps[L.posterior_head.b].value.rightCols(cfg.D).setConstant(-4.0f);

  L.z_in = nn::Linear::create(ps, "dec.z", cfg.D, d, rng);
  for (int i = 0; i < cfg.decoder_context_blocks; ++i) {
    const auto s = std::to_string(i);
    L.ctx_self.push_back(nn::AttentionBlock::create(ps, "dec.ctx" + s, cfg.nn, false, rng));
    L.ctx_ffn.push_back(nn::FeedForward::create(ps, "dec.ctxffn" + s, cfg.nn, rng));
  }
  L.query_embed = nn::Mlp::create(ps, "dec.query", 3 * fw, d, d, rng);
  for (int i = 0; i < cfg.decoder_blocks; ++i) {
    const auto s = std::to_string(i);
    L.dec_cross.push_back(nn::AttentionBlock::create(ps, "dec.cross" + s, cfg.nn, true, rng));
    L.dec_ffn.push_back(nn::FeedForward::create(ps, "dec.ffn" + s, cfg.nn, rng));
  }
  L.head_norm = nn::RmsNorm::create(ps, "dec.norm", d, cfg.nn.norm_eps);
  L.head = nn::Mlp::create(ps, "dec.head", d, d, 2, rng);
  return m;
}

nn::Checkpoint MotionVae::to_checkpoint() const {
  nn::Checkpoint ck;
  json cfg = json::parse(to_json(cfg_));
  ck.config_json = json{{"kind", "motionvae"}, {"config", cfg}}.dump();
  nn::export_params(params_, ck);
  ck.put({"fourier.freq", {static_cast<std::uint64_t>(fourier_.n_freq)}, fourier_.freq});
  return ck;
}

MotionVae MotionVae::from_checkpoint(const nn::Checkpoint& ck) {
  json meta;
  try {
    meta = json::parse(ck.config_json);
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint config is not JSON: ") + e.what());
  }
  if (meta.value("kind", "") != "motionvae") throw ParseError("checkpoint does not hold a motion VAE");
  VaeConfig cfg;
  try {
    cfg = vae_config_from_json(meta.at("config").dump(), "config");
  } catch (const SchemaError& e) {
    throw ParseError(std::string("checkpoint config: ") + e.what());
  }
  MotionVae m = create(cfg, 0);
  nn::import_params(ck, m.params_);
  const auto& freq = ck.at("fourier.freq");
  if (freq.data != m.fourier_.freq) throw ParseError("checkpoint Fourier frequencies differ from its config");
  return m;
}

void MotionVae::save(const std::filesystem::path& path) const { nn::save_checkpoint(to_checkpoint(), path); }

MotionVae MotionVae::load(const std::filesystem::path& path) { return from_checkpoint(nn::load_checkpoint(path)); }

std::string MotionVae::hash() const { return hex64(fnv1a64(nn::serialize_checkpoint(to_checkpoint()))); }

// ---------------------------------------------------------------------------
// Forward passes

namespace {

const std::vector<std::string> kAxes{"x", "y", "t"};

Matrix<double> latent_positions(const VaeConfig& c) {
  Matrix<double> pos(c.latent_tokens(), 3);
  const double s = c.rope_spatial_scale;
  int r = 0;
  for (int tz = 0; tz < c.T_z(); ++tz)
    for (int h = 0; h < c.H; ++h)
      for (int w = 0; w < c.W; ++w, ++r) {
        pos(r, 0) = s * (2.0 * (w + 0.5) / c.W - 1.0);
        pos(r, 1) = s * (2.0 * (h + 0.5) / c.H - 1.0);
        // A single latent slice has no time axis: zero angle leaves that
        // quarter unrotated.
        pos(r, 2) = c.T_z() > 1 ? (tz + 0.5) * c.t_c - 0.5 : 0.0;
      }
  return pos;
}

Matrix<double> grid_positions(int hf, int wf, double scale) {
  Matrix<double> pos(hf * wf, 3);
  for (int h = 0; h < hf; ++h)
    for (int w = 0; w < wf; ++w) {
      pos(h * wf + w, 0) = scale * (2.0 * (w + 0.5) / wf - 1.0);
      pos(h * wf + w, 1) = scale * (2.0 * (h + 0.5) / hf - 1.0);
      pos(h * wf + w, 2) = 0.0;
    }
  return pos;
}

/// Per (point, t) rows: Fourier features of (a, b, t / (T-1)) and RoPE
/// positions (x0, y0, t).
void point_time_inputs(const std::vector<Point2>& anchors, const std::vector<const std::vector<Point2>*>& values,
                       int T, double scale, Matrix<double>& raw, Matrix<double>& pos) {
  const auto n = static_cast<Eigen::Index>(anchors.size());
  raw.resize(n * T, 3);
  pos.resize(n * T, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& a = anchors[static_cast<std::size_t>(i)];
    for (int t = 0; t < T; ++t) {
      const Eigen::Index r = i * T + t;
      const Point2 v = values.empty() ? a : (*values[static_cast<std::size_t>(i)])[static_cast<std::size_t>(t)];
      raw(r, 0) = v.x;
      raw(r, 1) = v.y;
      raw(r, 2) = static_cast<double>(t) / (T - 1);
      pos(r, 0) = scale * a.x;
      pos(r, 1) = scale * a.y;
      pos(r, 2) = t;
    }
  }
}

template <typename T>
struct Net {
  const MotionVae& m;
  const VaeConfig& c;
  const VaeLayers& L;
  Graph<T>& g;
  const ParamStore<T>& ps;
  nn::RopeSpec spec;

  Net(const MotionVae& model, Graph<T>& graph, const ParamStore<T>& store)
      : m(model), c(model.config()), L(model.layers()), g(graph), ps(store),
        spec(nn::RopeSpec::xyt(model.config().nn.head_dim(), model.config().rope_base)) {
    if (store.size() != model.params().size()) throw ArgumentError("parameter store does not belong to this model");
  }

  RopeTable<T> table(const Matrix<double>& coords) const {
    return nn::make_rope_table<T>(spec, RopePositions{kAxes, coords});
  }

  /// Frame tokens (n_f x d) and their positions.
  Var<T> frame_tokens(const FrameInput& frame, Matrix<double>& pos) const {
    Var<T> feats;
    int hf = 0, wf = 0;
    if (frame.features) {
      const auto& f = *frame.features;
      if (f.D_f != c.frame.channels)
        throw ShapeError("frame features have " + std::to_string(f.D_f) + " channels, model expects " +
                         std::to_string(c.frame.channels));
      if (f.features.rows() != static_cast<Eigen::Index>(f.H_f) * f.W_f || f.features.cols() != f.D_f)
        throw ShapeError("frame feature matrix does not match its declared shape");
      feats = g.constant(f.features.template cast<T>());
      hf = f.H_f;
      wf = f.W_f;
    } else if (frame.patches) {
      const auto& p = *frame.patches;
      const int grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(p.rows()))));
      if (grid * grid != p.rows() || p.cols() != c.frame.patch * c.frame.patch)
        throw ShapeError("frame patches do not match the configured patch size");
      feats = L.patch_proj(g, ps, g.constant(p.template cast<T>()));
      hf = wf = grid;
    } else {
      throw ArgumentError("no start frame given");
    }
    pos = grid_positions(hf, wf, c.rope_spatial_scale);
    return L.frame_in(g, ps, feats);
  }

  Var<T> fourier_mlp(const nn::Mlp& mlp, const Matrix<double>& raw) const {
    return mlp(g, ps, g.constant(nn::fourier_embed_rows<T>(raw, m.fourier())));
  }

  /// Returns (mean, logvar), each latent_tokens x D.
  std::pair<Var<T>, Var<T>> encode(const TrackSet& ts, std::span<const int> idx, Var<T> frame,
                                   const Matrix<double>& frame_pos) const {
    std::vector<Point2> anchors;
    std::vector<const std::vector<Point2>*> values;
    for (int i : idx) {
      anchors.push_back(ts[static_cast<std::size_t>(i)].start);
      values.push_back(&ts[static_cast<std::size_t>(i)].positions);
    }
    Matrix<double> raw, tpos;
    point_time_inputs(anchors, values, c.T, c.rope_spatial_scale, raw, tpos);
    const auto n_track = tpos.rows();
    const int n_lat = c.latent_tokens();

    auto tracks = fourier_mlp(L.track_embed, raw);
    auto lat = nn::broadcast_rows(g.param(ps[L.latent_query]), n_lat);
    auto x = nn::concat_rows<T>({tracks, lat});

    Matrix<double> jpos(n_track + n_lat, 3);
    jpos.topRows(n_track) = tpos;
    jpos.bottomRows(n_lat) = latent_positions(c);
    const auto tj = table(jpos);
    const auto tf = table(frame_pos);
    for (int i = 0; i < c.nn.depth; ++i) {
      x = L.enc_self[static_cast<std::size_t>(i)].self(g, ps, x, &tj);
      if (i % 2 == 0) x = L.enc_cross[static_cast<std::size_t>(i / 2)](g, ps, x, frame, &tj, &tf);
      x = L.enc_ffn[static_cast<std::size_t>(i)](g, ps, x);
    }
    auto h = L.enc_out_norm(g, ps, nn::slice_rows(x, static_cast<int>(n_track), n_lat));
    auto out = L.posterior_head(g, ps, h);
    return {nn::slice_cols(out, 0, c.D), nn::slice_cols(out, c.D, c.D)};
  }

  /// Decoder context [z ; frame] after its self-attention refinement, and
  /// the positions of its tokens.
  Var<T> decode_context(Var<T> z, Var<T> frame, const Matrix<double>& frame_pos, Matrix<double>& cpos) const {
    if (z.rows() != c.latent_tokens() || z.cols() != c.D)
      throw ShapeError("latent grid shape does not match the model");
    auto ctx = nn::concat_rows<T>({L.z_in(g, ps, z), frame});
    cpos.resize(ctx.rows(), 3);
    cpos.topRows(c.latent_tokens()) = latent_positions(c);
    cpos.bottomRows(frame_pos.rows()) = frame_pos;
    const auto tc = table(cpos);
    for (std::size_t i = 0; i < L.ctx_self.size(); ++i) {
      ctx = L.ctx_self[i].self(g, ps, ctx, &tc);
      ctx = L.ctx_ffn[i](g, ps, ctx);
    }
    return ctx;
  }

  /// Decoded positions, (Q*T) x 2 with rows (q, t). Queries only attend to
  /// the context, so disjoint query sets can be decoded separately.
  Var<T> decode_queries(const std::vector<Point2>& queries, Var<T> ctx, const Matrix<double>& cpos) const {
    const auto tc = table(cpos);
    Matrix<double> raw, qpos;
    point_time_inputs(queries, {}, c.T, c.rope_spatial_scale, raw, qpos);
    auto q = fourier_mlp(L.query_embed, raw);
    const auto tq = table(qpos);
    for (std::size_t i = 0; i < L.dec_cross.size(); ++i) {
      q = L.dec_cross[i](g, ps, q, ctx, &tq, &tc);
      q = L.dec_ffn[i](g, ps, q);
    }
    return L.head(g, ps, L.head_norm(g, ps, q));
  }

  Var<T> decode(const std::vector<Point2>& queries, Var<T> z, Var<T> frame, const Matrix<double>& frame_pos) const {
    Matrix<double> cpos;
    auto ctx = decode_context(z, frame, frame_pos, cpos);
    return decode_queries(queries, ctx, cpos);
  }
};

void check_tracks(const VaeConfig& c, const TrackSet& ts, std::size_t n_encoded) {
  if (ts.is_empty()) throw ArgumentError("no tracks to encode");
  if (ts.horizon() != c.T)
    throw ConfigError("track horizon " + std::to_string(ts.horizon()) + " differs from model T=" + std::to_string(c.T));
  const long tokens = static_cast<long>(n_encoded) * c.T;
  if (tokens > c.max_track_tokens)
    throw CapacityError(std::to_string(n_encoded) + " tracks x " + std::to_string(c.T) + " frames = " +
                        std::to_string(tokens) + " tokens exceeds the budget of " +
                        std::to_string(c.max_track_tokens));
}

void check_queries(std::span<const Point2> queries) {
  if (queries.empty()) throw ArgumentError("decode needs at least one query point");
  for (const auto& q : queries)
    if (!(q.x >= -1.0 && q.x <= 1.0 && q.y >= -1.0 && q.y <= 1.0))
      throw RangeError("query point outside [-1,1]^2");
}

Posterior make_posterior(const VaeConfig& c) {
  Posterior p;
  p.T_z = c.T_z();
  p.H = c.H;
  p.W = c.W;
  p.D = c.D;
  return p;
}

template <typename T>
Matrix<double> targets(const TrackSet& ts, std::span<const int> idx, Matrix<T>* weights) {
  const int T_ = ts.horizon();
  Matrix<double> out(static_cast<Eigen::Index>(idx.size()) * T_, 2);
  bool any_hidden = false;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto& tr = ts[static_cast<std::size_t>(idx[k])];
    for (int t = 0; t < T_; ++t) {
      out(static_cast<Eigen::Index>(k) * T_ + t, 0) = tr.positions[static_cast<std::size_t>(t)].x;
      out(static_cast<Eigen::Index>(k) * T_ + t, 1) = tr.positions[static_cast<std::size_t>(t)].y;
      any_hidden = any_hidden || !tr.is_visible(t);
    }
  }
  if (weights) {
    if (!any_hidden) {
      weights->resize(0, 0);
    } else {
      weights->resize(out.rows(), 2);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto& tr = ts[static_cast<std::size_t>(idx[k])];
        for (int t = 0; t < T_; ++t)
          weights->row(static_cast<Eigen::Index>(k) * T_ + t).setConstant(tr.is_visible(t) ? T(1) : T(0));
      }
    }
  }
  return out;
}

Matrix<double> noise(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix<double> e(rows, cols);
  for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = rng.normal();
  return e;
}

}  // namespace

FrameEmbedding encode_frame(const GrayImage& raster, const MotionVae& model) {
  const auto& c = model.config();
  if (raster.width != raster.height) throw ShapeError("frame raster must be square");
  if (raster.width < 32) throw ShapeError("frame raster must be at least 32 px");
  const Matrix<double> patches = raster_patches(raster, c.frame.patch);
  Graph<float> g(false);
  const auto& L = model.layers();
  auto f = L.patch_proj(g, model.params(), g.constant(patches.cast<float>()));
  FrameEmbedding out;
  out.H_f = out.W_f = raster.width / c.frame.patch;
  out.D_f = c.frame.channels;
  out.features = f.value().cast<double>();
  out.source = FrameSource::LearnedPatch;
  return out;
}

template <typename T>
Posterior encode(const MotionVae& model, const ParamStore<T>& ps, const TrackSet& ts, const FrameInput& frame) {
  const auto& c = model.config();
  check_tracks(c, ts, static_cast<std::size_t>(ts.size()));
  Graph<T> g(false);
  Net<T> net(model, g, ps);
  Matrix<double> fpos;
  auto f = net.frame_tokens(frame, fpos);
  std::vector<int> idx(static_cast<std::size_t>(ts.size()));
  std::iota(idx.begin(), idx.end(), 0);
  auto [mean, logvar] = net.encode(ts, idx, f, fpos);
  Posterior p = make_posterior(c);
  p.mean = mean.value().template cast<double>();
  p.logvar = logvar.value().template cast<double>();
  return p;
}

LatentGrid mean_latent(const Posterior& p) { return {p.T_z, p.H, p.W, p.D, p.mean}; }

LatentGrid reparameterize(const Posterior& p, std::uint64_t seed) {
  if (p.mean.rows() != p.logvar.rows() || p.mean.cols() != p.logvar.cols())
    throw ShapeError("posterior mean and logvar shapes differ");
  Rng rng(seed, 0x7270);
  LatentGrid z{p.T_z, p.H, p.W, p.D, p.mean};
  for (Eigen::Index i = 0; i < z.z.size(); ++i)
    z.z.data()[i] += std::exp(0.5 * p.logvar.data()[i]) * rng.normal();
  return z;
}

template <typename T>
TrackSet decode(const MotionVae& model, const ParamStore<T>& ps, std::span<const Point2> queries, const LatentGrid& z,
                const FrameInput& frame, const std::string& frame_id) {
  check_queries(queries);
  const auto& c = model.config();
  if (z.T_z != c.T_z() || z.H != c.H || z.W != c.W || z.D != c.D || z.z.rows() != c.latent_tokens() ||
      z.z.cols() != c.D)
    throw ShapeError("latent grid shape does not match the model");
  Graph<T> g(false);
  Net<T> net(model, g, ps);
  Matrix<double> fpos, cpos;
  auto f = net.frame_tokens(frame, fpos);
  const Matrix<T> ctx = net.decode_context(g.constant(z.z.template cast<T>()), f, fpos, cpos).value();
  const std::vector<Point2> q(queries.begin(), queries.end());
  // Decode in chunks to bound peak memory; results do not depend on the
  // chunking.
  constexpr std::size_t kChunk = 32;
  Matrix<T> out(static_cast<Eigen::Index>(q.size()) * c.T, 2);
  for (std::size_t s = 0; s < q.size(); s += kChunk) {
    const std::size_t e = std::min(q.size(), s + kChunk);
    Graph<T> gq(false);
    Net<T> nq(model, gq, ps);
    const std::vector<Point2> part(q.begin() + static_cast<long>(s), q.begin() + static_cast<long>(e));
    out.middleRows(static_cast<Eigen::Index>(s) * c.T, static_cast<Eigen::Index>(e - s) * c.T) =
        nq.decode_queries(part, gq.constant(ctx), cpos).value();
  }
  std::vector<track::Track> tracks;
  tracks.reserve(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    track::Track tr;
    tr.start = q[i];
    tr.positions.resize(static_cast<std::size_t>(c.T));
    for (int t = 0; t < c.T; ++t) {
      const auto r = static_cast<Eigen::Index>(i) * c.T + t;
      tr.positions[static_cast<std::size_t>(t)] = {std::clamp(static_cast<double>(out(r, 0)), -1.0, 1.0),
                                                   std::clamp(static_cast<double>(out(r, 1)), -1.0, 1.0)};
    }
    tracks.push_back(std::move(tr));
  }
  return TrackSet(std::move(tracks), frame_id);
}

double kl_divergence(const Posterior& p) {
  if (p.mean.rows() != p.logvar.rows() || p.mean.cols() != p.logvar.cols())
    throw ShapeError("posterior mean and logvar shapes differ");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.mean.size(); ++i) {
    const double mu = p.mean.data()[i], lv = p.logvar.data()[i];
    if (!std::isfinite(lv)) throw NumericError("posterior logvar is not finite");
    kl += mu * mu + std::exp(lv) - 1.0 - lv;
  }
  return 0.5 * kl;
}

MaeSplit mae_split(int n_tracks, double mae_fraction, std::uint64_t seed) {
  const int held = static_cast<int>(std::lround(mae_fraction * n_tracks));
  if (held < 1 || held >= n_tracks)
    throw ConfigError("mae split of " + std::to_string(n_tracks) + " tracks at fraction " +
                      std::to_string(mae_fraction) + " leaves one side empty");
  std::vector<int> order(static_cast<std::size_t>(n_tracks));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed, 0x6d61);
  for (int i = n_tracks - 1; i > 0; --i) std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.index(i + 1))]);
  MaeSplit s;
  s.held_out.assign(order.begin(), order.begin() + held);
  s.encoded.assign(order.begin() + held, order.end());
  std::sort(s.held_out.begin(), s.held_out.end());
  std::sort(s.encoded.begin(), s.encoded.end());
  return s;
}

VaeLoss vae_loss_terms(const Matrix<double>& pred_enc, const Matrix<double>& gt_enc, const Matrix<double>& pred_held,
                       const Matrix<double>& gt_held, double kl, double beta) {
  if (pred_enc.rows() != gt_enc.rows() || pred_enc.cols() != gt_enc.cols() || pred_held.rows() != gt_held.rows() ||
      pred_held.cols() != gt_held.cols())
    throw ShapeError("prediction and target shapes differ");
  if (pred_enc.size() == 0 || pred_held.size() == 0) throw ConfigError("mae split leaves one side empty");
  VaeLoss l;
  l.recon = (pred_enc - gt_enc).cwiseAbs().mean();
  l.masked = (pred_held - gt_held).cwiseAbs().mean();
  l.kl = kl;
  l.total = l.recon + l.masked + beta * kl;
  return l;
}

template <typename T>
Var<T> vae_loss_graph(Graph<T>& g, const MotionVae& model, const ParamStore<T>& ps, const VaeExample& ex,
                      std::uint64_t seed, VaeLoss* terms) {
  const auto& c = model.config();
  const auto split = mae_split(ex.tracks.size(), c.mae_fraction, seed);
  check_tracks(c, ex.tracks, split.encoded.size());
  Net<T> net(model, g, ps);

  Matrix<double> patches;
  FrameInput frame;
  if (ex.features) {
    frame.features = ex.features.get();
  } else {
    patches = raster_patches(ex.raster, c.frame.patch);
    frame.patches = &patches;
  }
  Matrix<double> fpos;
  auto f = net.frame_tokens(frame, fpos);
  auto [mean, logvar] = net.encode(ex.tracks, split.encoded, f, fpos);

  Rng rng(seed, 0x6570);
  const Matrix<T> eps = noise(mean.rows(), mean.cols(), rng).template cast<T>();
  auto z = nn::reparameterize(mean, logvar, eps);

  std::vector<Point2> queries;
  for (int i : split.encoded) queries.push_back(ex.tracks[static_cast<std::size_t>(i)].start);
  for (int i : split.held_out) queries.push_back(ex.tracks[static_cast<std::size_t>(i)].start);
  auto pred = net.decode(queries, z, f, fpos);

  Matrix<T> w_enc, w_held;
  const Matrix<T> gt_enc = targets<T>(ex.tracks, split.encoded, &w_enc).template cast<T>();
  const Matrix<T> gt_held = targets<T>(ex.tracks, split.held_out, &w_held).template cast<T>();
  const int n_enc = static_cast<int>(gt_enc.rows());
  auto recon = nn::mean_abs_error(nn::slice_rows(pred, 0, n_enc), gt_enc, w_enc);
  auto masked = nn::mean_abs_error(nn::slice_rows(pred, n_enc, static_cast<int>(gt_held.rows())), gt_held, w_held);
  auto kl = nn::kl_standard_normal(mean, logvar);
  auto total = nn::weighted_sum<T>({recon, masked, kl}, {T(1), T(1), static_cast<T>(c.beta)});
  if (terms) {
    terms->recon = recon.value()(0, 0);
    terms->masked = masked.value()(0, 0);
    terms->kl = kl.value()(0, 0);
    terms->total = total.value()(0, 0);
  }
  return total;
}

VaeLoss vae_loss(const std::vector<VaeExample>& batch, const MotionVae& model, std::uint64_t seed) {
  if (batch.empty()) throw ArgumentError("empty batch");
  VaeLoss sum;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Graph<float> g(false);
    VaeLoss t;
    vae_loss_graph(g, model, model.params(), batch[i], mix_seed(seed, i), &t);
    sum.total += t.total;
    sum.recon += t.recon;
    sum.masked += t.masked;
    sum.kl += t.kl;
  }
  const double n = static_cast<double>(batch.size());
  return {sum.total / n, sum.recon / n, sum.masked / n, sum.kl / n};
}

template Posterior encode<float>(const MotionVae&, const ParamStore<float>&, const TrackSet&, const FrameInput&);
template Posterior encode<double>(const MotionVae&, const ParamStore<double>&, const TrackSet&, const FrameInput&);
template TrackSet decode<float>(const MotionVae&, const ParamStore<float>&, std::span<const Point2>, const LatentGrid&,
                                const FrameInput&, const std::string&);
template TrackSet decode<double>(const MotionVae&, const ParamStore<double>&, std::span<const Point2>,
                                 const LatentGrid&, const FrameInput&, const std::string&);
template Var<float> vae_loss_graph<float>(Graph<float>&, const MotionVae&, const ParamStore<float>&, const VaeExample&,
                                          std::uint64_t, VaeLoss*);
template Var<double> vae_loss_graph<double>(Graph<double>&, const MotionVae&, const ParamStore<double>&,
                                            const VaeExample&, std::uint64_t, VaeLoss*);

}  // namespace zipmo::vae
