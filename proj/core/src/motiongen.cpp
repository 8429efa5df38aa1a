#include "zipmo/motiongen.hpp"

#include <cmath>

#include "json_util.hpp"
#include "zipmo/errors.hpp"
#include "zipmo/hash.hpp"
#include "zipmo/random.hpp"

namespace zipmo::gen {

using detail::json;
using nn::Graph;
using nn::ParamStore;
using nn::RopePositions;
using nn::RopeTable;
using nn::Var;
using track::Point2;

// ---------------------------------------------------------------------------
// Statistics and interpolation

LatentStats LatentStats::from(const std::vector<vae::LatentGrid>& corpus) {
  if (corpus.empty()) throw ArgumentError("latent statistics need a non-empty corpus");
  const auto D = corpus.front().z.cols();
  std::vector<double> sum(static_cast<std::size_t>(D), 0.0), sq(static_cast<std::size_t>(D), 0.0);
  double n = 0.0;
  for (const auto& g : corpus) {
    if (g.z.cols() != D) throw ShapeError("latent corpus mixes channel counts");
    for (Eigen::Index r = 0; r < g.z.rows(); ++r) {
      for (Eigen::Index d = 0; d < D; ++d) {
        sum[static_cast<std::size_t>(d)] += g.z(r, d);
        sq[static_cast<std::size_t>(d)] += g.z(r, d) * g.z(r, d);
      }
      n += 1.0;
    }
  }
  LatentStats s;
  for (Eigen::Index d = 0; d < D; ++d) {
    const double m = sum[static_cast<std::size_t>(d)] / n;
    const double var = std::max(0.0, sq[static_cast<std::size_t>(d)] / n - m * m);
    s.mean.push_back(m);
    s.std.push_back(var > 1e-24 ? std::sqrt(var) : 1.0);
  }
  return s;
}

Matrix<double> LatentStats::whiten(const Matrix<double>& z) const {
  if (static_cast<std::size_t>(z.cols()) != mean.size()) throw ShapeError("latent channels differ from statistics");
  Matrix<double> out = z;
  for (Eigen::Index d = 0; d < z.cols(); ++d)
    out.col(d) = (out.col(d).array() - mean[static_cast<std::size_t>(d)]) / std[static_cast<std::size_t>(d)];
  return out;
}

Matrix<double> LatentStats::unwhiten(const Matrix<double>& z) const {
  if (static_cast<std::size_t>(z.cols()) != mean.size()) throw ShapeError("latent channels differ from statistics");
  Matrix<double> out = z;
  for (Eigen::Index d = 0; d < z.cols(); ++d)
    out.col(d) = out.col(d).array() * std[static_cast<std::size_t>(d)] + mean[static_cast<std::size_t>(d)];
  return out;
}

FlowState interpolate(const Matrix<double>& z0, const Matrix<double>& z1, double t) {
  if (z0.rows() != z1.rows() || z0.cols() != z1.cols()) throw ShapeError("interpolate: shapes differ");
  if (!(t >= 0.0 && t <= 1.0)) throw RangeError("interpolate: t must lie in [0, 1]");
  return {(1.0 - t) * z0 + t * z1, t};
}

Matrix<double> target_flow(const Matrix<double>& z0, const Matrix<double>& z1) {
  if (z0.rows() != z1.rows() || z0.cols() != z1.cols()) throw ShapeError("target_flow: shapes differ");
  return z1 - z0;
}

// ---------------------------------------------------------------------------
// Configuration

void GenConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& what) { throw ConfigError(field + ": " + what); };
  if (T < 2) fail("T", "must be >= 2");
  if (t_c < 1 || T % t_c != 0) fail("t_c", "must divide T");
  if (H < 1 || W < 1 || D < 1) fail("H/W/D", "latent grid dimensions must be >= 1");
  if (frame_channels < 1) fail("frame_channels", "must be >= 1");
  try {
    nn.validate();
  } catch (const ConfigError& e) {
    fail("nn", e.what());
  }
  if (fourier_freqs < 1) fail("fourier_freqs", "must be >= 1");
  if (!(fourier_sigma > 0.0)) fail("fourier_sigma", "must be positive");
  if (n_labels < 1) fail("n_labels", "must be >= 1");
  if (!(p_drop >= 0.0 && p_drop <= 1.0)) fail("p_drop", "must lie in [0, 1]");
  if (!(sigma_aug >= 0.0)) fail("sigma_aug", "must be >= 0");
  if (!(rope_base > 1.0)) fail("rope_base", "must exceed 1");
  if (!(rope_spatial_scale > 0.0)) fail("rope_spatial_scale", "must be positive");
}

GenConfig GenConfig::for_vae(const vae::VaeConfig& v) {
  GenConfig g;
  g.T = v.T;
  g.t_c = v.t_c;
  g.H = v.H;
  g.W = v.W;
  g.D = v.D;
  g.frame_channels = v.frame.channels;
  g.rope_base = v.rope_base;
  g.rope_spatial_scale = v.rope_spatial_scale;
  return g;
}

std::string to_json(const GenConfig& c) {
  json j = {
      {"T", c.T},
      {"t_c", c.t_c},
      {"H", c.H},
      {"W", c.W},
      {"D", c.D},
      {"frame_channels", c.frame_channels},
      {"nn",
       {{"d_model", c.nn.d_model},
        {"heads", c.nn.heads},
        {"depth", c.nn.depth},
        {"ffn_expand", c.nn.ffn_expand},
        {"norm_eps", c.nn.norm_eps}}},
      {"fourier_freqs", c.fourier_freqs},
      {"fourier_sigma", c.fourier_sigma},
      {"fourier_seed", c.fourier_seed},
      {"n_labels", c.n_labels},
      {"p_drop", c.p_drop},
      {"sigma_aug", c.sigma_aug},
      {"grid_rope", c.grid_rope},
      {"rope_base", c.rope_base},
      {"rope_spatial_scale", c.rope_spatial_scale},
  };
  return j.dump();
}

GenConfig gen_config_from_json(const std::string& text, const std::string& prefix) {
  using namespace detail;
  const json j = parse_json(text, prefix);
  check_keys(j, prefix,
             {"T", "t_c", "H", "W", "D", "frame_channels", "nn", "fourier_freqs", "fourier_sigma", "fourier_seed",
              "n_labels", "p_drop", "sigma_aug", "grid_rope", "rope_base", "rope_spatial_scale"});
  GenConfig c;
  read_int(j, "T", prefix, c.T, 2, 4096);
  read_int(j, "t_c", prefix, c.t_c, 1, 64);
  read_int(j, "H", prefix, c.H, 1, 256);
  read_int(j, "W", prefix, c.W, 1, 256);
  read_int(j, "D", prefix, c.D, 1, 1024);
  read_int(j, "frame_channels", prefix, c.frame_channels, 1, 4096);
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
  read_int(j, "n_labels", prefix, c.n_labels, 1, 1 << 20);
  read_double(j, "p_drop", prefix, c.p_drop, 0.0, 1.0);
  read_double(j, "sigma_aug", prefix, c.sigma_aug, 0.0);
  read_bool(j, "grid_rope", prefix, c.grid_rope);
  read_double(j, "rope_base", prefix, c.rope_base, 1.0);
  read_double(j, "rope_spatial_scale", prefix, c.rope_spatial_scale, 0.0);
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
// Model

MotionGenerator MotionGenerator::create(const GenConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  MotionGenerator m;
  m.cfg_ = cfg;
  m.fourier_ = nn::FourierSpec::make(cfg.fourier_freqs, cfg.fourier_seed, cfg.fourier_sigma);
  auto& ps = m.params_;
  auto& L = m.layers_;
  Rng rng(seed, 0x6766);
  const int d = cfg.nn.d_model;
  const int fw = m.fourier_.width(1);
  L.z_in = nn::Linear::create(ps, "gen.z", cfg.D, d, rng);
  L.t_embed = nn::Mlp::create(ps, "gen.time", fw, d, d, rng);
  L.frame_in = nn::Linear::create(ps, "gen.frame", cfg.frame_channels, d, rng);
  L.poke_embed = nn::Mlp::create(ps, "gen.poke", 3 * fw, d, d, rng);
  L.label_table = ps.add("gen.labels", cfg.n_labels, d);
  nn::init_normal(ps[L.label_table].value, rng, 1.0);
  for (int i = 0; i < cfg.nn.depth; ++i) {
    const auto s = std::to_string(i);
    L.self_blocks.push_back(nn::AttentionBlock::create(ps, "gen.self" + s, cfg.nn, false, rng));
    L.cross_blocks.push_back(nn::AttentionBlock::create(ps, "gen.cross" + s, cfg.nn, true, rng));
    L.ffn.push_back(nn::FeedForward::create(ps, "gen.ffn" + s, cfg.nn, rng));
  }
  L.out_norm = nn::RmsNorm::create(ps, "gen.norm", d, cfg.nn.norm_eps);
  L.out = nn::Linear::create(ps, "gen.out", d, cfg.D, rng, true, 0.1);
  m.stats_.mean.assign(static_cast<std::size_t>(cfg.D), 0.0);
  m.stats_.std.assign(static_cast<std::size_t>(cfg.D), 1.0);
  return m;
}

void MotionGenerator::set_stats(LatentStats s) {
  if (s.mean.size() != static_cast<std::size_t>(cfg_.D) || s.std.size() != s.mean.size())
    throw ShapeError("latent statistics do not match the channel count");
  for (double v : s.std)
    if (!(v > 0.0)) throw RangeError("latent statistics need std > 0 per channel");
  stats_ = std::move(s);
}

void MotionGenerator::bind_vae(std::string hash, std::string path) {
  vae_hash_ = std::move(hash);
  vae_path_ = std::move(path);
}

void MotionGenerator::check_vae(const vae::MotionVae& vae) const {
  const auto h = vae.hash();
  if (h != vae_hash_)
    throw ConfigError("generator was trained against VAE " + (vae_hash_.empty() ? "<none>" : vae_hash_) +
                      " but the supplied VAE has hash " + h);
}

nn::Checkpoint MotionGenerator::to_checkpoint() const {
  nn::Checkpoint ck;
  ck.config_json = json{{"kind", "motiongen"},
                        {"config", json::parse(to_json(cfg_))},
                        {"vae_hash", vae_hash_},
                        {"vae_path", vae_path_}}
                       .dump();
  nn::export_params(params_, ck);
  const auto D = static_cast<std::uint64_t>(cfg_.D);
  ck.put({"stats.mean", {D}, stats_.mean});
  ck.put({"stats.std", {D}, stats_.std});
  ck.put({"fourier.freq", {static_cast<std::uint64_t>(fourier_.n_freq)}, fourier_.freq});
  return ck;
}

MotionGenerator MotionGenerator::from_checkpoint(const nn::Checkpoint& ck) {
  json meta;
  try {
    meta = json::parse(ck.config_json);
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint config is not JSON: ") + e.what());
  }
  if (meta.value("kind", "") != "motiongen") throw ParseError("checkpoint does not hold a motion generator");
  GenConfig cfg;
  try {
    cfg = gen_config_from_json(meta.at("config").dump(), "config");
  } catch (const SchemaError& e) {
    throw ParseError(std::string("checkpoint config: ") + e.what());
  }
  MotionGenerator m = create(cfg, 0);
  nn::import_params(ck, m.params_);
  if (ck.at("fourier.freq").data != m.fourier_.freq)
    throw ParseError("checkpoint Fourier frequencies differ from its config");
  m.set_stats({ck.at("stats.mean").data, ck.at("stats.std").data});
  m.vae_hash_ = meta.value("vae_hash", "");
  m.vae_path_ = meta.value("vae_path", "");
  return m;
}

void MotionGenerator::save(const std::filesystem::path& path) const { nn::save_checkpoint(to_checkpoint(), path); }

MotionGenerator MotionGenerator::load(const std::filesystem::path& path) {
  return from_checkpoint(nn::load_checkpoint(path));
}

std::string MotionGenerator::hash() const { return hex64(fnv1a64(nn::serialize_checkpoint(to_checkpoint()))); }

// ---------------------------------------------------------------------------
// Vector field

namespace {

const std::vector<std::string> kAxes{"x", "y", "t"};

void check_pokes(const Condition& c, const GenConfig& cfg) {
  for (std::size_t i = 0; i < c.pokes.size(); ++i) {
    const auto& p = c.pokes[i];
    if (p.t_star < 0 || p.t_star >= cfg.T)
      throw RangeError("poke " + std::to_string(i) + ": t_star " + std::to_string(p.t_star) + " outside [0, " +
                       std::to_string(cfg.T - 1) + "]");
    for (double v : {p.anchor.x, p.anchor.y, p.target.x, p.target.y})
      if (!(v >= -1.0 && v <= 1.0)) throw RangeError("poke " + std::to_string(i) + ": coordinate outside [-1,1]");
  }
  if (c.label && (*c.label < 0 || *c.label >= cfg.n_labels))
    throw RangeError("label " + std::to_string(*c.label) + " outside [0, " + std::to_string(cfg.n_labels - 1) + "]");
}

template <typename T>
struct Net {
  const MotionGenerator& m;
  const GenConfig& c;
  const GenLayers& L;
  Graph<T>& g;
  const ParamStore<T>& ps;
  nn::RopeSpec spec;

  Net(const MotionGenerator& model, Graph<T>& graph, const ParamStore<T>& store)
      : m(model), c(model.config()), L(model.layers()), g(graph), ps(store),
        spec(nn::RopeSpec::xyt(model.config().nn.head_dim(), model.config().rope_base)) {
    if (store.size() != model.params().size()) throw ArgumentError("parameter store does not belong to this model");
  }

  RopeTable<T> table(const Matrix<double>& coords) const {
    return nn::make_rope_table<T>(spec, RopePositions{kAxes, coords});
  }

  /// Condition tokens (pokes then label) and their positions; an invalid
  /// Var when there are none.
  Var<T> condition_tokens(const Condition& cond, Matrix<double>& pos) const {
    check_pokes(cond, c);
    std::vector<Var<T>> parts;
    const auto n_poke = static_cast<Eigen::Index>(cond.pokes.size());
    const Eigen::Index n = n_poke + (cond.label ? 1 : 0);
    pos.resize(n, 3);
    if (n_poke > 0) {
      Matrix<double> raw(n_poke, 3);
      for (Eigen::Index i = 0; i < n_poke; ++i) {
        const auto& p = cond.pokes[static_cast<std::size_t>(i)];
        raw(i, 0) = p.target.x;
        raw(i, 1) = p.target.y;
        raw(i, 2) = static_cast<double>(p.t_star) / c.T;
        pos(i, 0) = c.rope_spatial_scale * p.anchor.x;
        pos(i, 1) = c.rope_spatial_scale * p.anchor.y;
        pos(i, 2) = p.t_star;
      }
      parts.push_back(L.poke_embed(g, ps, g.constant(nn::fourier_embed_rows<T>(raw, m.fourier()))));
    }
    if (cond.label) {
      parts.push_back(nn::slice_rows(g.param(ps[L.label_table]), *cond.label, 1));
      pos.row(n - 1).setZero();
    }
    if (parts.empty()) return {};
    return parts.size() == 1 ? parts.front() : nn::concat_rows(parts);
  }

  /// Frame tokens with positions; invalid when the frame is absent or dropped.
  Var<T> frame_tokens(const Condition& cond, const Matrix<double>* noise, Matrix<double>& pos) const {
    if (!cond.frame || cond.drop_frame) return {};
    const auto& f = *cond.frame;
    if (f.D_f != c.frame_channels || f.features.cols() != f.D_f ||
        f.features.rows() != static_cast<Eigen::Index>(f.H_f) * f.W_f)
      throw ShapeError("frame features do not match the generator's frame channels");
    Matrix<double> feats = f.features;
    if (noise && noise->size() > 0) feats += *noise;
    pos.resize(feats.rows(), 3);
    for (int h = 0; h < f.H_f; ++h)
      for (int w = 0; w < f.W_f; ++w) {
        pos(h * f.W_f + w, 0) = c.rope_spatial_scale * (2.0 * (w + 0.5) / f.W_f - 1.0);
        pos(h * f.W_f + w, 1) = c.rope_spatial_scale * (2.0 * (h + 0.5) / f.H_f - 1.0);
        pos(h * f.W_f + w, 2) = 0.0;
      }
    return L.frame_in(g, ps, g.constant(feats.template cast<T>()));
  }

  Var<T> field(Var<T> z, double t, const Condition& cond, const Matrix<double>* frame_noise) const {
    if (z.rows() != c.latent_tokens() || z.cols() != c.D)
      throw ShapeError("latent state shape " + std::to_string(z.rows()) + "x" + std::to_string(z.cols()) +
                       " does not match the generator (" + std::to_string(c.latent_tokens()) + "x" +
                       std::to_string(c.D) + ")");
    Matrix<double> traw(1, 1);
    traw(0, 0) = t;
    auto temb = L.t_embed(g, ps, g.constant(nn::fourier_embed_rows<T>(traw, m.fourier())));
    auto x = nn::add_row(L.z_in(g, ps, z), temb);

    Matrix<double> fpos, cpos;
    auto frame = frame_tokens(cond, frame_noise, fpos);
    auto cond_tokens = condition_tokens(cond, cpos);
    Var<T> ctx;
    Matrix<double> ctx_pos;
    if (frame.valid() && cond_tokens.valid()) {
      ctx = nn::concat_rows<T>({frame, cond_tokens});
      ctx_pos.resize(fpos.rows() + cpos.rows(), 3);
      ctx_pos.topRows(fpos.rows()) = fpos;
      ctx_pos.bottomRows(cpos.rows()) = cpos;
    } else if (frame.valid()) {
      ctx = frame;
      ctx_pos = fpos;
    } else if (cond_tokens.valid()) {
      ctx = cond_tokens;
      ctx_pos = cpos;
    }

    std::optional<RopeTable<T>> tl, tc;
    if (c.grid_rope) {
      tl = table(latent_token_positions(c));
      if (ctx.valid()) tc = table(ctx_pos);
    }
    const RopeTable<T>* rl = tl ? &*tl : nullptr;
    const RopeTable<T>* rc = tc ? &*tc : nullptr;
    for (std::size_t i = 0; i < L.self_blocks.size(); ++i) {
      x = L.self_blocks[i].self(g, ps, x, rl);
      // Nothing to attend to when the condition is empty.
      if (ctx.valid()) x = L.cross_blocks[i](g, ps, x, ctx, rl, rc);
      x = L.ffn[i](g, ps, x);
    }
    return L.out(g, ps, L.out_norm(g, ps, x));
  }
};

}  // namespace

Matrix<double> latent_token_positions(const GenConfig& c) {
  Matrix<double> pos(c.latent_tokens(), 3);
  const double s = c.rope_spatial_scale;
  int r = 0;
  for (int tz = 0; tz < c.T_z(); ++tz)
    for (int h = 0; h < c.H; ++h)
      for (int w = 0; w < c.W; ++w, ++r) {
        pos(r, 0) = s * (2.0 * (w + 0.5) / c.W - 1.0);
        pos(r, 1) = s * (2.0 * (h + 0.5) / c.H - 1.0);
        pos(r, 2) = c.T_z() > 1 ? (tz + 0.5) * c.t_c - 0.5 : 0.0;
      }
  return pos;
}

int vfield_token_count(const GenConfig& cfg) { return cfg.latent_tokens(); }

Matrix<double> embed_condition(const Condition& c, const MotionGenerator& model) {
  Graph<float> g(false);
  Net<float> net(model, g, model.params());
  Matrix<double> pos;
  auto tokens = net.condition_tokens(c, pos);
  if (!tokens.valid()) return Matrix<double>(0, model.config().nn.d_model);
  return tokens.value().cast<double>();
}

template <typename T>
Matrix<double> vfield(const MotionGenerator& model, const ParamStore<T>& ps, const FlowState& state,
                      const Condition& c) {
  if (!(state.t >= 0.0 && state.t <= 1.0)) throw RangeError("vfield: t must lie in [0, 1]");
  Graph<T> g(false);
  Net<T> net(model, g, ps);
  return net.field(g.constant(state.z_t.template cast<T>()), state.t, c, nullptr).value().template cast<double>();
}

// ---------------------------------------------------------------------------
// Loss

FmDraw fm_draw(const GenConfig& cfg, const FmExample& ex, std::uint64_t seed, std::size_t index) {
  Rng rng(mix_seed(seed, index), 0x666d);
  FmDraw d;
  d.t = rng.uniform();
  d.z0.resize(ex.z1.rows(), ex.z1.cols());
  for (Eigen::Index i = 0; i < d.z0.size(); ++i) d.z0.data()[i] = rng.normal();
  d.drop_frame = ex.cond.drop_frame || rng.bernoulli(cfg.p_drop);
  if (ex.cond.frame && !d.drop_frame && cfg.sigma_aug > 0.0) {
    const auto& f = ex.cond.frame->features;
    d.frame_noise.resize(f.rows(), f.cols());
    for (Eigen::Index i = 0; i < d.frame_noise.size(); ++i) d.frame_noise.data()[i] = cfg.sigma_aug * rng.normal();
  }
  return d;
}

double fm_loss_with(const VectorField& field, const GenConfig& cfg, const std::vector<FmExample>& batch,
                    std::uint64_t seed) {
  if (batch.empty()) throw ArgumentError("empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto d = fm_draw(cfg, batch[i], seed, i);
    Condition c = batch[i].cond;
    c.drop_frame = d.drop_frame;
    const auto state = interpolate(d.z0, batch[i].z1, d.t);
    const Matrix<double> v = field(state, c);
    total += (v - target_flow(d.z0, batch[i].z1)).squaredNorm() / static_cast<double>(v.size());
  }
  return total / static_cast<double>(batch.size());
}

template <typename T>
Var<T> fm_loss_graph(Graph<T>& g, const MotionGenerator& model, const ParamStore<T>& ps, const FmExample& ex,
                     std::uint64_t seed, std::size_t index) {
  const auto& cfg = model.config();
  const auto d = fm_draw(cfg, ex, seed, index);
  Condition c = ex.cond;
  c.drop_frame = d.drop_frame;
  const auto state = interpolate(d.z0, ex.z1, d.t);
  Net<T> net(model, g, ps);
  auto v = net.field(g.constant(state.z_t.template cast<T>()), d.t, c, &d.frame_noise);
  return nn::mean_squared_error(v, target_flow(d.z0, ex.z1).template cast<T>().eval());
}

double fm_loss(const std::vector<FmExample>& batch, const MotionGenerator& model, std::uint64_t seed) {
  if (batch.empty()) throw ArgumentError("empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Graph<float> g(false);
    total += fm_loss_graph(g, model, model.params(), batch[i], seed, i).value()(0, 0);
  }
  return total / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// Sampling

Matrix<double> euler_integrate(Matrix<double> z, int nfe,
                               const std::function<Matrix<double>(const Matrix<double>&, double)>& field) {
  if (nfe < 1) throw ArgumentError("nfe must be >= 1");
  const double h = 1.0 / nfe;
  for (int k = 0; k < nfe; ++k) {
    const Matrix<double> v = field(z, static_cast<double>(k) / nfe);
    if (v.rows() != z.rows() || v.cols() != z.cols()) throw ShapeError("vector field changed the state shape");
    z += h * v;
    if (!z.allFinite()) throw NumericError("non-finite latent state at integration step " + std::to_string(k));
  }
  return z;
}

Matrix<double> sample_noise(const GenConfig& cfg, std::uint64_t seed) {
  Rng rng(seed, 0x7330);
  Matrix<double> z(cfg.latent_tokens(), cfg.D);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  return z;
}

vae::LatentGrid sample(const MotionGenerator& model, const Condition& c, int nfe, std::uint64_t seed) {
  const auto& cfg = model.config();
  check_pokes(c, cfg);
  Condition cond = c;
  cond.drop_frame = false;
  auto z = euler_integrate(sample_noise(cfg, seed), nfe, [&](const Matrix<double>& zt, double t) {
    return vfield(FlowState{zt, t}, cond, model);
  });
  return {cfg.T_z(), cfg.H, cfg.W, cfg.D, model.stats().unwhiten(z)};
}

std::vector<Poke> tracks_to_pokes(const track::TrackSet& ts, const std::vector<int>& t_stars) {
  std::vector<Poke> out;
  for (const auto& tr : ts.tracks())
    for (int t : t_stars) {
      if (t < 0 || t >= tr.length()) throw RangeError("t_star " + std::to_string(t) + " outside the horizon");
      out.push_back({tr.start, tr.positions[static_cast<std::size_t>(t)], t});
    }
  return out;
}

template Matrix<double> vfield<float>(const MotionGenerator&, const ParamStore<float>&, const FlowState&,
                                      const Condition&);
template Matrix<double> vfield<double>(const MotionGenerator&, const ParamStore<double>&, const FlowState&,
                                       const Condition&);
template Var<float> fm_loss_graph<float>(Graph<float>&, const MotionGenerator&, const ParamStore<float>&,
                                         const FmExample&, std::uint64_t, std::size_t);
template Var<double> fm_loss_graph<double>(Graph<double>&, const MotionGenerator&, const ParamStore<double>&,
                                           const FmExample&, std::uint64_t, std::size_t);

}  // namespace zipmo::gen
