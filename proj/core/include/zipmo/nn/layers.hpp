#pragma once

// Transformer building blocks. Each layer stores parameter indices into a
// ParamStore, so the same layer object drives a float store during training
// and a double copy of it during gradient checks.

#include <cmath>
#include <string>

#include "zipmo/errors.hpp"
#include "zipmo/nn/graph.hpp"
#include "zipmo/nn/rope.hpp"
#include "zipmo/random.hpp"

namespace zipmo::nn {

struct AttentionConfig {
  int d_model = 128;
  int heads = 4;
  int depth = 4;
  int ffn_expand = 3;
  double norm_eps = 1e-6;

  int head_dim() const { return d_model / heads; }
  /// Throws ConfigError when widths are inconsistent.
  void validate() const;
};

struct Linear {
  int w = -1;
  int b = -1;
  int in = 0;
  int out = 0;

  /// Weights ~ N(0, (gain / sqrt(in))^2), bias zero.
  template <typename T>
  static Linear create(ParamStore<T>& ps, const std::string& name, int in, int out, Rng& rng,
                       bool bias = true, double gain = 1.0) {
    Linear l;
    l.in = in;
    l.out = out;
    l.w = ps.add(name + ".w", in, out);
    init_normal(ps[l.w].value, rng, gain / std::sqrt(static_cast<double>(in)));
    if (bias) l.b = ps.add(name + ".b", 1, out);
    return l;
  }

  template <typename T>
  Var<T> operator()(Graph<T>& g, const ParamStore<T>& ps, Var<T> x) const {
    return linear(x, g.param(ps[w]), b >= 0 ? g.param(ps[b]) : Var<T>{});
  }
};

struct RmsNorm {
  int gain = -1;
  double eps = 1e-6;

  template <typename T>
  static RmsNorm create(ParamStore<T>& ps, const std::string& name, int dim, double eps) {
    RmsNorm n;
    n.eps = eps;
    n.gain = ps.add(name + ".g", 1, dim);
    ps[n.gain].value.setOnes();
    return n;
  }

  template <typename T>
  Var<T> operator()(Graph<T>& g, const ParamStore<T>& ps, Var<T> x) const {
    return rms_norm(x, g.param(ps[gain]), eps);
  }
};

/// Two-layer perceptron with a SiLU in between.
struct Mlp {
  Linear fc1, fc2;

  template <typename T>
  static Mlp create(ParamStore<T>& ps, const std::string& name, int in, int hidden, int out, Rng& rng) {
    return {Linear::create(ps, name + ".fc1", in, hidden, rng),
            Linear::create(ps, name + ".fc2", hidden, out, rng)};
  }

  template <typename T>
  Var<T> operator()(Graph<T>& g, const ParamStore<T>& ps, Var<T> x) const {
    return fc2(g, ps, silu(fc1(g, ps, x)));
  }
};

/// Pre-norm residual SwiGLU feed-forward: x + W_d(silu(W_g n) * W_u n).
struct FeedForward {
  RmsNorm norm;
  Linear gate, up, down;

  template <typename T>
  static FeedForward create(ParamStore<T>& ps, const std::string& name, const AttentionConfig& cfg,
                            Rng& rng) {
    const int h = cfg.d_model * cfg.ffn_expand;
    FeedForward f;
    f.norm = RmsNorm::create(ps, name + ".norm", cfg.d_model, cfg.norm_eps);
    f.gate = Linear::create(ps, name + ".gate", cfg.d_model, h, rng, false);
    f.up = Linear::create(ps, name + ".up", cfg.d_model, h, rng, false);
    f.down = Linear::create(ps, name + ".down", h, cfg.d_model, rng, false, 0.5);
    return f;
  }

  template <typename T>
  Var<T> operator()(Graph<T>& g, const ParamStore<T>& ps, Var<T> x) const {
    auto n = norm(g, ps, x);
    return add(x, down(g, ps, swiglu(gate(g, ps, n), up(g, ps, n))));
  }
};

/// Pre-norm residual multi-head attention. Self-attention when `cross` is
/// false; otherwise queries come from x and keys/values from a separately
/// normalized context.
struct AttentionBlock {
  RmsNorm norm_q, norm_kv;
  Linear wq, wk, wv, wo;
  int heads = 1;
  bool cross = false;

  template <typename T>
  static AttentionBlock create(ParamStore<T>& ps, const std::string& name, const AttentionConfig& cfg,
                               bool cross, Rng& rng) {
    AttentionBlock a;
    a.heads = cfg.heads;
    a.cross = cross;
    const int d = cfg.d_model;
    a.norm_q = RmsNorm::create(ps, name + ".norm", d, cfg.norm_eps);
    if (cross) a.norm_kv = RmsNorm::create(ps, name + ".norm_ctx", d, cfg.norm_eps);
    a.wq = Linear::create(ps, name + ".q", d, d, rng, false);
    a.wk = Linear::create(ps, name + ".k", d, d, rng, false);
    a.wv = Linear::create(ps, name + ".v", d, d, rng, false);
    a.wo = Linear::create(ps, name + ".o", d, d, rng, false, 0.5);
    return a;
  }

  /// rope_q / rope_k may be null (no positional rotation).
  template <typename T>
  Var<T> operator()(Graph<T>& g, const ParamStore<T>& ps, Var<T> x, Var<T> ctx,
                    const RopeTable<T>* rope_q, const RopeTable<T>* rope_k) const {
    auto hq = norm_q(g, ps, x);
    auto hk = cross ? norm_kv(g, ps, ctx) : hq;
    auto q = wq(g, ps, hq);
    auto k = wk(g, ps, hk);
    auto v = wv(g, ps, hk);
    if (rope_q) q = rope(q, *rope_q);
    if (rope_k) k = rope(k, *rope_k);
    return add(x, wo(g, ps, attention(q, k, v, heads)));
  }

  template <typename T>
  Var<T> self(Graph<T>& g, const ParamStore<T>& ps, Var<T> x, const RopeTable<T>* r) const {
    if (cross) throw ArgumentError("attention block was built for cross-attention");
    return (*this)(g, ps, x, x, r, r);
  }
};

/// Evaluates one self-attention block on `tokens` (n x d_model) with
/// optional rotary positions; no gradient recording.
Matrix<double> self_attention(const Matrix<double>& tokens, const RopePositions* positions,
                              const RopeSpec* spec, const ParamStore<double>& ps,
                              const AttentionBlock& block);

/// Cross-attention of `queries` onto `context`; the context receives no
/// rotation unless `positions_ctx` is given.
Matrix<double> cross_attention(const Matrix<double>& queries, const Matrix<double>& context,
                               const RopePositions* positions_q, const RopePositions* positions_ctx,
                               const RopeSpec* spec, const ParamStore<double>& ps,
                               const AttentionBlock& block);

}  // namespace zipmo::nn
