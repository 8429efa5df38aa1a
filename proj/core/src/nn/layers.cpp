#include "zipmo/nn/layers.hpp"

#include <optional>

namespace zipmo::nn {

void AttentionConfig::validate() const {
  if (d_model < 1 || heads < 1) throw ConfigError("attention: d_model and heads must be positive");
  if (d_model % heads != 0) throw ConfigError("attention: d_model must be divisible by heads");
  if (head_dim() % 8 != 0) throw ConfigError("attention: head width must be a multiple of 8");
  if (depth < 1) throw ConfigError("attention: depth must be >= 1");
  if (ffn_expand < 1) throw ConfigError("attention: ffn_expand must be >= 1");
  if (!(norm_eps > 0.0)) throw ConfigError("attention: norm_eps must be positive");
}

namespace {

int block_width(const ParamStore<double>& ps, const AttentionBlock& block) {
  return static_cast<int>(ps[block.wq.w].value.rows());
}

}  // namespace

Matrix<double> self_attention(const Matrix<double>& tokens, const RopePositions* positions,
                              const RopeSpec* spec, const ParamStore<double>& ps,
                              const AttentionBlock& block) {
  if (tokens.cols() != block_width(ps, block))
    throw ShapeError("self_attention: token width " + std::to_string(tokens.cols()) +
                     " differs from model width " + std::to_string(block_width(ps, block)));
  Graph<double> g(false);
  std::optional<RopeTable<double>> table;
  if (positions && spec) table = make_rope_table<double>(*spec, *positions);
  auto x = g.constant(tokens);
  return block.self(g, ps, x, table ? &*table : nullptr).value();
}

Matrix<double> cross_attention(const Matrix<double>& queries, const Matrix<double>& context,
                               const RopePositions* positions_q, const RopePositions* positions_ctx,
                               const RopeSpec* spec, const ParamStore<double>& ps,
                               const AttentionBlock& block) {
  const int d = block_width(ps, block);
  if (queries.cols() != d || context.cols() != d)
    throw ShapeError("cross_attention: query/context width differs from model width " + std::to_string(d));
  if (!block.cross) throw ArgumentError("cross_attention: block was built for self-attention");
  Graph<double> g(false);
  std::optional<RopeTable<double>> tq, tk;
  if (positions_q && spec) tq = make_rope_table<double>(*spec, *positions_q);
  if (positions_ctx && spec) tk = make_rope_table<double>(*spec, *positions_ctx);
  auto q = g.constant(queries);
  auto c = g.constant(context);
  return block(g, ps, q, c, tq ? &*tq : nullptr, tk ? &*tk : nullptr).value();
}

}  // namespace zipmo::nn
