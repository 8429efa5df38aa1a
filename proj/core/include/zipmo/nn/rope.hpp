#pragma once

// Partial multi-axis rotary embeddings.
//
// A head of width d_k is split into consecutive blocks, one per axis in the
// layout. Inside an axis block of width b, pair (2i, 2i+1) is rotated by
// position * base^(-2i/b). The identity block is left untouched.

#include <string>
#include <vector>

#include "zipmo/nn/graph.hpp"

namespace zipmo::nn {

/// Name used for the identity (unrotated) block.
inline constexpr const char* kRopeIdentity = "none";

struct RopeAxis {
  std::string name;
  double fraction = 0.0;
};

struct RopeSpec {
  int head_dim = 0;
  std::vector<RopeAxis> axes;
  double base = 1e4;

  /// Throws LayoutError unless head_dim % 8 == 0, fractions sum to 1, the
  /// identity block has positive share, and every block has even width.
  void validate() const;
  /// Width in dims of axis block i.
  int block_width(std::size_t i) const;

  /// [x, y, t, none] in quarters.
  static RopeSpec xyt(int head_dim, double base = 1e4);
  /// [x, y] quarters plus a half identity block.
  static RopeSpec xy(int head_dim, double base = 1e4);
};

/// Per-token coordinates; columns follow `axes`.
struct RopePositions {
  std::vector<std::string> axes;
  Matrix<double> coords;  // n_tokens x axes.size()

  Eigen::Index size() const { return coords.rows(); }
  /// Stacks position sets with identical axes.
  static RopePositions concat(const std::vector<const RopePositions*>& parts);
};

/// Precomputed cos/sin per token and rotated pair.
template <typename T>
struct RopeTable {
  int head_dim = 0;
  std::vector<int> pair_start;  // first dim of each rotated pair
  Matrix<T> cos;                // n_tokens x n_pairs
  Matrix<T> sin;

  Eigen::Index size() const { return cos.rows(); }
};

template <typename T>
RopeTable<T> make_rope_table(const RopeSpec& spec, const RopePositions& pos);

/// Rotates each head of `x` (n x heads*head_dim) in place.
template <typename T>
void rope_rotate(Matrix<T>& x, const RopeTable<T>& table, bool inverse = false);

/// Functional form on a single head: x is n x head_dim.
Matrix<double> rope_apply(const Matrix<double>& x, const RopePositions& pos, const RopeSpec& spec);

/// Differentiable rotation for use inside attention.
template <typename T>
Var<T> rope(Var<T> x, const RopeTable<T>& table);

}  // namespace zipmo::nn
