#include "zipmo/nn/rope.hpp"

#include <cmath>
#include <memory>

#include "zipmo/errors.hpp"

namespace zipmo::nn {

void RopeSpec::validate() const {
  if (head_dim < 8 || head_dim % 8 != 0) throw LayoutError("rope: head_dim must be a positive multiple of 8");
  if (axes.empty()) throw LayoutError("rope: empty axis layout");
  if (!(base > 1.0)) throw LayoutError("rope: base must exceed 1");
  double total = 0.0;
  double identity = 0.0;
  for (std::size_t i = 0; i < axes.size(); ++i) {
    const auto& a = axes[i];
    if (a.fraction <= 0.0) throw LayoutError("rope: axis '" + a.name + "' has non-positive fraction");
    total += a.fraction;
    if (a.name == kRopeIdentity) identity += a.fraction;
    const double w = a.fraction * head_dim;
    if (std::abs(w - std::round(w)) > 1e-9 || static_cast<int>(std::round(w)) % 2 != 0)
      throw LayoutError("rope: axis '" + a.name + "' does not cover an even number of dims");
  }
  if (std::abs(total - 1.0) > 1e-9) throw LayoutError("rope: axis fractions must sum to 1");
  if (identity <= 0.0) throw LayoutError("rope: layout needs an identity block");
}

int RopeSpec::block_width(std::size_t i) const {
  return static_cast<int>(std::lround(axes.at(i).fraction * head_dim));
}

RopeSpec RopeSpec::xyt(int head_dim, double base) {
  return {head_dim, {{"x", 0.25}, {"y", 0.25}, {"t", 0.25}, {kRopeIdentity, 0.25}}, base};
}

RopeSpec RopeSpec::xy(int head_dim, double base) {
  return {head_dim, {{"x", 0.25}, {"y", 0.25}, {kRopeIdentity, 0.5}}, base};
}

RopePositions RopePositions::concat(const std::vector<const RopePositions*>& parts) {
  if (parts.empty()) throw ArgumentError("rope: nothing to concatenate");
  RopePositions out;
  out.axes = parts.front()->axes;
  Eigen::Index n = 0;
  for (const auto* p : parts) {
    if (p->axes != out.axes) throw LayoutError("rope: concatenated positions use different axes");
    n += p->size();
  }
  out.coords.resize(n, static_cast<Eigen::Index>(out.axes.size()));
  Eigen::Index r = 0;
  for (const auto* p : parts) {
    out.coords.middleRows(r, p->size()) = p->coords;
    r += p->size();
  }
  return out;
}

template <typename T>
RopeTable<T> make_rope_table(const RopeSpec& spec, const RopePositions& pos) {
  spec.validate();
  if (pos.coords.cols() != static_cast<Eigen::Index>(pos.axes.size()))
    throw LayoutError("rope: position matrix does not match its axis list");
  struct Pair {
    int dim;
    int column;
    double theta;
  };
  std::vector<Pair> pairs;
  int offset = 0;
  for (std::size_t i = 0; i < spec.axes.size(); ++i) {
    const int w = spec.block_width(i);
    const auto& name = spec.axes[i].name;
    if (name != kRopeIdentity) {
      int column = -1;
      for (std::size_t c = 0; c < pos.axes.size(); ++c)
        if (pos.axes[c] == name) column = static_cast<int>(c);
      if (column < 0) throw LayoutError("rope: positions lack axis '" + name + "'");
      for (int j = 0; j < w / 2; ++j)
        pairs.push_back({offset + 2 * j, column, std::pow(spec.base, -2.0 * j / w)});
    }
    offset += w;
  }
  RopeTable<T> table;
  table.head_dim = spec.head_dim;
  const auto n = pos.size();
  const auto np = static_cast<Eigen::Index>(pairs.size());
  table.cos.resize(n, np);
  table.sin.resize(n, np);
  for (const auto& p : pairs) table.pair_start.push_back(p.dim);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index k = 0; k < np; ++k) {
      const auto& p = pairs[static_cast<std::size_t>(k)];
      const double c = pos.coords(r, p.column);
      if (!std::isfinite(c)) throw NumericError("rope: non-finite position");
      const double a = c * p.theta;
      table.cos(r, k) = static_cast<T>(std::cos(a));
      table.sin(r, k) = static_cast<T>(std::sin(a));
    }
  }
  return table;
}

template <typename T>
void rope_rotate(Matrix<T>& x, const RopeTable<T>& table, bool inverse) {
  const int dk = table.head_dim;
  if (dk <= 0 || x.cols() % dk != 0) throw ShapeError("rope: width is not a multiple of head_dim");
  if (x.rows() != table.size()) throw ShapeError("rope: token count differs from position count");
  const int heads = static_cast<int>(x.cols()) / dk;
  const auto np = static_cast<Eigen::Index>(table.pair_start.size());
  const T sgn = inverse ? T(-1) : T(1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    T* row = x.row(r).data();
    for (Eigen::Index k = 0; k < np; ++k) {
      const T c = table.cos(r, k);
      const T s = sgn * table.sin(r, k);
      const int d = table.pair_start[static_cast<std::size_t>(k)];
      for (int h = 0; h < heads; ++h) {
        T* p = row + h * dk + d;
        const T a = p[0], b = p[1];
        p[0] = c * a - s * b;
        p[1] = s * a + c * b;
      }
    }
  }
}

Matrix<double> rope_apply(const Matrix<double>& x, const RopePositions& pos, const RopeSpec& spec) {
  if (x.cols() != spec.head_dim) throw ShapeError("rope_apply: width differs from head_dim");
  auto table = make_rope_table<double>(spec, pos);
  Matrix<double> out = x;
  rope_rotate(out, table);
  return out;
}

template <typename T>
Var<T> rope(Var<T> x, const RopeTable<T>& table) {
  Matrix<T> out = x.value();
  rope_rotate(out, table);
  // The table may not outlive the graph, so the backward pass keeps a copy.
  auto kept = x.graph->recording() ? std::make_shared<RopeTable<T>>(table) : nullptr;
  const int ix = x.id;
  return x.graph->record(std::move(out), {ix}, [ix, kept](Graph<T>& g, int self) {
    Matrix<T> G = g.grad(self);
    rope_rotate(G, *kept, true);
    g.grad(ix) += G;
  });
}

template RopeTable<float> make_rope_table<float>(const RopeSpec&, const RopePositions&);
template RopeTable<double> make_rope_table<double>(const RopeSpec&, const RopePositions&);
template void rope_rotate<float>(Matrix<float>&, const RopeTable<float>&, bool);
template void rope_rotate<double>(Matrix<double>&, const RopeTable<double>&, bool);
template Var<float> rope<float>(Var<float>, const RopeTable<float>&);
template Var<double> rope<double>(Var<double>, const RopeTable<double>&);

}  // namespace zipmo::nn
