#include "zipmo/nn/graph.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "zipmo/errors.hpp"

namespace zipmo::nn {

namespace {

template <typename T>
void check_same_graph(Var<T> a, Var<T> b) {
  if (a.graph != b.graph) throw ArgumentError("operands belong to different graphs");
}

template <typename T>
void check_same_shape(const Matrix<T>& a, const Matrix<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph

template <typename T>
Var<T> Graph<T>::constant(Matrix<T> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var<T> Graph<T>::param(const Parameter<T>& p) {
  if (auto it = param_nodes_.find(p.index); it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.value = p.value;
  n.needs_grad = record_;
  n.param_index = p.index;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_[p.index] = id;
  return {this, id};
}

template <typename T>
Var<T> Graph<T>::record(Matrix<T> value, std::initializer_list<int> parents, BackwardFn backward) {
  return record(std::move(value), std::vector<int>(parents), std::move(backward));
}

template <typename T>
Var<T> Graph<T>::record(Matrix<T> value, const std::vector<int>& parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (int p : parents) n.needs_grad = n.needs_grad || needs_grad(p);
    if (n.needs_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Matrix<T>& Graph<T>::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) n.grad = Matrix<T>::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
  if (!record_) throw ArgumentError("backward() on a graph built without recording");
  if (loss.graph != this) throw ArgumentError("loss belongs to another graph");
  if (value(loss.id).size() != 1) throw ShapeError("backward() needs a scalar loss");
  grad(loss.id)(0, 0) = T(1);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.backward && n.grad.size() > 0) n.backward(*this, id);
  }
}

template <typename T>
void Graph<T>::accumulate_grads(ParamStore<T>& store, T scale) const {
  for (const auto& [index, id] : param_nodes_) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) continue;
    store[index].grad.noalias() += scale * n.grad;
  }
}

template <typename T>
void Graph<T>::clear() {
  nodes_.clear();
  param_nodes_.clear();
}

// ---------------------------------------------------------------------------
// Ops

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  check_same_graph(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.rows()) throw ShapeError("matmul: inner dimensions differ");
  Matrix<T> out = A * B;
  const int ia = a.id, ib = b.id;
  return a.graph->record(std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, int self) {
    const auto& G = g.grad(self);
    if (g.needs_grad(ia)) g.grad(ia).noalias() += G * g.value(ib).transpose();
    if (g.needs_grad(ib)) g.grad(ib).noalias() += g.value(ia).transpose() * G;
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  check_same_graph(x, w);
  const auto& X = x.value();
  const auto& W = w.value();
  if (X.cols() != W.rows())
    throw ShapeError("linear: input width " + std::to_string(X.cols()) + " but weight expects " +
                     std::to_string(W.rows()));
  Matrix<T> out(X.rows(), W.cols());
  out.noalias() = X * W;
  const bool has_bias = b.valid();
  if (has_bias) {
    if (b.value().rows() != 1 || b.value().cols() != W.cols()) throw ShapeError("linear: bias shape");
    out.rowwise() += b.value().row(0);
  }
  const int ix = x.id, iw = w.id, ib = has_bias ? b.id : -1;
  std::vector<int> parents{ix, iw};
  if (has_bias) parents.push_back(ib);
  return x.graph->record(std::move(out), parents, [ix, iw, ib](Graph<T>& g, int self) {
    const auto& G = g.grad(self);
    if (g.needs_grad(ix)) g.grad(ix).noalias() += G * g.value(iw).transpose();
    if (g.needs_grad(iw)) g.grad(iw).noalias() += g.value(ix).transpose() * G;
    if (ib >= 0 && g.needs_grad(ib)) g.grad(ib) += G.colwise().sum();
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  check_same_graph(a, b);
  check_same_shape(a.value(), b.value(), "add");
  Matrix<T> out = a.value() + b.value();
  const int ia = a.id, ib = b.id;
  return a.graph->record(std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, int self) {
    if (g.needs_grad(ia)) g.grad(ia) += g.grad(self);
    if (g.needs_grad(ib)) g.grad(ib) += g.grad(self);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  check_same_graph(a, b);
  check_same_shape(a.value(), b.value(), "sub");
  Matrix<T> out = a.value() - b.value();
  const int ia = a.id, ib = b.id;
  return a.graph->record(std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, int self) {
    if (g.needs_grad(ia)) g.grad(ia) += g.grad(self);
    if (g.needs_grad(ib)) g.grad(ib) -= g.grad(self);
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  check_same_graph(a, b);
  check_same_shape(a.value(), b.value(), "mul");
  Matrix<T> out = a.value().cwiseProduct(b.value());
  const int ia = a.id, ib = b.id;
  return a.graph->record(std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, int self) {
    const auto& G = g.grad(self);
    if (g.needs_grad(ia)) g.grad(ia) += G.cwiseProduct(g.value(ib));
    if (g.needs_grad(ib)) g.grad(ib) += G.cwiseProduct(g.value(ia));
  });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
  check_same_graph(a, row);
  if (row.value().rows() != 1 || row.value().cols() != a.value().cols())
    throw ShapeError("add_row: row must be 1 x " + std::to_string(a.value().cols()));
  Matrix<T> out = a.value();
  out.rowwise() += row.value().row(0);
  const int ia = a.id, ir = row.id;
  return a.graph->record(std::move(out), {ia, ir}, [ia, ir](Graph<T>& g, int self) {
    if (g.needs_grad(ia)) g.grad(ia) += g.grad(self);
    if (g.needs_grad(ir)) g.grad(ir) += g.grad(self).colwise().sum();
  });
}

template <typename T>
Var<T> broadcast_rows(Var<T> row, int n) {
  if (row.value().rows() != 1) throw ShapeError("broadcast_rows: expects a single row");
  if (n < 1) throw ShapeError("broadcast_rows: n must be >= 1");
  Matrix<T> out = row.value().replicate(n, 1);
  const int ir = row.id;
  return row.graph->record(std::move(out), {ir}, [ir](Graph<T>& g, int self) {
    g.grad(ir) += g.grad(self).colwise().sum();
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Matrix<T> out = a.value() * s;
  const int ia = a.id;
  return a.graph->record(std::move(out), {ia}, [ia, s](Graph<T>& g, int self) {
    g.grad(ia) += s * g.grad(self);
  });
}

template <typename T>
Var<T> silu(Var<T> a) {
  const auto& A = a.value();
  Matrix<T> out = A.unaryExpr([](T x) { return x * sigmoid(x); });
  const int ia = a.id;
  return a.graph->record(std::move(out), {ia}, [ia](Graph<T>& g, int self) {
    const auto& X = g.value(ia);
    const auto& G = g.grad(self);
    auto& D = g.grad(ia);
    for (Eigen::Index i = 0; i < X.size(); ++i) {
      const T x = X.data()[i];
      const T s = sigmoid(x);
      D.data()[i] += G.data()[i] * s * (T(1) + x * (T(1) - s));
    }
  });
}

template <typename T>
Var<T> swiglu(Var<T> gate, Var<T> up) {
  check_same_graph(gate, up);
  check_same_shape(gate.value(), up.value(), "swiglu");
  const auto& A = gate.value();
  const auto& B = up.value();
  Matrix<T> out(A.rows(), A.cols());
  for (Eigen::Index i = 0; i < A.size(); ++i) {
    const T x = A.data()[i];
    out.data()[i] = x * sigmoid(x) * B.data()[i];
  }
  const int ia = gate.id, ib = up.id;
  return gate.graph->record(std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, int self) {
    const auto& X = g.value(ia);
    const auto& U = g.value(ib);
    const auto& G = g.grad(self);
    const bool ga = g.needs_grad(ia), gb = g.needs_grad(ib);
    T* da = ga ? g.grad(ia).data() : nullptr;
    T* db = gb ? g.grad(ib).data() : nullptr;
    for (Eigen::Index i = 0; i < X.size(); ++i) {
      const T x = X.data()[i];
      const T s = sigmoid(x);
      if (ga) da[i] += G.data()[i] * U.data()[i] * s * (T(1) + x * (T(1) - s));
      if (gb) db[i] += G.data()[i] * x * s;
    }
  });
}

template <typename T>
Var<T> exp(Var<T> a) {
  Matrix<T> out = a.value().array().exp().matrix();
  const int ia = a.id;
  return a.graph->record(std::move(out), {ia}, [ia](Graph<T>& g, int self) {
    g.grad(ia) += g.grad(self).cwiseProduct(g.value(self));
  });
}

template <typename T>
Var<T> rms_norm(Var<T> x, Var<T> gain, double eps) {
  check_same_graph(x, gain);
  const auto& X = x.value();
  const auto& Gn = gain.value();
  if (Gn.rows() != 1 || Gn.cols() != X.cols()) throw ShapeError("rms_norm: gain shape");
  const Eigen::Index n = X.rows(), d = X.cols();
  auto inv_rms = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
  Matrix<T> out(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const T ms = X.row(r).squaredNorm() / static_cast<T>(d);
    const T inv = T(1) / std::sqrt(ms + static_cast<T>(eps));
    (*inv_rms)[static_cast<std::size_t>(r)] = inv;
    out.row(r) = (X.row(r) * inv).cwiseProduct(Gn.row(0));
  }
  const int ix = x.id, ig = gain.id;
  return x.graph->record(std::move(out), {ix, ig}, [ix, ig, inv_rms](Graph<T>& g, int self) {
    const auto& X = g.value(ix);
    const auto& Gn = g.value(ig);
    const auto& G = g.grad(self);
    const Eigen::Index n = X.rows(), d = X.cols();
    const bool gx = g.needs_grad(ix), gg = g.needs_grad(ig);
    for (Eigen::Index r = 0; r < n; ++r) {
      const T inv = (*inv_rms)[static_cast<std::size_t>(r)];
      auto xhat = (X.row(r) * inv).eval();
      if (gg) g.grad(ig).row(0) += G.row(r).cwiseProduct(xhat);
      if (gx) {
        auto dxhat = G.row(r).cwiseProduct(Gn.row(0)).eval();
        const T proj = dxhat.dot(xhat) / static_cast<T>(d);
        g.grad(ix).row(r) += (dxhat - xhat * proj) * inv;
      }
    }
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ArgumentError("concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  std::vector<int> ids;
  for (const auto& p : parts) {
    if (p.graph != parts.front().graph) throw ArgumentError("concat_rows: mixed graphs");
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    rows += p.rows();
    ids.push_back(p.id);
  }
  Matrix<T> out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return parts.front().graph->record(std::move(out), ids, [ids](Graph<T>& g, int self) {
    const auto& G = g.grad(self);
    Eigen::Index r = 0;
    for (int id : ids) {
      const Eigen::Index n = g.value(id).rows();
      if (g.needs_grad(id)) g.grad(id) += G.middleRows(r, n);
      r += n;
    }
  });
}

template <typename T>
Var<T> slice_rows(Var<T> a, int start, int count) {
  if (start < 0 || count < 1 || start + count > a.rows()) throw ShapeError("slice_rows: out of range");
  Matrix<T> out = a.value().middleRows(start, count);
  const int ia = a.id;
  return a.graph->record(std::move(out), {ia}, [ia, start, count](Graph<T>& g, int self) {
    g.grad(ia).middleRows(start, count) += g.grad(self);
  });
}

template <typename T>
Var<T> slice_cols(Var<T> a, int start, int count) {
  if (start < 0 || count < 1 || start + count > a.cols()) throw ShapeError("slice_cols: out of range");
  Matrix<T> out = a.value().middleCols(start, count);
  const int ia = a.id;
  return a.graph->record(std::move(out), {ia}, [ia, start, count](Graph<T>& g, int self) {
    g.grad(ia).middleCols(start, count) += g.grad(self);
  });
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, int heads) {
  check_same_graph(q, k);
  check_same_graph(q, v);
  const auto& Q = q.value();
  const auto& K = k.value();
  const auto& V = v.value();
  if (heads < 1 || Q.cols() % heads != 0) throw ShapeError("attention: width not divisible by heads");
  if (K.cols() != Q.cols() || V.cols() != Q.cols()) throw ShapeError("attention: q/k/v widths differ");
  if (K.rows() != V.rows()) throw ShapeError("attention: key and value counts differ");
  if (K.rows() < 1) throw ShapeError("attention: empty context");
  const Eigen::Index n = Q.rows(), m = K.rows();
  const int dk = static_cast<int>(Q.cols()) / heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dk));
  const bool keep = q.graph->recording();
  auto probs = std::make_shared<std::vector<Matrix<T>>>();
  if (keep) probs->resize(static_cast<std::size_t>(heads));

  Matrix<T> out(n, Q.cols());
  Matrix<T> S(n, m);
  for (int h = 0; h < heads; ++h) {
    S.noalias() = Q.middleCols(h * dk, dk) * K.middleCols(h * dk, dk).transpose();
    S *= sc;
    for (Eigen::Index r = 0; r < n; ++r) {
      const T mx = S.row(r).maxCoeff();
      S.row(r) = (S.row(r).array() - mx).exp().matrix();
      S.row(r) /= S.row(r).sum();
    }
    out.middleCols(h * dk, dk).noalias() = S * V.middleCols(h * dk, dk);
    if (keep) (*probs)[static_cast<std::size_t>(h)] = S;
  }

  const int iq = q.id, ik = k.id, iv = v.id;
  return q.graph->record(std::move(out), {iq, ik, iv},
                         [iq, ik, iv, heads, dk, sc, probs](Graph<T>& g, int self) {
    const auto& G = g.grad(self);
    const auto& Q = g.value(iq);
    const auto& K = g.value(ik);
    const auto& V = g.value(iv);
    const bool gq = g.needs_grad(iq), gk = g.needs_grad(ik), gv = g.needs_grad(iv);
    Matrix<T> dP, dS;
    for (int h = 0; h < heads; ++h) {
      const auto& P = (*probs)[static_cast<std::size_t>(h)];
      auto Gh = G.middleCols(h * dk, dk);
      if (gv) g.grad(iv).middleCols(h * dk, dk).noalias() += P.transpose() * Gh;
      if (!gq && !gk) continue;
      dP.noalias() = Gh * V.middleCols(h * dk, dk).transpose();
      dS = P.cwiseProduct(dP);
      const auto rowdot = dS.rowwise().sum().eval();
      dS -= P.cwiseProduct(rowdot.replicate(1, P.cols()));
      dS *= sc;
      if (gq) g.grad(iq).middleCols(h * dk, dk).noalias() += dS * K.middleCols(h * dk, dk);
      if (gk) g.grad(ik).middleCols(h * dk, dk).noalias() += dS.transpose() * Q.middleCols(h * dk, dk);
    }
  });
}

template <typename T>
Var<T> mean_abs_error(Var<T> pred, const Matrix<T>& target, const Matrix<T>& weights) {
  const auto& P = pred.value();
  check_same_shape(P, target, "mean_abs_error");
  const bool weighted = weights.size() > 0;
  if (weighted) check_same_shape(P, weights, "mean_abs_error weights");
  const T denom = weighted ? weights.sum() : static_cast<T>(P.size());
  if (!(denom > T(0))) throw ArgumentError("mean_abs_error: no weighted entries");
  Matrix<T> diff = P - target;
  T total = weighted ? diff.cwiseAbs().cwiseProduct(weights).sum() : diff.cwiseAbs().sum();
  Matrix<T> out(1, 1);
  out(0, 0) = total / denom;
  Matrix<T> w = weights;
  const int ip = pred.id;
  return pred.graph->record(std::move(out), {ip},
                            [ip, diff = std::move(diff), w = std::move(w), denom](Graph<T>& g, int self) {
    const T s = g.grad(self)(0, 0) / denom;
    auto& D = g.grad(ip);
    for (Eigen::Index i = 0; i < diff.size(); ++i) {
      const T d = diff.data()[i];
      const T sign = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
      D.data()[i] += s * sign * (w.size() ? w.data()[i] : T(1));
    }
  });
}

template <typename T>
Var<T> mean_squared_error(Var<T> pred, const Matrix<T>& target) {
  const auto& P = pred.value();
  check_same_shape(P, target, "mean_squared_error");
  if (P.size() == 0) throw ArgumentError("mean_squared_error: empty input");
  Matrix<T> diff = P - target;
  Matrix<T> out(1, 1);
  out(0, 0) = diff.squaredNorm() / static_cast<T>(P.size());
  const int ip = pred.id;
  return pred.graph->record(std::move(out), {ip}, [ip, diff = std::move(diff)](Graph<T>& g, int self) {
    const T s = T(2) * g.grad(self)(0, 0) / static_cast<T>(diff.size());
    g.grad(ip) += s * diff;
  });
}

template <typename T>
Var<T> kl_standard_normal(Var<T> mean, Var<T> logvar) {
  check_same_graph(mean, logvar);
  check_same_shape(mean.value(), logvar.value(), "kl_standard_normal");
  const auto& M = mean.value();
  const auto& L = logvar.value();
  Matrix<T> out(1, 1);
  out(0, 0) = T(0.5) * (M.squaredNorm() + (L.array().exp() - T(1) - L.array()).sum());
  const int im = mean.id, il = logvar.id;
  return mean.graph->record(std::move(out), {im, il}, [im, il](Graph<T>& g, int self) {
    const T s = g.grad(self)(0, 0);
    if (g.needs_grad(im)) g.grad(im) += s * g.value(im);
    if (g.needs_grad(il)) g.grad(il) += (T(0.5) * s) * (g.value(il).array().exp() - T(1)).matrix();
  });
}

template <typename T>
Var<T> reparameterize(Var<T> mean, Var<T> logvar, const Matrix<T>& eps) {
  check_same_graph(mean, logvar);
  check_same_shape(mean.value(), logvar.value(), "reparameterize");
  check_same_shape(mean.value(), eps, "reparameterize noise");
  Matrix<T> sd = (logvar.value().array() * T(0.5)).exp().matrix();
  Matrix<T> out = mean.value() + sd.cwiseProduct(eps);
  const int im = mean.id, il = logvar.id;
  Matrix<T> sde = sd.cwiseProduct(eps);
  return mean.graph->record(std::move(out), {im, il}, [im, il, sde = std::move(sde)](Graph<T>& g, int self) {
    const auto& G = g.grad(self);
    if (g.needs_grad(im)) g.grad(im) += G;
    if (g.needs_grad(il)) g.grad(il) += T(0.5) * G.cwiseProduct(sde);
  });
}

template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& scalars, const std::vector<T>& coefs) {
  if (scalars.empty() || scalars.size() != coefs.size())
    throw ArgumentError("weighted_sum: need one coefficient per scalar");
  T total = T(0);
  std::vector<int> ids;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].value().size() != 1) throw ShapeError("weighted_sum: inputs must be 1x1");
    total += coefs[i] * scalars[i].value()(0, 0);
    ids.push_back(scalars[i].id);
  }
  Matrix<T> out(1, 1);
  out(0, 0) = total;
  return scalars.front().graph->record(std::move(out), ids, [ids, coefs](Graph<T>& g, int self) {
    const T s = g.grad(self)(0, 0);
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (g.needs_grad(ids[i])) g.grad(ids[i])(0, 0) += coefs[i] * s;
  });
}

#define ZIPMO_INSTANTIATE_OPS(T)                                                          \
  template class Graph<T>;                                                                \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                              \
  template Var<T> linear<T>(Var<T>, Var<T>, Var<T>);                                      \
  template Var<T> add<T>(Var<T>, Var<T>);                                                 \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                 \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                 \
  template Var<T> add_row<T>(Var<T>, Var<T>);                                             \
  template Var<T> broadcast_rows<T>(Var<T>, int);                                         \
  template Var<T> scale<T>(Var<T>, T);                                                    \
  template Var<T> silu<T>(Var<T>);                                                        \
  template Var<T> swiglu<T>(Var<T>, Var<T>);                                              \
  template Var<T> exp<T>(Var<T>);                                                         \
  template Var<T> rms_norm<T>(Var<T>, Var<T>, double);                                    \
  template Var<T> concat_rows<T>(const std::vector<Var<T>>&);                             \
  template Var<T> slice_rows<T>(Var<T>, int, int);                                        \
  template Var<T> slice_cols<T>(Var<T>, int, int);                                        \
  template Var<T> attention<T>(Var<T>, Var<T>, Var<T>, int);                              \
  template Var<T> mean_abs_error<T>(Var<T>, const Matrix<T>&, const Matrix<T>&);          \
  template Var<T> mean_squared_error<T>(Var<T>, const Matrix<T>&);                        \
  template Var<T> kl_standard_normal<T>(Var<T>, Var<T>);                                  \
  template Var<T> reparameterize<T>(Var<T>, Var<T>, const Matrix<T>&);                    \
  template Var<T> weighted_sum<T>(const std::vector<Var<T>>&, const std::vector<T>&);

ZIPMO_INSTANTIATE_OPS(float)
ZIPMO_INSTANTIATE_OPS(double)

}  // namespace zipmo::nn
