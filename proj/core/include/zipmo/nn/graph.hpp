#pragma once

// Tape-based reverse-mode differentiation over row-major Eigen matrices.
//
// A Graph records every operation of one forward pass. Values are matrices
// (tokens x features); scalars are 1x1. After backward(), gradients of
// parameter leaves are added into a ParamStore with accumulate_grads().
// A graph built with recording disabled keeps no closures and serves as the
// inference path.

#include <deque>
#include <functional>
#include <initializer_list>
#include <unordered_map>
#include <vector>

#include "zipmo/nn/params.hpp"

namespace zipmo::nn {

template <typename T>
class Graph;

template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  const Matrix<T>& value() const { return graph->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var<T> constant(Matrix<T> value);
  /// Leaf bound to a parameter; repeated calls return the same node.
  Var<T> param(const Parameter<T>& p);

  /// Adds an op node. `backward` reads grad(self) and adds into parents'
  /// grads; it is dropped when no parent needs a gradient.
  Var<T> record(Matrix<T> value, std::initializer_list<int> parents, BackwardFn backward);
  Var<T> record(Matrix<T> value, const std::vector<int>& parents, BackwardFn backward);

  const Matrix<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  /// Gradient buffer, zero-initialized on first access.
  Matrix<T>& grad(int id);
  bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad.size() > 0; }

  /// Seeds d(loss)/d(loss) = 1 and runs the tape in reverse. `loss` is 1x1.
  void backward(Var<T> loss);

  /// Adds scale * d(loss)/d(param) into store[param.index].grad.
  void accumulate_grads(ParamStore<T>& store, T scale = T(1)) const;

  /// Releases every node; parameter caching restarts.
  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    bool needs_grad = false;
    int param_index = -1;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
  std::unordered_map<int, int> param_nodes_;
  bool record_;
};

// ---------------------------------------------------------------------------
// Ops. All shapes are checked; mismatches throw ShapeError.

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// x * W + b (b is 1 x out and broadcast over rows; pass an invalid Var to
/// skip the bias).
template <typename T> Var<T> linear(Var<T> x, Var<T> w, Var<T> b);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
/// Adds a 1 x d row to every row of a.
template <typename T> Var<T> add_row(Var<T> a, Var<T> row);
/// Repeats a 1 x d row n times.
template <typename T> Var<T> broadcast_rows(Var<T> row, int n);
template <typename T> Var<T> scale(Var<T> a, T s);
template <typename T> Var<T> silu(Var<T> a);
/// silu(gate) * up, the SwiGLU gating.
template <typename T> Var<T> swiglu(Var<T> gate, Var<T> up);
template <typename T> Var<T> exp(Var<T> a);
/// Row-wise RMS normalization with a learned 1 x d gain.
template <typename T> Var<T> rms_norm(Var<T> x, Var<T> gain, double eps);
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_rows(Var<T> a, int start, int count);
template <typename T> Var<T> slice_cols(Var<T> a, int start, int count);
/// Multi-head scaled dot-product attention; q: n x (h*dk), k and v: m x (h*dk).
template <typename T> Var<T> attention(Var<T> q, Var<T> k, Var<T> v, int heads);

/// Mean of |pred - target| over entries with nonzero weight. `weights`
/// may be empty (all ones) or match pred's shape.
template <typename T> Var<T> mean_abs_error(Var<T> pred, const Matrix<T>& target,
                                            const Matrix<T>& weights = {});
template <typename T> Var<T> mean_squared_error(Var<T> pred, const Matrix<T>& target);
/// 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar).
template <typename T> Var<T> kl_standard_normal(Var<T> mean, Var<T> logvar);
/// mean + exp(logvar / 2) * eps.
template <typename T> Var<T> reparameterize(Var<T> mean, Var<T> logvar, const Matrix<T>& eps);
/// Sum of c_i * s_i for 1x1 scalars s_i.
template <typename T> Var<T> weighted_sum(const std::vector<Var<T>>& scalars,
                                          const std::vector<T>& coefs);

}  // namespace zipmo::nn
