#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace zipmo {
class Rng;
}

namespace zipmo::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct Parameter {
  std::string name;
  int index = -1;
  Matrix<T> value;
  Matrix<T> grad;
};

/// Owns every trainable array of a model. Layers refer to parameters by
/// index, so a model holding a store is freely copyable.
template <typename T>
class ParamStore {
 public:
  /// Adds a zero-initialized rows x cols parameter. Names must be unique.
  int add(const std::string& name, int rows, int cols);

  Parameter<T>& operator[](int i) { return params_[static_cast<std::size_t>(i)]; }
  const Parameter<T>& operator[](int i) const { return params_[static_cast<std::size_t>(i)]; }

  /// -1 when absent.
  int find(const std::string& name) const;
  int size() const { return static_cast<int>(params_.size()); }
  /// Total number of scalars.
  std::size_t count() const;

  void zero_grad();
  void scale_grad(T s);
  double grad_norm() const;

  std::vector<Parameter<T>>& all() { return params_; }
  const std::vector<Parameter<T>>& all() const { return params_; }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : params_) {
      const int i = out.add(p.name, static_cast<int>(p.value.rows()), static_cast<int>(p.value.cols()));
      out[i].value = p.value.template cast<U>();
    }
    return out;
  }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, int> index_;
};

/// Fills with N(0, stddev^2).
template <typename T>
void init_normal(Matrix<T>& m, Rng& rng, double stddev);

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace zipmo::nn
