#include "zipmo/nn/params.hpp"

#include <cmath>

#include "zipmo/errors.hpp"
#include "zipmo/random.hpp"

namespace zipmo::nn {

template <typename T>
int ParamStore<T>::add(const std::string& name, int rows, int cols) {
  if (index_.count(name)) throw ArgumentError("duplicate parameter name: " + name);
  if (rows < 1 || cols < 1) throw ShapeError("parameter " + name + " has an empty shape");
  Parameter<T> p;
  p.name = name;
  p.index = static_cast<int>(params_.size());
  p.value = Matrix<T>::Zero(rows, cols);
  p.grad = Matrix<T>::Zero(rows, cols);
  index_[name] = p.index;
  params_.push_back(std::move(p));
  return params_.back().index;
}

template <typename T>
int ParamStore<T>::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

template <typename T>
std::size_t ParamStore<T>::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

template <typename T>
void ParamStore<T>::scale_grad(T s) {
  for (auto& p : params_) p.grad *= s;
}

template <typename T>
double ParamStore<T>::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) sq += static_cast<double>(p.grad.squaredNorm());
  return std::sqrt(sq);
}

template <typename T>
void init_normal(Matrix<T>& m, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal() * stddev);
}

template class ParamStore<float>;
template class ParamStore<double>;
template void init_normal<float>(Matrix<float>&, Rng&, double);
template void init_normal<double>(Matrix<double>&, Rng&, double);

}  // namespace zipmo::nn
