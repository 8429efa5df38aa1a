#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "zipmo/nn/params.hpp"

namespace zipmo::nn {

/// Random Fourier features with frequencies drawn once from N(0, sigma^2).
struct FourierSpec {
  int n_freq = 0;
  std::vector<double> freq;
  std::uint64_t seed = 0;

  static FourierSpec make(int n_freq, std::uint64_t seed, double sigma = 1.0);
  /// Output width for `n_inputs` scalars.
  int width(int n_inputs) const { return 2 * n_freq * n_inputs; }
};

/// For each input v: [sin(2 pi f_j v) ..., cos(2 pi f_j v) ...].
std::vector<double> fourier_embed(std::span<const double> v, const FourierSpec& spec);
/// Row-wise embedding of an n x k matrix of scalars into n x (2 n_freq k).
template <typename T>
Matrix<T> fourier_embed_rows(const Matrix<double>& values, const FourierSpec& spec);

}  // namespace zipmo::nn
