#include "zipmo/nn/fourier.hpp"

#include <cmath>
#include <numbers>

#include "zipmo/errors.hpp"
#include "zipmo/random.hpp"

namespace zipmo::nn {

FourierSpec FourierSpec::make(int n_freq, std::uint64_t seed, double sigma) {
  if (n_freq < 1) throw ConfigError("fourier: n_freq must be >= 1");
  if (!(sigma > 0.0)) throw ConfigError("fourier: sigma must be positive");
  FourierSpec s;
  s.n_freq = n_freq;
  s.seed = seed;
  Rng rng(seed, 0x466f);
  s.freq.resize(static_cast<std::size_t>(n_freq));
  for (auto& f : s.freq) f = rng.normal() * sigma;
  return s;
}

namespace {

template <typename Out>
void embed_into(std::span<const double> v, const FourierSpec& spec, Out* out) {
  const int F = spec.n_freq;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) throw NumericError("fourier_embed: non-finite input");
    Out* base = out + 2 * F * static_cast<int>(i);
    for (int j = 0; j < F; ++j) {
      const double a = 2.0 * std::numbers::pi * spec.freq[static_cast<std::size_t>(j)] * v[i];
      base[j] = static_cast<Out>(std::sin(a));
      base[F + j] = static_cast<Out>(std::cos(a));
    }
  }
}

}  // namespace

std::vector<double> fourier_embed(std::span<const double> v, const FourierSpec& spec) {
  if (spec.n_freq < 1 || static_cast<int>(spec.freq.size()) != spec.n_freq)
    throw ConfigError("fourier: spec not initialized");
  std::vector<double> out(static_cast<std::size_t>(spec.width(static_cast<int>(v.size()))));
  embed_into(v, spec, out.data());
  return out;
}

template <typename T>
Matrix<T> fourier_embed_rows(const Matrix<double>& values, const FourierSpec& spec) {
  if (spec.n_freq < 1 || static_cast<int>(spec.freq.size()) != spec.n_freq)
    throw ConfigError("fourier: spec not initialized");
  const int k = static_cast<int>(values.cols());
  Matrix<T> out(values.rows(), spec.width(k));
  for (Eigen::Index r = 0; r < values.rows(); ++r)
    embed_into(std::span<const double>(values.row(r).data(), static_cast<std::size_t>(k)), spec,
               out.row(r).data());
  return out;
}

template Matrix<float> fourier_embed_rows<float>(const Matrix<double>&, const FourierSpec&);
template Matrix<double> fourier_embed_rows<double>(const Matrix<double>&, const FourierSpec&);

}  // namespace zipmo::nn
