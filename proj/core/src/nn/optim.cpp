#include "zipmo/nn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "zipmo/errors.hpp"

namespace zipmo::nn {

AdamW::AdamW(const ParamStore<float>& ps, AdamWConfig cfg) : cfg_(cfg) {
  if (!(cfg.lr > 0.0)) throw ConfigError("optimizer: lr must be positive");
  if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0)
    throw ConfigError("optimizer: betas must lie in [0, 1)");
  for (const auto& p : ps.all()) {
    m_.push_back(Matrix<float>::Zero(p.value.rows(), p.value.cols()));
    v_.push_back(Matrix<float>::Zero(p.value.rows(), p.value.cols()));
  }
}

double AdamW::current_lr() const {
  if (cfg_.warmup_steps > 0 && t_ < cfg_.warmup_steps)
    return cfg_.lr * static_cast<double>(t_ + 1) / cfg_.warmup_steps;
  if (cfg_.decay_steps <= cfg_.warmup_steps) return cfg_.lr;
  const double span = cfg_.decay_steps - std::max(0, cfg_.warmup_steps);
  const double u = std::min(1.0, (t_ - std::max(0, cfg_.warmup_steps)) / span);
  const double floor = cfg_.min_lr_ratio * cfg_.lr;
  return floor + 0.5 * (cfg_.lr - floor) * (1.0 + std::cos(std::numbers::pi * u));
}

double AdamW::step(ParamStore<float>& ps) {
  if (static_cast<std::size_t>(ps.size()) != m_.size()) throw ArgumentError("optimizer: parameter set changed");
  const double norm = cfg_.clip_norm > 0.0 ? clip_grad_norm(ps, cfg_.clip_norm) : ps.grad_norm();
  const double lr = current_lr();
  ++t_;
  const auto b1 = static_cast<float>(cfg_.beta1);
  const auto b2 = static_cast<float>(cfg_.beta2);
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const auto step_size = static_cast<float>(lr / c1);
  const auto inv_c2 = static_cast<float>(1.0 / c2);
  const auto eps = static_cast<float>(cfg_.eps);
  for (std::size_t i = 0; i < m_.size(); ++i) {
    auto& p = ps.all()[i];
    if (p.value.rows() > 1 && cfg_.weight_decay > 0.0)
      p.value *= static_cast<float>(1.0 - lr * cfg_.weight_decay);
    m_[i] = b1 * m_[i] + (1.0f - b1) * p.grad;
    v_[i] = b2 * v_[i] + (1.0f - b2) * p.grad.cwiseAbs2();
    p.value.array() -= step_size * m_[i].array() / ((v_[i].array() * inv_c2).sqrt() + eps);
  }
  return norm;
}

double clip_grad_norm(ParamStore<float>& ps, double max_norm) {
  const double norm = ps.grad_norm();
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  if (max_norm > 0.0 && norm > max_norm) ps.scale_grad(static_cast<float>(max_norm / norm));
  return norm;
}

}  // namespace zipmo::nn
