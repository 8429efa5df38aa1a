#pragma once

#include <vector>

#include "zipmo/nn/params.hpp"

namespace zipmo::nn {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int warmup_steps = 100;
  double clip_norm = 1.0;  // <= 0 disables clipping
  /// Cosine decay from lr to min_lr_ratio * lr over steps
  /// [warmup_steps, decay_steps); 0 keeps lr constant after warmup.
  int decay_steps = 0;
  double min_lr_ratio = 0.05;
};

/// AdamW with decoupled weight decay. Decay is applied to weight matrices
/// only; 1 x n parameters (biases, norm gains, embeddings rows) are exempt.
class AdamW {
 public:
  AdamW(const ParamStore<float>& ps, AdamWConfig cfg);

  /// Clips, then updates every parameter from its grad. Returns the
  /// pre-clip gradient norm.
  double step(ParamStore<float>& ps);
  /// Learning rate used for the next step.
  double current_lr() const;
  long steps() const { return t_; }

 private:
  AdamWConfig cfg_;
  std::vector<Matrix<float>> m_, v_;
  long t_ = 0;
};

/// Scales gradients so their global norm is at most max_norm; returns the
/// original norm.
double clip_grad_norm(ParamStore<float>& ps, double max_norm);

}  // namespace zipmo::nn
