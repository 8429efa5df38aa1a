#include "zipmo/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "zipmo/errors.hpp"
#include "zipmo/random.hpp"

namespace zipmo::nn {

namespace {

double evaluate(const LossBuilder& loss, const ParamStore<double>& ps) {
  Graph<double> g(false);
  return loss(g, ps).value()(0, 0);
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& loss, ParamStore<double>& ps, const GradCheckOptions& opt) {
  if (!(opt.eps >= 1e-7 && opt.eps <= 1e-3)) throw ArgumentError("grad_check: eps out of range");
  if (ps.size() == 0) throw ArgumentError("grad_check: no parameters");

  ps.zero_grad();
  {
    Graph<double> g(true);
    auto l = loss(g, ps);
    g.backward(l);
    g.accumulate_grads(ps);
  }

  const std::size_t total = ps.count();
  Rng rng(opt.seed, 0x6763);
  GradCheckResult res;
  const int max_attempts = opt.samples * 4;
  for (int attempt = 0; attempt < max_attempts && res.checked < opt.samples; ++attempt) {
    // Pick a flat coordinate uniformly over all scalars.
    auto flat = static_cast<std::size_t>(rng.uniform() * static_cast<double>(total));
    int pi = 0;
    while (flat >= static_cast<std::size_t>(ps[pi].value.size())) {
      flat -= static_cast<std::size_t>(ps[pi].value.size());
      ++pi;
    }
    auto& p = ps[pi];
    double& x = p.value.data()[flat];
    const double orig = x;
    const double f0 = evaluate(loss, ps);
    x = orig + opt.eps;
    const double fp = evaluate(loss, ps);
    x = orig - opt.eps;
    const double fm = evaluate(loss, ps);
    x = orig;

    const double fwd = (fp - f0) / opt.eps;
    const double bwd = (f0 - fm) / opt.eps;
    const double scale_fb = std::max({std::abs(fwd), std::abs(bwd), opt.floor});
    if (std::abs(fwd - bwd) / scale_fb > opt.kink_tol && std::abs(fwd - bwd) > 1e3 * opt.eps) {
      ++res.skipped;
      continue;
    }
    const double numeric = (fp - fm) / (2.0 * opt.eps);
    const double analytic = p.grad.data()[flat];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.floor});
    const double err = std::abs(analytic - numeric) / denom;
    ++res.checked;
    if (err > res.max_rel_error || res.worst.empty()) {
      res.max_rel_error = std::max(res.max_rel_error, err);
      if (err >= res.max_rel_error) res.worst = p.name + "[" + std::to_string(flat) + "]";
    }
  }
  return res;
}

}  // namespace zipmo::nn
