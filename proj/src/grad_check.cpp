#include <cmath>

#include "attnforge/tensor.hpp"

namespace attnforge {

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  if (!x.defined() || x.numel() == 0) throw std::invalid_argument("grad_check: undefined probe");
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");

  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  std::vector<double> analytic(probe.numel(), 0.0);
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f(probe);
    if (loss.numel() != 1) throw std::invalid_argument("grad_check: f must be scalar-valued");
    tape.backward(loss);
    if (const std::vector<double>* g = probe.grad_if()) analytic = *g;
  }

  Tensor work = x.clone();
  work.set_requires_grad(false);
  double worst = 0.0;
  for (std::size_t i = 0; i < work.numel(); ++i) {
    double saved = work.values()[i];
    auto eval_at = [&](double delta) {
      work.values()[i] = saved + delta;
      double r = f(work).item();
      work.values()[i] = saved;
      return r;
    };
    // fourth-order central stencil: O(eps^4) truncation lets eps stay large
    // enough that f's rounding noise does not swamp small gradient entries.
    // grouped as paired differences so entries f ignores give exactly zero
    double inner = eval_at(eps) - eval_at(-eps);
    double outer = eval_at(2.0 * eps) - eval_at(-2.0 * eps);
    double numeric = (8.0 * inner - outer) / (12.0 * eps);
    double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
    worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace attnforge
