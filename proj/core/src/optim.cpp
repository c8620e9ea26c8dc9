#include "bodynerf/optim.hpp"

#include <cmath>

namespace bodynerf {

Parameter::Parameter(std::string name_, Tensor t) : name(std::move(name_)) {
  BN_CHECK(t.defined() && t.is_leaf(), "Parameter ", name,
           ": tensor must be a leaf");
  t.node().requires_grad = true;
  tensor = std::move(t);
}

void adam_step(std::span<Parameter* const> params, const AdamOptions& opt) {
  for (Parameter* p : params) {
    if (!p->tensor.has_grad()) continue;
    const auto& g = p->tensor.grad();
    auto& theta = p->tensor.mutable_values();
    if (p->m.empty()) {
      p->m.assign(theta.size(), 0.0);
      p->v.assign(theta.size(), 0.0);
    }
    p->step += 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(p->step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(p->step));
    for (size_t i = 0; i < theta.size(); ++i) {
      p->m[i] = opt.beta1 * p->m[i] + (1.0 - opt.beta1) * g[i];
      p->v[i] = opt.beta2 * p->v[i] + (1.0 - opt.beta2) * g[i] * g[i];
      const double mhat = p->m[i] / bc1;
      const double vhat = p->v[i] / bc2;
      theta[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
    p->tensor.zero_grad();
  }
}

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->tensor.zero_grad();
}

double grad_check(const std::function<Tensor()>& f,
                  std::span<Parameter* const> params, double step) {
  Tensor loss = f();
  BN_CHECK(loss.numel() == 1, "grad_check: f must return a scalar");
  BN_CHECK(std::isfinite(loss.scalar_value()),
           "grad_check: non-finite value of f");
  zero_grads(params);
  if (loss.requires_grad()) loss.backward();  // constant f: all-zero analytic

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) {
    if (p->tensor.has_grad())
      analytic.push_back(p->tensor.grad());
    else
      analytic.emplace_back(p->tensor.numel(), 0.0);
  }

  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& theta = params[pi]->tensor.mutable_values();
    for (size_t i = 0; i < theta.size(); ++i) {
      const double saved = theta[i];
      theta[i] = saved + step;
      const double fp = f().scalar_value();
      theta[i] = saved - step;
      const double fm = f().scalar_value();
      theta[i] = saved;
      BN_CHECK(std::isfinite(fp) && std::isfinite(fm),
               "grad_check: non-finite value of f while perturbing ",
               params[pi]->name);
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[pi][i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      worst = std::max(worst, err);
    }
  }
  zero_grads(params);
  return worst;
}

}  // namespace bodynerf
