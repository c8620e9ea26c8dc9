#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bodynerf/tensor.hpp"

namespace bodynerf {

/// A named leaf tensor with Adam state. The tensor persists across training
/// steps; each step's tape reads it as a leaf and accumulates into its grad.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name_, Tensor t);

  Tensor tensor;
  std::string name;
  std::vector<double> m;  // first moment
  std::vector<double> v;  // second moment
  std::int64_t step = 0;

  std::int64_t numel() const { return tensor.numel(); }
};

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update on every parameter holding a gradient;
/// parameters without one are untouched. Gradients are cleared afterwards.
void adam_step(std::span<Parameter* const> params, const AdamOptions& opt);

void zero_grads(std::span<Parameter* const> params);

/// Max over all coordinates of |analytic - central difference| /
/// max(1, |analytic|) for the scalar function f of the given parameters.
/// f must be deterministic; a non-finite f is fatal.
double grad_check(const std::function<Tensor()>& f,
                  std::span<Parameter* const> params, double step);

}  // namespace bodynerf
