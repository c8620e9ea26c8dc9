#include "bodynerf/mlp.hpp"

#include <cmath>

namespace bodynerf {

Tensor init_weight(Shape shape, std::int64_t fan_in, Rng& rng) {
  const double std = std::sqrt(2.0 / static_cast<double>(std::max<std::int64_t>(fan_in, 1)));
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.normal(0.0, std);
  return Tensor::from_values(std::move(shape), std::move(v));
}

Mlp::Mlp(const std::string& name, std::vector<std::int64_t> dims, Rng& rng,
         bool zero_last)
    : dims_(std::move(dims)) {
  BN_CHECK(dims_.size() >= 2, "Mlp ", name, ": needs at least in/out dims");
  for (size_t l = 0; l + 1 < dims_.size(); ++l) {
    const bool last = l + 2 == dims_.size();
    Tensor w = (zero_last && last)
                   ? Tensor::zeros({dims_[l], dims_[l + 1]})
                   : init_weight({dims_[l], dims_[l + 1]}, dims_[l], rng);
    weights_.emplace_back(name + ".w" + std::to_string(l), std::move(w));
    biases_.emplace_back(name + ".b" + std::to_string(l),
                         Tensor::zeros({dims_[l + 1]}));
  }
}

Tensor Mlp::forward(const Tensor& x) const {
  BN_CHECK(x.ndim() == 2 && x.dim(1) == dims_.front(), "Mlp: input shape ",
           shape_str(x.shape()), " does not match in dim ", dims_.front());
  Tensor h = x;
  for (size_t l = 0; l < weights_.size(); ++l) {
    h = add(matmul(h, weights_[l].tensor), biases_[l].tensor);
    if (l + 1 < weights_.size()) h = relu(h);
  }
  return h;
}

void Mlp::collect_parameters(std::vector<Parameter*>& out) {
  for (auto& p : weights_) out.push_back(&p);
  for (auto& p : biases_) out.push_back(&p);
}

}  // namespace bodynerf
