#pragma once

#include <string>
#include <vector>

#include "bodynerf/optim.hpp"
#include "bodynerf/rng.hpp"
#include "bodynerf/tensor.hpp"

namespace bodynerf {

/// Fully connected stack with ReLU between layers and a linear final layer.
/// dims = {in, hidden..., out}. With zero_last the final layer starts at
/// exactly zero, so residual-style consumers begin as the identity.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& name, std::vector<std::int64_t> dims, Rng& rng,
      bool zero_last = false);

  /// x is (B, in) -> (B, out).
  Tensor forward(const Tensor& x) const;

  void collect_parameters(std::vector<Parameter*>& out);
  std::int64_t in_dim() const { return dims_.front(); }
  std::int64_t out_dim() const { return dims_.back(); }

 private:
  std::vector<std::int64_t> dims_;
  std::vector<Parameter> weights_;
  std::vector<Parameter> biases_;
};

/// He-style normal init used across the project.
Tensor init_weight(Shape shape, std::int64_t fan_in, Rng& rng);

}  // namespace bodynerf
