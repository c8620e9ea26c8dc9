#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bodynerf/common.hpp"

namespace bodynerf {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily, same extent as value
  bool requires_grad = false;
  bool is_leaf = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

/// Dense multi-dimensional array of 64-bit floats with reverse-mode autodiff.
/// Tensor is a cheap handle (shared pointer) onto a graph node. Ops build a
/// dynamic tape; Tensor::backward() on a scalar accumulates gradients into
/// every reachable leaf that requires grad and then consumes the tape.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double fill, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  int ndim() const { return static_cast<int>(node().shape.size()); }
  std::int64_t dim(int i) const;
  std::int64_t numel() const { return node().numel(); }
  bool requires_grad() const { return node().requires_grad; }
  bool is_leaf() const { return node().is_leaf; }
  const char* op_name() const { return node().op; }

  const std::vector<double>& values() const { return node().value; }
  /// In-place edit of a leaf's payload (optimizer updates, data loading).
  std::vector<double>& mutable_values();
  double operator[](std::int64_t i) const { return node().value[i]; }
  double at(std::initializer_list<std::int64_t> idx) const;
  double scalar_value() const;

  bool has_grad() const { return !node().grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad() { node().grad.clear(); }
  /// Direct accumulation into the grad buffer (used by the optimizer tests).
  void accumulate_grad(const std::vector<double>& g);

  /// Reverse pass from a scalar. Gradients accumulate into every reachable
  /// node with requires_grad; interior tape state is released afterwards.
  void backward();

  /// Detached copy: same values, no history, requires_grad off.
  Tensor detach() const;

  detail::Node& node() const {
    BN_CHECK(node_ != nullptr, "use of undefined Tensor");
    return *node_;
  }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  static Tensor wrap(std::shared_ptr<detail::Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

// ---- Elementwise binary ops with numpy-style (right-aligned) broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// ---- Scalar and unary ops.
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);

// ---- Linear algebra / reductions / shape.
Tensor matmul(const Tensor& a, const Tensor& b);  // (m,k) x (k,n)
Tensor softmax_last(const Tensor& a);             // softmax over last axis
Tensor sum_all(const Tensor& a);                  // -> scalar
Tensor mean_all(const Tensor& a);                 // -> scalar
Tensor sum_axis(const Tensor& a, int axis);       // drops the axis
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);

// ---- Indexed ops. Index arrays are non-differentiable constants.
Tensor gather_rows(const Tensor& a, std::vector<std::int64_t> idx);
Tensor scatter_add_rows(const Tensor& src, std::vector<std::int64_t> idx,
                        std::int64_t out_rows);

// ---- Spatial ops. Images are (N,C,H,W); feature maps for sampling (H,W,C);
// volumes (D,H,W,C).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              int pad);
Tensor maxpool2d(const Tensor& x, int k, int stride);
Tensor upsample_nearest2d(const Tensor& x, int factor);
Tensor chw_to_hwc(const Tensor& x);  // (C,H,W) -> (H,W,C)

/// Bilinear lookup: fmap (H,W,C), pts (B,2) holding (x,y) in grid units.
/// Coordinates clamp to the border; gradients flow to fmap and pts.
Tensor bilinear_sample(const Tensor& fmap, const Tensor& pts);
/// Trilinear lookup: vol (D,H,W,C), pts (B,3) holding (x,y,z) in grid units
/// with x along W, y along H, z along D.
Tensor trilinear_sample(const Tensor& vol, const Tensor& pts);

/// Exclusive prefix sum within segments. x is (M) or (M,1); seg is a
/// non-decreasing id per element. Used by the ray compositor.
Tensor segment_cumsum_exclusive(const Tensor& x, std::vector<std::int64_t> seg);

bool all_finite(const Tensor& t);

}  // namespace bodynerf
