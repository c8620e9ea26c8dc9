#pragma once

#include <map>
#include <vector>

#include "bodynerf/body.hpp"
#include "bodynerf/mlp.hpp"

namespace bodynerf {

/// Scaled dot-product attention over the temporal axis with the volume
/// feature as query. The output projection starts at zero, so an untrained
/// block passes the volume feature through unchanged via the residual.
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(const std::string& name, int query_dim, int key_dim,
                 int attn_dim, Rng& rng);

  /// f_v (B,Dq); temporal (B,T,Ck); valid (B,T) frame mask. Rows with no
  /// valid frame return f_v unchanged.
  Tensor enhance(const Tensor& f_v, const Tensor& temporal,
                 const std::vector<std::vector<char>>& valid) const;
  /// Post-softmax attention weights (B,T), for inspection and tests.
  Tensor weights(const Tensor& f_v, const Tensor& temporal,
                 const std::vector<std::vector<char>>& valid) const;

  void collect_parameters(std::vector<Parameter*>& out);

 private:
  Tensor logits(const Tensor& f_v, const Tensor& temporal,
                const std::vector<std::vector<char>>& valid) const;

  int attn_dim_ = 0;
  Parameter wq_, wk_, wv_, wo_;
};

/// Stacks per-frame (B,C) features into the (B,T,C) tensor attention expects.
Tensor stack_temporal(const std::vector<Tensor>& per_frame);

/// gamma(d) = (d, sin(2^l pi d), cos(2^l pi d) for l < bands); length
/// 3 + 6*bands.
Tensor positional_encode(const std::vector<Vec3>& dirs, int bands);

/// Learned per-camera appearance codes; unknown ids fall back to the table
/// mean with a one-time warning.
class CameraLatentTable {
 public:
  CameraLatentTable() = default;
  CameraLatentTable(const std::vector<int>& camera_ids, int dim, Rng& rng);

  /// (B, dim) rows for one camera id.
  Tensor lookup(int camera_id, std::int64_t rows) const;
  bool has(int camera_id) const { return id_to_row_.count(camera_id) > 0; }
  int dim() const { return dim_; }
  const std::map<int, std::int64_t>& ids() const { return id_to_row_; }

  void collect_parameters(std::vector<Parameter*>& out) { out.push_back(&table_); }

 private:
  int dim_ = 0;
  std::map<int, std::int64_t> id_to_row_;
  Parameter table_;
  mutable bool warned_ = false;
};

}  // namespace bodynerf
