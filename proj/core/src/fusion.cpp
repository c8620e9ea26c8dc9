#include "bodynerf/fusion.hpp"

#include <cmath>
#include <iostream>

namespace bodynerf {

AttentionBlock::AttentionBlock(const std::string& name, int query_dim,
                               int key_dim, int attn_dim, Rng& rng)
    : attn_dim_(attn_dim),
      wq_(name + ".wq", init_weight({query_dim, attn_dim}, query_dim, rng)),
      wk_(name + ".wk", init_weight({key_dim, attn_dim}, key_dim, rng)),
      wv_(name + ".wv", init_weight({key_dim, attn_dim}, key_dim, rng)),
      wo_(name + ".wo", Tensor::zeros({attn_dim, query_dim})) {}

Tensor AttentionBlock::logits(const Tensor& f_v, const Tensor& temporal,
                              const std::vector<std::vector<char>>& valid) const {
  const std::int64_t b = f_v.dim(0);
  const std::int64_t t = temporal.dim(1);
  const std::int64_t ck = temporal.dim(2);
  BN_CHECK(static_cast<std::int64_t>(valid.size()) == t,
           "attention: mask count ", valid.size(), " != frame count ", t);

  Tensor q = matmul(f_v, wq_.tensor);                       // (B,d)
  Tensor k = reshape(matmul(reshape(temporal, {b * t, ck}), wk_.tensor),
                     {b, t, attn_dim_});
  Tensor scores = scale(sum_axis(mul(k, reshape(q, {b, 1, attn_dim_})), 2),
                        1.0 / std::sqrt(static_cast<double>(attn_dim_)));

  // Invalid frames get a large negative bias; max-subtraction keeps the
  // softmax finite even when a row is fully masked.
  std::vector<double> bias(static_cast<size_t>(b) * t, 0.0);
  for (std::int64_t ti = 0; ti < t; ++ti)
    for (std::int64_t bi = 0; bi < b; ++bi)
      if (!valid[ti][bi]) bias[bi * t + ti] = -1e30;
  return add(scores, Tensor::from_values({b, t}, std::move(bias)));
}

Tensor AttentionBlock::weights(const Tensor& f_v, const Tensor& temporal,
                               const std::vector<std::vector<char>>& valid) const {
  return softmax_last(logits(f_v, temporal, valid));
}

Tensor AttentionBlock::enhance(const Tensor& f_v, const Tensor& temporal,
                               const std::vector<std::vector<char>>& valid) const {
  const std::int64_t b = f_v.dim(0);
  const std::int64_t t = temporal.dim(1);
  const std::int64_t ck = temporal.dim(2);

  Tensor attn = softmax_last(logits(f_v, temporal, valid));  // (B,T)
  Tensor v = reshape(matmul(reshape(temporal, {b * t, ck}), wv_.tensor),
                     {b, t, attn_dim_});
  Tensor pooled = sum_axis(mul(reshape(attn, {b, t, 1}), v), 1);  // (B,d)

  // Rows with no valid frame fall back to the volume feature alone.
  std::vector<double> gate(b, 1.0);
  for (std::int64_t bi = 0; bi < b; ++bi) {
    bool any = false;
    for (std::int64_t ti = 0; ti < t && !any; ++ti) any = valid[ti][bi];
    if (!any) gate[bi] = 0.0;
  }
  Tensor gated = mul(matmul(pooled, wo_.tensor),
                     Tensor::from_values({b, 1}, std::move(gate)));
  return add(f_v, gated);
}

void AttentionBlock::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&wq_);
  out.push_back(&wk_);
  out.push_back(&wv_);
  out.push_back(&wo_);
}

Tensor stack_temporal(const std::vector<Tensor>& per_frame) {
  BN_CHECK(!per_frame.empty(), "stack_temporal: no frames");
  const std::int64_t b = per_frame[0].dim(0);
  const std::int64_t c = per_frame[0].dim(1);
  const std::int64_t t = static_cast<std::int64_t>(per_frame.size());
  // Row-wise concat then reshape yields frame-major (B,T,C).
  return reshape(concat(per_frame, 1), {b, t, c});
}

Tensor positional_encode(const std::vector<Vec3>& dirs, int bands) {
  BN_CHECK(bands >= 0, "positional_encode: negative band count");
  const std::int64_t b = static_cast<std::int64_t>(dirs.size());
  const std::int64_t width = 3 + 6 * bands;
  constexpr double pi = 3.14159265358979323846;
  std::vector<double> out(static_cast<size_t>(b) * width);
  for (std::int64_t i = 0; i < b; ++i) {
    const Vec3& d = dirs[i];
    BN_CHECK(std::abs(d.norm() - 1.0) <= 1e-9,
             "positional_encode: direction must be unit norm, got ", d.norm());
    double* row = out.data() + i * width;
    row[0] = d.x();
    row[1] = d.y();
    row[2] = d.z();
    std::int64_t o = 3;
    for (int l = 0; l < bands; ++l) {
      const double f = std::pow(2.0, l) * pi;
      for (int a = 0; a < 3; ++a) row[o++] = std::sin(f * d[a]);
      for (int a = 0; a < 3; ++a) row[o++] = std::cos(f * d[a]);
    }
  }
  return Tensor::from_values({b, width}, std::move(out));
}

CameraLatentTable::CameraLatentTable(const std::vector<int>& camera_ids,
                                     int dim, Rng& rng)
    : dim_(dim) {
  BN_CHECK(!camera_ids.empty(), "CameraLatentTable: no camera ids");
  for (int id : camera_ids)
    if (!id_to_row_.count(id))
      id_to_row_.emplace(id, static_cast<std::int64_t>(id_to_row_.size()));
  const std::int64_t n = static_cast<std::int64_t>(id_to_row_.size());
  std::vector<double> init(static_cast<size_t>(n) * dim);
  for (auto& v : init) v = rng.normal(0.0, 0.1);
  table_ = Parameter("camera_latents",
                     Tensor::from_values({n, dim}, std::move(init)));
}

Tensor CameraLatentTable::lookup(int camera_id, std::int64_t rows) const {
  auto it = id_to_row_.find(camera_id);
  Tensor row;
  if (it != id_to_row_.end()) {
    row = gather_rows(table_.tensor, {it->second});
  } else {
    if (!warned_) {
      std::cerr << "[bodynerf] camera id " << camera_id
                << " has no latent code; using the table mean\n";
      warned_ = true;
    }
    row = scale(sum_axis(table_.tensor, 0),
                1.0 / static_cast<double>(table_.tensor.dim(0)));
    row = reshape(row, {1, dim_});
  }
  std::vector<std::int64_t> idx(rows, 0);
  return gather_rows(row, std::move(idx));
}

}  // namespace bodynerf
