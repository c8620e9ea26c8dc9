#include "bodynerf/feature_volume.hpp"

#include <algorithm>
#include <cmath>

namespace bodynerf {

bool SparseFeatureVolume::contains(const Vec3& p) const {
  const Vec3 lo = box_lo(), hi = box_hi();
  return p.x() >= lo.x() && p.y() >= lo.y() && p.z() >= lo.z() &&
         p.x() <= hi.x() && p.y() <= hi.y() && p.z() <= hi.z();
}

std::int64_t SparseFeatureVolume::query_channels() const {
  std::int64_t c = 0;
  for (const auto& l : levels) c += l.feats.dim(1);
  return c;
}

AggregatedFeatures aggregate_vertex_features(
    const std::vector<ObservedFrame>& frames) {
  BN_CHECK(!frames.empty(), "aggregate_vertex_features: no frames");
  const std::int64_t v =
      static_cast<std::int64_t>(frames[0].posed_vertices.size());
  const std::int64_t t = static_cast<std::int64_t>(frames.size());
  for (const auto& f : frames) {
    BN_CHECK(static_cast<std::int64_t>(f.posed_vertices.size()) == v,
             "aggregate_vertex_features: vertex count mismatch across frames");
    BN_CHECK(static_cast<std::int64_t>(f.visibility.size()) == v,
             "aggregate_vertex_features: visibility size mismatch");
  }

  std::vector<double> vis_count(v, 0.0);
  for (const auto& f : frames)
    for (std::int64_t i = 0; i < v; ++i)
      if (f.visibility[i]) vis_count[i] += 1.0;

  AggregatedFeatures out;
  out.never_visible.resize(v);
  for (std::int64_t i = 0; i < v; ++i)
    out.never_visible[i] = vis_count[i] == 0.0 ? 1 : 0;

  Tensor acc;
  for (std::int64_t fi = 0; fi < t; ++fi) {
    const ObservedFrame& f = frames[fi];
    std::vector<double> uv(v * 2);
    for (std::int64_t i = 0; i < v; ++i) {
      const Projection p = project(f.posed_vertices[i], f.camera);
      uv[i * 2 + 0] = p.ok ? p.u : -1.0;
      uv[i * 2 + 1] = p.ok ? p.v : -1.0;
    }
    PixelSamples samples =
        sample_pixel_feature(f.fmap, Tensor::from_values({v, 2}, std::move(uv)));

    std::vector<double> w(v);
    for (std::int64_t i = 0; i < v; ++i) {
      if (vis_count[i] == 0.0)
        w[i] = 1.0 / static_cast<double>(t);  // unweighted-mean fallback
      else
        w[i] = f.visibility[i] ? 1.0 / vis_count[i] : 0.0;
    }
    Tensor term =
        mul(samples.features, Tensor::from_values({v, 1}, std::move(w)));
    acc = acc.defined() ? add(acc, term) : term;
  }
  out.features = acc;
  return out;
}

SparseFeatureVolume scatter_to_voxels(const Tensor& vertex_features,
                                      const std::vector<Vec3>& posed_vertices,
                                      const Vec3& bbox_lo, const Vec3& bbox_hi,
                                      double voxel_size) {
  BN_CHECK(vertex_features.ndim() == 2, "scatter_to_voxels: features must be (V,C)");
  const std::int64_t v = vertex_features.dim(0);
  BN_CHECK(static_cast<std::int64_t>(posed_vertices.size()) == v,
           "scatter_to_voxels: ", posed_vertices.size(), " vertices for ", v,
           " feature rows");
  BN_CHECK(voxel_size > 0.0, "scatter_to_voxels: voxel size must be > 0");

  SparseFeatureVolume vol;
  vol.origin = bbox_lo;
  vol.voxel_size = voxel_size;
  vol.nx = std::max(1, static_cast<int>(std::ceil((bbox_hi.x() - bbox_lo.x()) / voxel_size)));
  vol.ny = std::max(1, static_cast<int>(std::ceil((bbox_hi.y() - bbox_lo.y()) / voxel_size)));
  vol.nz = std::max(1, static_cast<int>(std::ceil((bbox_hi.z() - bbox_lo.z()) / voxel_size)));

  VoxelLevel level;
  level.voxel_size = voxel_size;
  level.nx = vol.nx;
  level.ny = vol.ny;
  level.nz = vol.nz;

  std::vector<std::int64_t> vertex_voxel(v);
  for (std::int64_t i = 0; i < v; ++i) {
    const Vec3 rel = (posed_vertices[i] - bbox_lo) / voxel_size;
    const int x = static_cast<int>(std::floor(rel.x()));
    const int y = static_cast<int>(std::floor(rel.y()));
    const int z = static_cast<int>(std::floor(rel.z()));
    BN_CHECK(x >= 0 && x < vol.nx && y >= 0 && y < vol.ny && z >= 0 && z < vol.nz,
             "scatter_to_voxels: vertex ", i, " outside the bounding box");
    vertex_voxel[i] = level.linear(x, y, z);
  }

  std::vector<std::int64_t> rows(v);
  std::vector<double> counts;
  for (std::int64_t i = 0; i < v; ++i) {
    auto [it, inserted] = level.rows.try_emplace(
        vertex_voxel[i], static_cast<std::int64_t>(level.coords.size()));
    if (inserted) {
      level.coords.push_back(vertex_voxel[i]);
      counts.push_back(0.0);
    }
    rows[i] = it->second;
    counts[it->second] += 1.0;
  }

  const std::int64_t n_occ = static_cast<std::int64_t>(level.coords.size());
  Tensor sums = scatter_add_rows(vertex_features, rows, n_occ);
  std::vector<double> inv(counts.size());
  for (size_t i = 0; i < counts.size(); ++i) inv[i] = 1.0 / counts[i];
  level.feats = mul(sums, Tensor::from_values({n_occ, 1}, std::move(inv)));

  vol.levels.push_back(std::move(level));
  return vol;
}

// ---------------------------------------------------------------------------
// Diffusion

DiffusionNet::DiffusionNet(const DiffusionConfig& config, Rng& rng)
    : config_(config) {
  int in_ch = config.in_channels;
  for (int k = 0; k < config.levels; ++k) {
    w_.emplace_back("diffusion.conv" + std::to_string(k) + ".w",
                    init_weight({27 * in_ch, config.channels}, 27 * in_ch, rng));
    b_.emplace_back("diffusion.conv" + std::to_string(k) + ".b",
                    Tensor::zeros({config.channels}));
    in_ch = config.channels;
  }
}

void DiffusionNet::collect_parameters(std::vector<Parameter*>& out) {
  for (auto& p : w_) out.push_back(&p);
  for (auto& p : b_) out.push_back(&p);
}

namespace {

struct Occupancy {
  int nx, ny, nz;
  std::vector<std::int64_t> coords;
  std::unordered_map<std::int64_t, std::int64_t> rows;
};

// Stride-2 mean pool over occupied children.
void pool_level(const VoxelLevel& in, VoxelLevel& out, Tensor& pooled) {
  out.voxel_size = in.voxel_size * 2.0;
  out.nx = (in.nx + 1) / 2;
  out.ny = (in.ny + 1) / 2;
  out.nz = (in.nz + 1) / 2;
  std::vector<std::int64_t> child_rows(in.coords.size());
  std::vector<double> counts;
  for (size_t i = 0; i < in.coords.size(); ++i) {
    const std::int64_t lin = in.coords[i];
    const int x = static_cast<int>(lin % in.nx);
    const int y = static_cast<int>((lin / in.nx) % in.ny);
    const int z = static_cast<int>(lin / (static_cast<std::int64_t>(in.nx) * in.ny));
    const std::int64_t coarse = out.linear(x / 2, y / 2, z / 2);
    auto [it, inserted] = out.rows.try_emplace(
        coarse, static_cast<std::int64_t>(out.coords.size()));
    if (inserted) {
      out.coords.push_back(coarse);
      counts.push_back(0.0);
    }
    child_rows[i] = it->second;
    counts[it->second] += 1.0;
  }
  const std::int64_t n = static_cast<std::int64_t>(out.coords.size());
  Tensor sums = scatter_add_rows(in.feats, child_rows, n);
  std::vector<double> inv(counts.size());
  for (size_t i = 0; i < counts.size(); ++i) inv[i] = 1.0 / counts[i];
  pooled = mul(sums, Tensor::from_values({n, 1}, std::move(inv)));
}

// 3x3x3 correlation over the occupied set, realized as one padded gather and
// one matmul. Output occupancy is the input occupancy dilated by one voxel.
Tensor sparse_conv3(const VoxelLevel& in, const Tensor& in_feats,
                    const Tensor& weight, const Tensor& bias,
                    VoxelLevel& out_occ) {
  out_occ.voxel_size = in.voxel_size;
  out_occ.nx = in.nx;
  out_occ.ny = in.ny;
  out_occ.nz = in.nz;
  for (const std::int64_t lin : in.coords) {
    const int x = static_cast<int>(lin % in.nx);
    const int y = static_cast<int>((lin / in.nx) % in.ny);
    const int z = static_cast<int>(lin / (static_cast<std::int64_t>(in.nx) * in.ny));
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ox = x + dx, oy = y + dy, oz = z + dz;
          if (ox < 0 || ox >= in.nx || oy < 0 || oy >= in.ny || oz < 0 ||
              oz >= in.nz)
            continue;
          const std::int64_t olin = out_occ.linear(ox, oy, oz);
          if (out_occ.rows.try_emplace(olin, static_cast<std::int64_t>(out_occ.coords.size())).second)
            out_occ.coords.push_back(olin);
        }
  }

  const std::int64_t n_in = in_feats.dim(0);
  const std::int64_t n_out = static_cast<std::int64_t>(out_occ.coords.size());
  const std::int64_t c_in = in_feats.dim(1);

  // Row n_in of the padded matrix is the zero row for absent neighbors.
  Tensor padded = concat({in_feats, Tensor::zeros({1, c_in})}, 0);
  std::vector<std::int64_t> gather_idx(static_cast<size_t>(n_out) * 27);
  size_t gi = 0;
  for (const std::int64_t olin : out_occ.coords) {
    const int x = static_cast<int>(olin % in.nx);
    const int y = static_cast<int>((olin / in.nx) % in.ny);
    const int z = static_cast<int>(olin / (static_cast<std::int64_t>(in.nx) * in.ny));
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int sx = x + dx, sy = y + dy, sz = z + dz;
          std::int64_t row = n_in;
          if (sx >= 0 && sx < in.nx && sy >= 0 && sy < in.ny && sz >= 0 &&
              sz < in.nz) {
            auto it = in.rows.find(in.linear(sx, sy, sz));
            if (it != in.rows.end()) row = it->second;
          }
          gather_idx[gi++] = row;
        }
  }
  Tensor gathered = gather_rows(padded, std::move(gather_idx));
  Tensor stacked = reshape(gathered, {n_out, 27 * c_in});
  return add(matmul(stacked, weight), bias);
}

}  // namespace

SparseFeatureVolume DiffusionNet::diffuse(const SparseFeatureVolume& volume) const {
  BN_CHECK(!volume.diffused, "diffuse: volume is already diffused");
  BN_CHECK(volume.levels.size() == 1, "diffuse: expected one scattered level");
  BN_CHECK(!volume.levels[0].coords.empty(), "diffuse: empty volume");
  BN_CHECK(volume.levels[0].feats.dim(1) == config_.in_channels,
           "diffuse: volume has ", volume.levels[0].feats.dim(1),
           " channels, network expects ", config_.in_channels);

  SparseFeatureVolume out;
  out.origin = volume.origin;
  out.voxel_size = volume.voxel_size;
  out.nx = volume.nx;
  out.ny = volume.ny;
  out.nz = volume.nz;
  out.diffused = true;

  const VoxelLevel* current = &volume.levels[0];
  for (int k = 0; k < config_.levels; ++k) {
    VoxelLevel pooled_occ;
    Tensor pooled;
    pool_level(*current, pooled_occ, pooled);

    VoxelLevel conv_occ;
    Tensor feats = relu(
        sparse_conv3(pooled_occ, pooled, w_[k].tensor, b_[k].tensor, conv_occ));
    conv_occ.feats = feats;
    out.levels.push_back(std::move(conv_occ));
    current = &out.levels.back();
  }
  return out;
}

VolumeQuery query_volume(const SparseFeatureVolume& volume,
                         const std::vector<Vec3>& points) {
  BN_CHECK(!volume.levels.empty(), "query_volume: empty volume");
  const std::int64_t b = static_cast<std::int64_t>(points.size());

  VolumeQuery out;
  out.in_bounds.resize(b);
  for (std::int64_t i = 0; i < b; ++i)
    out.in_bounds[i] = volume.contains(points[i]) ? 1 : 0;

  std::vector<Tensor> per_level;
  for (const auto& level : volume.levels) {
    const std::int64_t n_occ = level.feats.dim(0);
    const std::int64_t c = level.feats.dim(1);
    Tensor padded = concat({level.feats, Tensor::zeros({1, c})}, 0);

    std::vector<std::int64_t> idx(static_cast<size_t>(b) * 8);
    std::vector<double> weights(static_cast<size_t>(b) * 8);
    for (std::int64_t i = 0; i < b; ++i) {
      const Vec3 cc =
          (points[i] - volume.origin) / level.voxel_size - Vec3(0.5, 0.5, 0.5);
      const int x0 = static_cast<int>(std::floor(cc.x()));
      const int y0 = static_cast<int>(std::floor(cc.y()));
      const int z0 = static_cast<int>(std::floor(cc.z()));
      const double fx = cc.x() - x0, fy = cc.y() - y0, fz = cc.z() - z0;
      int corner = 0;
      for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx, ++corner) {
            const int x = x0 + dx, y = y0 + dy, z = z0 + dz;
            std::int64_t row = n_occ;
            if (out.in_bounds[i] && x >= 0 && x < level.nx && y >= 0 &&
                y < level.ny && z >= 0 && z < level.nz) {
              auto it = level.rows.find(level.linear(x, y, z));
              if (it != level.rows.end()) row = it->second;
            }
            idx[i * 8 + corner] = row;
            weights[i * 8 + corner] = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) *
                                      (dz ? fz : 1 - fz);
          }
    }
    Tensor gathered = reshape(gather_rows(padded, std::move(idx)), {b, 8, c});
    Tensor w = Tensor::from_values({b, 8, 1}, std::move(weights));
    per_level.push_back(sum_axis(mul(gathered, w), 1));
  }
  out.features = per_level.size() == 1 ? per_level[0] : concat(per_level, 1);
  return out;
}

}  // namespace bodynerf
