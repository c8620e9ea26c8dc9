#include "bodynerf/deformation.hpp"

#include <cmath>

namespace bodynerf {

InitialWeights initial_blend_weights(const std::vector<Vec3>& points,
                                     const std::vector<Vec3>& posed_vertices,
                                     const BodyTemplate& tmpl) {
  BN_CHECK(!posed_vertices.empty(), "initial_blend_weights: empty mesh");
  BN_CHECK(static_cast<std::int64_t>(posed_vertices.size()) ==
               tmpl.vertex_count(),
           "initial_blend_weights: posed mesh does not match template");
  const std::int64_t b = static_cast<std::int64_t>(points.size());
  const std::int64_t n = tmpl.joint_count();

  InitialWeights out;
  out.nearest.resize(b);
  std::vector<double> w(static_cast<size_t>(b) * n);
  std::vector<double> d(b);
  for (std::int64_t i = 0; i < b; ++i) {
    BN_CHECK(points[i].allFinite(), "initial_blend_weights: non-finite point");
    std::int64_t best = 0;
    double best_d2 = (points[i] - posed_vertices[0]).squaredNorm();
    for (size_t v = 1; v < posed_vertices.size(); ++v) {
      const double d2 = (points[i] - posed_vertices[v]).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = static_cast<std::int64_t>(v);
      }
    }
    out.nearest[i] = best;
    d[i] = std::sqrt(best_d2);
    const double* row = tmpl.weight_row(best);
    for (std::int64_t j = 0; j < n; ++j) w[i * n + j] = row[j];
  }
  out.w_s = Tensor::from_values({b, n}, std::move(w));
  out.distance = Tensor::from_values({b, 1}, std::move(d));
  return out;
}

WeightRefiner::WeightRefiner(int n_parts,
                             const std::vector<std::int64_t>& hidden, Rng& rng)
    : n_parts_(n_parts) {
  std::vector<std::int64_t> dims;
  dims.push_back(n_parts + 3 * n_parts + 1);  // w_s ++ flattened pose ++ d
  for (auto h : hidden) dims.push_back(h);
  dims.push_back(n_parts);
  // Zero-initialized final layer: refinement starts as softmax(w_s).
  mlp_ = Mlp("refiner", std::move(dims), rng, /*zero_last=*/true);
}

Tensor WeightRefiner::refine(const Tensor& w_s, const Pose& target_pose,
                             const Tensor& distance) const {
  BN_CHECK(w_s.ndim() == 2 && w_s.dim(1) == n_parts_,
           "refine: w_s must be (B,", n_parts_, "), got ",
           shape_str(w_s.shape()));
  BN_CHECK(static_cast<int>(target_pose.joint_rotations.size()) == n_parts_,
           "refine: pose has ", target_pose.joint_rotations.size(),
           " rotations for ", n_parts_, " parts");
  const std::int64_t b = w_s.dim(0);

  std::vector<double> pose_row(static_cast<size_t>(b) * 3 * n_parts_);
  for (std::int64_t i = 0; i < b; ++i)
    for (int j = 0; j < n_parts_; ++j) {
      const Vec3& aa = target_pose.joint_rotations[j];
      pose_row[(i * n_parts_ + j) * 3 + 0] = aa.x();
      pose_row[(i * n_parts_ + j) * 3 + 1] = aa.y();
      pose_row[(i * n_parts_ + j) * 3 + 2] = aa.z();
    }
  Tensor pose_t =
      Tensor::from_values({b, 3 * n_parts_}, std::move(pose_row));
  Tensor input = concat({w_s, pose_t, distance}, 1);
  return softmax_last(add(w_s, mlp_.forward(input)));
}

std::vector<Mat4> relative_part_transforms(const PartTransforms& target,
                                           const PartTransforms& observed) {
  BN_CHECK(target.count() == observed.count(),
           "relative_part_transforms: part count mismatch ", target.count(),
           " vs ", observed.count());
  std::vector<Mat4> rel(target.count());
  for (std::int64_t j = 0; j < target.count(); ++j) {
    const Mat3 r = target[j].topLeftCorner<3, 3>();
    BN_CHECK(std::abs(r.determinant()) > 1e-9,
             "relative_part_transforms: singular target transform for part ", j);
    Mat4 inv = Mat4::Identity();
    inv.topLeftCorner<3, 3>() = r.transpose();
    inv.topRightCorner<3, 1>() = -r.transpose() * target[j].topRightCorner<3, 1>();
    rel[j] = observed[j] * inv;
  }
  return rel;
}

Tensor warp_with_relative(const Tensor& w_g, const std::vector<Vec3>& points,
                          const std::vector<Mat4>& relative) {
  const std::int64_t b = static_cast<std::int64_t>(points.size());
  const std::int64_t n = static_cast<std::int64_t>(relative.size());
  BN_CHECK(w_g.ndim() == 2 && w_g.dim(0) == b && w_g.dim(1) == n,
           "warp: weights must be (", b, ",", n, "), got ",
           shape_str(w_g.shape()));

  // Per-point constants G[b,j,:] = (T_o T_g^-1) p_b; the warp is then a
  // weight-blend, so gradients only flow through w_g.
  std::vector<double> g(static_cast<size_t>(b) * n * 3);
  for (std::int64_t i = 0; i < b; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      const Mat4& m = relative[j];
      const Vec3 p = m.topLeftCorner<3, 3>() * points[i] +
                     m.topRightCorner<3, 1>();
      g[(i * n + j) * 3 + 0] = p.x();
      g[(i * n + j) * 3 + 1] = p.y();
      g[(i * n + j) * 3 + 2] = p.z();
    }
  Tensor candidates = Tensor::from_values({b, n, 3}, std::move(g));
  return sum_axis(mul(reshape(w_g, {b, n, 1}), candidates), 1);
}

Tensor warp_to_observation(const Tensor& w_g, const std::vector<Vec3>& points,
                           const PartTransforms& target,
                           const PartTransforms& observed) {
  return warp_with_relative(w_g, points, relative_part_transforms(target, observed));
}

ProjectedPoints project_points(const Tensor& points, const Camera& camera) {
  BN_CHECK(points.ndim() == 2 && points.dim(1) == 3,
           "project_points: points must be (B,3)");
  const std::int64_t b = points.dim(0);

  std::vector<double> rt(9), tr(3), m(6), ez(3);
  Eigen::Map<Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(rt.data()) =
      camera.rotation.transpose();
  Eigen::Map<Vec3>(tr.data()) = camera.translation;
  // Columns: (fx*X + cx*Z, fy*Y + cy*Z).
  m = {camera.fx, 0.0, 0.0, camera.fy, camera.cx, camera.cy};
  ez = {0.0, 0.0, 1.0};

  Tensor cam = add(matmul(points, Tensor::from_values({3, 3}, std::move(rt))),
                   Tensor::from_values({3}, std::move(tr)));
  Tensor numer = matmul(cam, Tensor::from_values({3, 2}, std::move(m)));
  Tensor z = matmul(cam, Tensor::from_values({3, 1}, std::move(ez)));

  ProjectedPoints out;
  out.in_front.resize(b);
  std::vector<double> keep(b), fill(b);
  for (std::int64_t i = 0; i < b; ++i) {
    const bool front = z[i] > 1e-6;
    out.in_front[i] = front ? 1 : 0;
    keep[i] = front ? 1.0 : 0.0;
    fill[i] = front ? 0.0 : 1.0;
  }
  // Behind-camera rows divide by 1 instead; their uv is discarded by masks.
  Tensor z_safe = add(mul(z, Tensor::from_values({b, 1}, std::move(keep))),
                      Tensor::from_values({b, 1}, std::move(fill)));
  out.uv = div(numer, z_safe);
  return out;
}

TemporalFeatures gather_temporal_features(
    const std::vector<Vec3>& points, const Tensor& w_g,
    const PartTransforms& target, const std::vector<ObservedFrame>& frames) {
  TemporalFeatures out;
  const std::int64_t b = static_cast<std::int64_t>(points.size());
  for (const ObservedFrame& frame : frames) {
    Tensor warped =
        warp_to_observation(w_g, points, target, frame.transforms);
    ProjectedPoints proj = project_points(warped, frame.camera);
    PixelSamples samples = sample_pixel_feature(frame.fmap, proj.uv);

    std::vector<char> valid(b);
    std::vector<double> mask(b);
    for (std::int64_t i = 0; i < b; ++i) {
      valid[i] = proj.in_front[i] && samples.in_image[i] ? 1 : 0;
      mask[i] = valid[i] ? 1.0 : 0.0;
    }
    // sample_pixel_feature already zeroed out-of-image rows; this also zeroes
    // behind-camera rows.
    out.features.push_back(
        mul(samples.features, Tensor::from_values({b, 1}, std::move(mask))));
    out.valid.push_back(std::move(valid));
  }
  return out;
}

}  // namespace bodynerf
