#include "bodynerf/render.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bodynerf/textio.hpp"

namespace bodynerf {

Compositing composite(const Tensor& sigma, const Tensor& rgb,
                      const std::vector<double>& deltas,
                      const std::vector<std::int64_t>& ray_ids,
                      std::int64_t n_rays) {
  const std::int64_t m = sigma.dim(0);
  BN_CHECK(sigma.ndim() == 2 && sigma.dim(1) == 1,
           "composite: sigma must be (M,1)");
  BN_CHECK(rgb.ndim() == 2 && rgb.dim(0) == m && rgb.dim(1) == 3,
           "composite: rgb must be (M,3)");
  BN_CHECK(static_cast<std::int64_t>(deltas.size()) == m &&
               static_cast<std::int64_t>(ray_ids.size()) == m,
           "composite: deltas/ray ids must match sample count");
  for (double d : deltas) BN_CHECK(d > 0.0, "composite: deltas must be > 0");

  Compositing out;
  if (m == 0) {
    out.color = Tensor::zeros({n_rays, 3});
    out.weights = Tensor::zeros({0, 1});
    return out;
  }
  Tensor delta_t =
      Tensor::from_values({m, 1}, std::vector<double>(deltas));
  Tensor tau = mul(sigma, delta_t);
  Tensor transmittance =
      exp(neg(segment_cumsum_exclusive(tau, std::vector<std::int64_t>(ray_ids))));
  Tensor alpha = add_scalar(neg(exp(neg(tau))), 1.0);
  out.weights = mul(transmittance, alpha);
  out.color = scatter_add_rows(mul(out.weights, rgb),
                               std::vector<std::int64_t>(ray_ids), n_rays);
  return out;
}

Tensor photometric_loss(const Tensor& rendered, const Tensor& reference) {
  BN_CHECK(rendered.shape() == reference.shape(),
           "photometric_loss: shape mismatch ", shape_str(rendered.shape()),
           " vs ", shape_str(reference.shape()));
  Tensor diff = sub(rendered, reference);
  return sum_all(mul(diff, diff));
}

ObservedFrame prepare_observed_frame(const Model& model, const Image& image,
                                     const Camera& camera, const Pose& pose,
                                     const BodyTemplate& tmpl,
                                     const VisibilityOptions& vis) {
  ObservedFrame frame;
  frame.camera = camera;
  frame.transforms = forward_kinematics(tmpl, pose);
  frame.posed_vertices = pose_mesh(tmpl, frame.transforms);
  frame.visibility =
      rasterize_visibility(frame.posed_vertices, tmpl.faces, camera, vis);

  std::vector<double> chw(static_cast<size_t>(3) * image.height * image.width);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c)
        chw[(c * image.height + y) * image.width + x] = image.pixel(x, y)[c];
  frame.fmap = model.encoder.encode(
      Tensor::from_values({3, image.height, image.width}, std::move(chw)));
  return frame;
}

TargetContext build_target_context(const Model& model,
                                   const std::vector<ObservedFrame>& frames,
                                   const BodyTemplate& tmpl, const Pose& pose,
                                   const DistanceGrid* distance_grid,
                                   double voxel_size, double bbox_margin) {
  TargetContext ctx;
  ctx.tmpl = &tmpl;
  ctx.pose = pose;
  ctx.transforms = forward_kinematics(tmpl, pose);
  ctx.posed_vertices = pose_mesh(tmpl, ctx.transforms);
  ctx.distance_grid = distance_grid;

  AggregatedFeatures agg = aggregate_vertex_features(frames);
  ctx.never_visible = agg.never_visible;

  Vec3 lo = ctx.posed_vertices[0], hi = ctx.posed_vertices[0];
  for (const auto& v : ctx.posed_vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  lo -= Vec3::Constant(bbox_margin);
  hi += Vec3::Constant(bbox_margin);

  SparseFeatureVolume scattered = scatter_to_voxels(
      agg.features, ctx.posed_vertices, lo, hi, voxel_size);
  ctx.volume = model.diffusion.diffuse(scattered);
  return ctx;
}

PointOutputs evaluate_points(const Model& model, const TargetContext& target,
                             const std::vector<ObservedFrame>& frames,
                             const std::vector<Vec3>& points,
                             const std::vector<Vec3>& directions,
                             int camera_id, RenderStats* stats,
                             bool with_color) {
  const std::int64_t b = static_cast<std::int64_t>(points.size());
  BN_CHECK(directions.size() == points.size(),
           "evaluate_points: direction count mismatch");
  if (stats) stats->network_points += b;

  VolumeQuery vq = query_volume(target.volume, points);

  InitialWeights iw =
      initial_blend_weights(points, target.posed_vertices, *target.tmpl);
  Tensor w_g = model.refiner.refine(iw.w_s, target.pose, iw.distance);
  TemporalFeatures tf =
      gather_temporal_features(points, w_g, target.transforms, frames);
  Tensor temporal = stack_temporal(tf.features);

  Tensor fe_density = vq.features;
  Tensor fe_color = vq.features;
  if (model.config.use_attention) {
    fe_density = model.attn_density.enhance(vq.features, temporal, tf.valid);
    fe_color = model.attn_color.enhance(vq.features, temporal, tf.valid);
  }

  PointOutputs out;
  out.sigma = softplus(model.density_mlp.forward(fe_density));
  if (with_color) {
    Tensor pe = positional_encode(directions, model.config.pe_bands);
    Tensor latent = model.latents.lookup(camera_id, b);
    out.rgb =
        sigmoid(model.color_mlp.forward(concat({fe_color, pe, latent}, 1)));
  }
  return out;
}

Tensor render_rays(const Model& model, const TargetContext& target,
                   const std::vector<ObservedFrame>& frames,
                   const PointBatch& batch, int camera_id,
                   RenderStats* stats) {
  if (batch.points.empty()) return Tensor::zeros({batch.n_rays, 3});
  PointOutputs po = evaluate_points(model, target, frames, batch.points,
                                    batch.directions, camera_id, stats);
  return composite(po.sigma, po.rgb, batch.deltas, batch.ray_ids,
                   batch.n_rays).color;
}

namespace {

// Screen-space bounding box of the volume's box, padded by a couple of
// pixels; rays outside it cannot hit the sampling band.
struct ScreenBox {
  int x0, x1, y0, y1;
  bool empty;
};

ScreenBox screen_bbox(const SparseFeatureVolume& volume, const Camera& cam) {
  const Vec3 lo = volume.box_lo(), hi = volume.box_hi();
  double u0 = 1e300, u1 = -1e300, v0 = 1e300, v1 = -1e300;
  bool any = false;
  for (int i = 0; i < 8; ++i) {
    const Vec3 corner(i & 1 ? hi.x() : lo.x(), i & 2 ? hi.y() : lo.y(),
                      i & 4 ? hi.z() : lo.z());
    const Projection p = project(corner, cam);
    if (!p.ok) continue;
    any = true;
    u0 = std::min(u0, p.u);
    u1 = std::max(u1, p.u);
    v0 = std::min(v0, p.v);
    v1 = std::max(v1, p.v);
  }
  ScreenBox box{};
  if (!any) {
    box.empty = true;
    return box;
  }
  box.empty = false;
  box.x0 = std::max(0, static_cast<int>(std::floor(u0)) - 2);
  box.x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(u1)) + 2);
  box.y0 = std::max(0, static_cast<int>(std::floor(v0)) - 2);
  box.y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(v1)) + 2);
  if (box.x0 > box.x1 || box.y0 > box.y1) box.empty = true;
  return box;
}

}  // namespace

Image render_image(const Model& model, const TargetContext& target,
                   const std::vector<ObservedFrame>& frames,
                   const Camera& camera, const RenderImageOptions& options,
                   RenderStats* stats) {
  BN_CHECK(target.distance_grid != nullptr,
           "render_image: target context has no distance grid");
  Image out(camera.width, camera.height, 0.0);
  if (stats) stats->rays += static_cast<std::int64_t>(camera.width) * camera.height;

  const ScreenBox box = screen_bbox(target.volume, camera);
  if (box.empty) return out;

  PointBatch batch;
  std::vector<std::pair<int, int>> batch_pixels;
  auto flush = [&]() {
    if (batch_pixels.empty()) return;
    Tensor colors = render_rays(model, target, frames, batch,
                                camera.camera_id, stats);
    for (size_t r = 0; r < batch_pixels.size(); ++r) {
      auto [x, y] = batch_pixels[r];
      for (int c = 0; c < 3; ++c)
        out.pixel(x, y)[c] = std::clamp(colors[r * 3 + c], 0.0, 1.0);
    }
    batch = PointBatch{};
    batch_pixels.clear();
  };

  for (int y = box.y0; y <= box.y1; ++y)
    for (int x = box.x0; x <= box.x1; ++x) {
      const Ray ray = generate_ray(camera, x + 0.5, y + 0.5);
      const auto samples = surface_guided_sample(ray, *target.distance_grid,
                                                 options.sampler, nullptr);
      if (samples.empty()) continue;
      if (stats) stats->rays_with_samples += 1;
      const std::int64_t rid = batch.n_rays++;
      for (const auto& s : samples) {
        batch.points.push_back(ray.origin + s.t * ray.direction);
        batch.directions.push_back(ray.direction);
        batch.deltas.push_back(s.delta);
        batch.ray_ids.push_back(rid);
      }
      batch_pixels.emplace_back(x, y);
      if (static_cast<int>(batch.points.size()) >= options.batch_points)
        flush();
    }
  flush();
  return out;
}

DensityGrid dump_density_grid(const Model& model, const TargetContext& target,
                              const std::vector<ObservedFrame>& frames) {
  DensityGrid grid;
  grid.origin = target.volume.origin;
  grid.voxel_size = target.volume.voxel_size;
  grid.nx = target.volume.nx;
  grid.ny = target.volume.ny;
  grid.nz = target.volume.nz;
  grid.values.resize(static_cast<size_t>(grid.nx) * grid.ny * grid.nz);

  const Vec3 dir(0, 0, 1);  // density ignores view direction
  std::vector<Vec3> points;
  std::vector<size_t> flat;
  auto flush = [&]() {
    if (points.empty()) return;
    PointOutputs po = evaluate_points(model, target, frames, points,
                                      std::vector<Vec3>(points.size(), dir),
                                      /*camera_id=*/-1, nullptr,
                                      /*with_color=*/false);
    for (size_t i = 0; i < flat.size(); ++i)
      grid.values[flat[i]] = po.sigma[static_cast<std::int64_t>(i)];
    points.clear();
    flat.clear();
  };
  size_t idx = 0;
  for (int z = 0; z < grid.nz; ++z)
    for (int y = 0; y < grid.ny; ++y)
      for (int x = 0; x < grid.nx; ++x, ++idx) {
        points.push_back(grid.origin + grid.voxel_size *
                                           Vec3(x + 0.5, y + 0.5, z + 0.5));
        flat.push_back(idx);
        if (points.size() >= 4096) flush();
      }
  flush();
  return grid;
}

void save_density_grid(const std::string& path, const DensityGrid& grid) {
  std::ostringstream os;
  os << "bodynerf-density v1\n";
  os << "origin " << fmt_double(grid.origin.x()) << " "
     << fmt_double(grid.origin.y()) << " " << fmt_double(grid.origin.z())
     << "\n";
  os << "voxel_size " << fmt_double(grid.voxel_size) << "\n";
  os << "dims " << grid.nx << " " << grid.ny << " " << grid.nz << "\n";
  os << "values " << grid.values.size() << "\n";
  for (double v : grid.values) os << fmt_double(v) << "\n";
  write_text_file(path, os.str());
}

}  // namespace bodynerf
