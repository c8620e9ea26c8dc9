#include "bodynerf/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include "bodynerf/metrics.hpp"
#include "bodynerf/textio.hpp"

namespace bodynerf {

namespace {

std::vector<std::int64_t> parse_int_list(const std::string& s) {
  std::vector<std::int64_t> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(std::stoll(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

}  // namespace

bool TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "mode") {
    if (value == "MVT" || value == "mvt")
      mode = TrainMode::MVT;
    else if (value == "MoT" || value == "mot")
      mode = TrainMode::MoT;
    else
      fail("config: mode must be MVT or MoT, got '", value, "'");
  } else if (key == "input_frames") {
    input_frames = std::stoi(value);
  } else if (key == "rays_per_batch") {
    rays_per_batch = std::stoi(value);
  } else if (key == "samples_per_ray") {
    samples_per_ray = std::stoi(value);
  } else if (key == "iterations") {
    iterations = std::stoll(value);
  } else if (key == "learning_rate") {
    learning_rate = std::stod(value);
  } else if (key == "voxel_size") {
    voxel_size = std::stod(value);
  } else if (key == "threshold") {
    threshold = std::stod(value);
  } else if (key == "seed") {
    seed = std::stoull(value);
    seed_set = true;
  } else if (key == "criterion") {
    if (value == "evenly")
      criterion = SelectionCriterion::Evenly;
    else if (value == "vertex-distance")
      criterion = SelectionCriterion::VertexDistance;
    else
      fail("config: criterion must be evenly or vertex-distance, got '",
           value, "'");
  } else if (key == "eval_every") {
    eval_every = std::stoi(value);
  } else if (key == "eval_frames") {
    eval_frames = std::stoi(value);
  } else if (key == "checkpoint_every") {
    checkpoint_every = std::stoi(value);
  } else if (key == "early_stop_psnr") {
    early_stop_psnr = std::stod(value);
  } else if (key == "log_window") {
    log_window = std::stoi(value);
  } else if (key == "raster_resolution") {
    raster_resolution = std::stoi(value);
  } else if (key == "out") {
    out_checkpoint = value;
  } else if (key == "sequence") {
    sequence_dirs.push_back(value);
  } else if (key == "feature_channels") {
    model.feature_channels = std::stoi(value);
  } else if (key == "volume_channels") {
    model.volume_channels = std::stoi(value);
  } else if (key == "attn_dim") {
    model.attn_dim = std::stoi(value);
  } else if (key == "latent_dim") {
    model.latent_dim = std::stoi(value);
  } else if (key == "pe_bands") {
    model.pe_bands = std::stoi(value);
  } else if (key == "use_attention") {
    model.use_attention = value != "0" && value != "false";
  } else if (key == "encoder_channels") {
    auto v = parse_int_list(value);
    BN_CHECK(v.size() == 4, "config: encoder_channels needs 4 values");
    for (int i = 0; i < 4; ++i)
      model.encoder_channels[i] = static_cast<int>(v[i]);
  } else if (key == "refiner_hidden") {
    model.refiner_hidden = parse_int_list(value);
  } else if (key == "density_hidden") {
    model.density_hidden = parse_int_list(value);
  } else if (key == "color_hidden") {
    model.color_hidden = parse_int_list(value);
  } else {
    return false;
  }
  return true;
}

void TrainConfig::validate() const {
  BN_CHECK(seed_set, "config: seed is mandatory");
  BN_CHECK(input_frames >= 1, "config: input_frames must be >= 1");
  BN_CHECK(threshold > 0.0, "config: threshold must be > 0");
  BN_CHECK(voxel_size > 0.0, "config: voxel_size must be > 0");
  BN_CHECK(rays_per_batch >= 1 && samples_per_ray >= 1,
           "config: ray batch settings must be positive");
  BN_CHECK(iterations >= 1, "config: iterations must be >= 1");
  BN_CHECK(log_window >= 1, "config: log_window must be >= 1");
}

TrainConfig load_train_config(const std::string& path) {
  TrainConfig cfg;
  TextDoc doc = TextDoc::read_file(path);
  while (!doc.eof()) {
    auto line = doc.take();
    if (line.tokens.size() != 2)
      doc.fail_at(line, "expected 'key value'");
    if (!cfg.set(line.tokens[0], line.tokens[1]))
      doc.fail_at(line, "unknown config key '", line.tokens[0], "'");
  }
  return cfg;
}

void compute_normalization(const std::vector<Sequence>& sequences,
                           std::array<double, 3>& mean,
                           std::array<double, 3>& stddev) {
  double sum[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
  std::int64_t count = 0;
  for (const auto& seq : sequences)
    for (int fi : seq.train_frames()) {
      const Image& img = seq.frames[fi].image;
      for (size_t i = 0; i < img.data.size(); i += 3)
        for (int c = 0; c < 3; ++c) {
          sum[c] += img.data[i + c];
          sq[c] += img.data[i + c] * img.data[i + c];
        }
      count += static_cast<std::int64_t>(img.data.size() / 3);
    }
  BN_CHECK(count > 0, "compute_normalization: no train images");
  for (int c = 0; c < 3; ++c) {
    mean[c] = sum[c] / count;
    const double var = std::max(sq[c] / count - mean[c] * mean[c], 0.0);
    stddev[c] = std::max(std::sqrt(var), 1e-3);
  }
}

namespace {

struct FrameGeom {
  PartTransforms transforms;
  std::vector<Vec3> posed;
  std::vector<bool> visibility;
  Tensor image_chw;
};

struct SequenceCache {
  std::vector<FrameGeom> frames;
  std::vector<std::unique_ptr<DistanceGrid>> grids;  // lazy, target frames only
};

Tensor image_to_chw(const Image& img) {
  std::vector<double> chw(static_cast<size_t>(3) * img.height * img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        chw[(c * img.height + y) * img.width + x] = img.pixel(x, y)[c];
  return Tensor::from_values({3, img.height, img.width}, std::move(chw));
}

SequenceCache build_cache(const Sequence& seq, int raster_resolution) {
  SequenceCache cache;
  cache.frames.resize(seq.frames.size());
  cache.grids.resize(seq.frames.size());
  VisibilityOptions vis;
  vis.resolution = raster_resolution;
  for (size_t i = 0; i < seq.frames.size(); ++i) {
    FrameGeom& g = cache.frames[i];
    g.transforms = forward_kinematics(seq.tmpl, seq.frames[i].pose);
    g.posed = pose_mesh(seq.tmpl, g.transforms);
    g.visibility =
        rasterize_visibility(g.posed, seq.tmpl.faces, seq.frames[i].camera, vis);
    g.image_chw = image_to_chw(seq.frames[i].image);
  }
  return cache;
}

ObservedFrame make_observed(const Model& model, const Sequence& seq,
                            const SequenceCache& cache, int frame) {
  ObservedFrame f;
  f.camera = seq.frames[frame].camera;
  f.transforms = cache.frames[frame].transforms;
  f.posed_vertices = cache.frames[frame].posed;
  f.visibility = cache.frames[frame].visibility;
  f.fmap = model.encoder.encode(cache.frames[frame].image_chw);
  return f;
}

const DistanceGrid& cached_grid(const Sequence& seq, SequenceCache& cache,
                                int frame, double threshold,
                                double voxel_size) {
  if (!cache.grids[frame]) {
    const auto& posed = cache.frames[frame].posed;
    Vec3 lo = posed[0], hi = posed[0];
    for (const auto& v : posed) {
      lo = lo.cwiseMin(v);
      hi = hi.cwiseMax(v);
    }
    const double pad = threshold + 3.0 * voxel_size;
    cache.grids[frame] = std::make_unique<DistanceGrid>(build_distance_grid(
        posed, seq.tmpl.faces, lo - Vec3::Constant(pad),
        hi + Vec3::Constant(pad), voxel_size));
  }
  return *cache.grids[frame];
}

struct ScreenBounds {
  int x0, x1, y0, y1;
};

ScreenBounds body_screen_bounds(const std::vector<Vec3>& posed,
                                const Camera& cam) {
  double u0 = 1e300, u1 = -1e300, v0 = 1e300, v1 = -1e300;
  for (const auto& p : posed) {
    const Projection pr = project(p, cam);
    if (!pr.ok) continue;
    u0 = std::min(u0, pr.u);
    u1 = std::max(u1, pr.u);
    v0 = std::min(v0, pr.v);
    v1 = std::max(v1, pr.v);
  }
  ScreenBounds b;
  if (u0 > u1) {  // body fully behind the camera; fall back to the image
    b.x0 = 0;
    b.x1 = cam.width - 1;
    b.y0 = 0;
    b.y1 = cam.height - 1;
    return b;
  }
  const double pad_u = 0.06 * (u1 - u0) + 3.0;
  const double pad_v = 0.06 * (v1 - v0) + 3.0;
  b.x0 = std::clamp(static_cast<int>(std::floor(u0 - pad_u)), 0, cam.width - 1);
  b.x1 = std::clamp(static_cast<int>(std::ceil(u1 + pad_u)), 0, cam.width - 1);
  b.y0 = std::clamp(static_cast<int>(std::floor(v0 - pad_v)), 0, cam.height - 1);
  b.y1 = std::clamp(static_cast<int>(std::ceil(v1 + pad_v)), 0, cam.height - 1);
  return b;
}

std::map<std::string, std::string> train_meta(const TrainConfig& cfg) {
  std::map<std::string, std::string> meta;
  meta["train.mode"] = cfg.mode == TrainMode::MVT ? "MVT" : "MoT";
  meta["train.input_frames"] = std::to_string(cfg.input_frames);
  meta["train.samples_per_ray"] = std::to_string(cfg.samples_per_ray);
  meta["train.voxel_size"] = fmt_double(cfg.voxel_size);
  meta["train.threshold"] = fmt_double(cfg.threshold);
  meta["train.raster_resolution"] = std::to_string(cfg.raster_resolution);
  meta["train.criterion"] =
      cfg.criterion == SelectionCriterion::Evenly ? "evenly" : "vertex-distance";
  return meta;
}

}  // namespace

EvalResult evaluate_heldout(const Model& model, const Sequence& input_seq,
                            const Sequence& target_seq,
                            const EvalOptions& options,
                            std::vector<Image>* renders) {
  const bool same_video = &input_seq == &target_seq ||
                          (input_seq.identity == target_seq.identity &&
                           input_seq.camera_id() == target_seq.camera_id());
  EvalResult result;
  std::vector<int> targets = target_seq.heldout_frames();
  if (options.max_frames >= 0 &&
      static_cast<int>(targets.size()) > options.max_frames)
    targets.resize(options.max_frames);
  BN_CHECK(!targets.empty(), "evaluate_heldout: target sequence has no held-out frames");

  for (int ti : targets) {
    const Frame& target = target_seq.frames[ti];
    const std::vector<int> inputs =
        select_frames(input_seq, target.pose, options.input_frames,
                      options.criterion,
                      same_video ? target.time_index : -1);
    VisibilityOptions vis;
    vis.resolution = options.raster_resolution;
    std::vector<ObservedFrame> observed;
    for (int fi : inputs)
      observed.push_back(prepare_observed_frame(
          model, input_seq.frames[fi].image, input_seq.frames[fi].camera,
          input_seq.frames[fi].pose, input_seq.tmpl, vis));

    const PartTransforms tt = forward_kinematics(target_seq.tmpl, target.pose);
    const std::vector<Vec3> posed = pose_mesh(target_seq.tmpl, tt);
    Vec3 lo = posed[0], hi = posed[0];
    for (const auto& v : posed) {
      lo = lo.cwiseMin(v);
      hi = hi.cwiseMax(v);
    }
    const double pad = options.threshold + 3.0 * options.voxel_size;
    const DistanceGrid grid = build_distance_grid(
        posed, target_seq.tmpl.faces, lo - Vec3::Constant(pad),
        hi + Vec3::Constant(pad), options.voxel_size);

    TargetContext ctx = build_target_context(
        model, observed, target_seq.tmpl, target.pose, &grid,
        options.voxel_size, options.threshold + options.voxel_size);

    RenderImageOptions ro;
    ro.sampler.threshold = options.threshold;
    ro.sampler.n_samples = options.samples_per_ray;
    const Image render = render_image(model, ctx, observed, target.camera, ro);

    EvalRow row;
    row.frame_index = ti;
    row.time_index = target.time_index;
    row.psnr = psnr(render, target.image);
    row.ssim = ssim(render, target.image);
    result.rows.push_back(row);
    if (renders) renders->push_back(render);
  }
  for (const auto& r : result.rows) {
    result.mean_psnr += r.psnr;
    result.mean_ssim += r.ssim;
  }
  result.mean_psnr /= static_cast<double>(result.rows.size());
  result.mean_ssim /= static_cast<double>(result.rows.size());
  return result;
}

Model train(const TrainConfig& config, const std::vector<Sequence>& sequences,
            TrainResult* result, std::ostream* log,
            const IterationCallback& callback) {
  config.validate();
  BN_CHECK(!sequences.empty(), "train: no sequences");
  for (const auto& s : sequences) s.validate();
  const int n_parts = static_cast<int>(sequences[0].tmpl.joint_count());
  for (const auto& s : sequences)
    BN_CHECK(s.tmpl.joint_count() == n_parts,
             "train: sequences disagree on joint count");

  // Target pools. MoT targets come from the sequence itself; MVT pairs a
  // target view with a different input view of the same identity.
  std::vector<std::pair<int, int>> mvt_pairs;  // (target seq, input seq)
  if (config.mode == TrainMode::MVT) {
    std::map<std::string, std::vector<int>> identities;
    for (size_t i = 0; i < sequences.size(); ++i)
      identities[sequences[i].identity].push_back(static_cast<int>(i));
    for (const auto& [id, seqs] : identities) {
      for (int target : seqs)
        for (int input : seqs) {
          if (target == input) continue;
          if (sequences[target].train_frames().empty()) continue;
          if (static_cast<int>(sequences[input].train_frames().size()) <
              config.input_frames)
            continue;
          mvt_pairs.emplace_back(target, input);
        }
    }
    BN_CHECK(!mvt_pairs.empty(),
             "train: MVT needs identities with at least two views");
  } else {
    for (const auto& s : sequences)
      BN_CHECK(static_cast<int>(s.train_frames().size()) > config.input_frames,
               "train: MoT sequence '", s.identity,
               "' needs more train frames than input_frames");
  }

  // Latent codes exist for cameras that can appear as training targets.
  std::vector<int> camera_ids;
  if (config.mode == TrainMode::MVT) {
    for (const auto& [t, i] : mvt_pairs)
      camera_ids.push_back(sequences[t].camera_id());
  } else {
    for (const auto& s : sequences) camera_ids.push_back(s.camera_id());
  }

  ModelConfig mc = config.model;
  mc.n_parts = n_parts;

  Rng root(config.seed);
  const std::uint64_t model_seed = root.next_u64();
  Rng data_rng(root.next_u64());
  Rng ray_rng(root.next_u64());

  Model model(mc, camera_ids, model_seed);
  std::array<double, 3> mean, stddev;
  compute_normalization(sequences, mean, stddev);
  model.encoder.set_normalization(mean, stddev);
  std::vector<Parameter*> params = model.parameters();

  std::vector<SequenceCache> caches;
  for (const auto& s : sequences)
    caches.push_back(build_cache(s, config.raster_resolution));

  AdamOptions adam;
  adam.lr = config.learning_rate;

  TrainResult local;
  TrainResult& res = result ? *result : local;
  double window_sum = 0.0;
  bool stop = false;

  auto periodic_eval = [&]() -> std::pair<double, double> {
    // First viable (input, target) pair with held-out frames.
    const Sequence* input = nullptr;
    const Sequence* target = nullptr;
    if (config.mode == TrainMode::MVT) {
      for (size_t t = 0; t < sequences.size() && !target; ++t) {
        if (sequences[t].heldout_frames().empty()) continue;
        for (size_t i = 0; i < sequences.size(); ++i) {
          if (i == t || sequences[i].identity != sequences[t].identity)
            continue;
          if (static_cast<int>(sequences[i].train_frames().size()) <
              config.input_frames)
            continue;
          input = &sequences[i];
          target = &sequences[t];
          break;
        }
      }
    } else {
      for (const auto& s : sequences)
        if (!s.heldout_frames().empty()) {
          input = &s;
          target = &s;
          break;
        }
    }
    if (!target) return {-1.0, -1.0};
    EvalOptions eo;
    eo.input_frames = config.input_frames;
    eo.criterion = config.criterion;
    eo.voxel_size = config.voxel_size;
    eo.threshold = config.threshold;
    eo.samples_per_ray = config.samples_per_ray;
    eo.raster_resolution = config.raster_resolution;
    eo.max_frames = config.eval_frames;
    const EvalResult er = evaluate_heldout(model, *input, *target, eo);
    return {er.mean_psnr, er.mean_ssim};
  };

  for (std::int64_t it = 1; it <= config.iterations && !stop; ++it) {
    int target_si, input_si;
    if (config.mode == TrainMode::MVT) {
      const auto& pair = mvt_pairs[data_rng.uniform_index(mvt_pairs.size())];
      target_si = pair.first;
      input_si = pair.second;
    } else {
      target_si = static_cast<int>(data_rng.uniform_index(sequences.size()));
      input_si = target_si;
    }
    const Sequence& target_seq = sequences[target_si];
    const Sequence& input_seq = sequences[input_si];
    const std::vector<int> train_pool = target_seq.train_frames();
    const int target_fi =
        train_pool[data_rng.uniform_index(train_pool.size())];
    const Frame& target = target_seq.frames[target_fi];

    const int exclude_time =
        target_si == input_si ? target.time_index : -1;
    const std::vector<int> inputs =
        select_frames(input_seq, target.pose, config.input_frames,
                      config.criterion, exclude_time);

    std::vector<ObservedFrame> observed;
    observed.reserve(inputs.size());
    for (int fi : inputs)
      observed.push_back(
          make_observed(model, input_seq, caches[input_si], fi));

    const DistanceGrid& grid =
        cached_grid(target_seq, caches[target_si], target_fi,
                    config.threshold, config.voxel_size);
    TargetContext ctx = build_target_context(
        model, observed, target_seq.tmpl, target.pose, &grid,
        config.voxel_size, config.threshold + config.voxel_size);

    const ScreenBounds bounds =
        body_screen_bounds(ctx.posed_vertices, target.camera);
    SamplerOptions so;
    so.threshold = config.threshold;
    so.n_samples = config.samples_per_ray;

    PointBatch batch;
    std::vector<double> gt;
    gt.reserve(static_cast<size_t>(config.rays_per_batch) * 3);
    for (int r = 0; r < config.rays_per_batch; ++r) {
      const int x = bounds.x0 + static_cast<int>(ray_rng.uniform_index(
                                    bounds.x1 - bounds.x0 + 1));
      const int y = bounds.y0 + static_cast<int>(ray_rng.uniform_index(
                                    bounds.y1 - bounds.y0 + 1));
      const Ray ray = generate_ray(target.camera, x + 0.5, y + 0.5);
      const auto samples = surface_guided_sample(ray, grid, so, &ray_rng);
      const std::int64_t rid = batch.n_rays++;
      for (const auto& s : samples) {
        batch.points.push_back(ray.origin + s.t * ray.direction);
        batch.directions.push_back(ray.direction);
        batch.deltas.push_back(s.delta);
        batch.ray_ids.push_back(rid);
      }
      const double* px = target.image.pixel(x, y);
      gt.insert(gt.end(), {px[0], px[1], px[2]});
    }

    Tensor rendered = render_rays(model, ctx, observed, batch,
                                  target.camera.camera_id, nullptr);
    Tensor loss = photometric_loss(
        rendered,
        Tensor::from_values({config.rays_per_batch, 3}, std::move(gt)));

    const double loss_value = loss.scalar_value();
    if (!std::isfinite(loss_value)) {
      std::ostringstream os;
      os << "train: non-finite loss " << loss_value << " at iteration " << it
         << " (target seq " << target_si << ", frame " << target_fi
         << ", camera " << target.camera.camera_id << ")";
      throw Error(os.str());
    }

    loss.backward();
    adam_step(params, adam);

    res.loss_curve.push_back(loss_value);
    window_sum += loss_value;
    if (it % config.log_window == 0) {
      res.window_means.push_back(window_sum / config.log_window);
      if (log)
        (*log) << "iter " << it << " loss(window) "
               << res.window_means.back() << "\n";
      window_sum = 0.0;
    }

    if (callback) {
      IterationInfo info;
      info.iteration = it;
      info.target_sequence = target_si;
      info.target_frame = target_fi;
      info.input_sequence = input_si;
      info.input_frame_indices = inputs;
      info.input_camera_id = input_seq.camera_id();
      info.target_camera_id = target.camera.camera_id;
      info.loss = loss_value;
      callback(info);
    }

    if (config.eval_every > 0 && it % config.eval_every == 0) {
      const auto [p, s] = periodic_eval();
      res.final_psnr = p;
      res.final_ssim = s;
      if (log) (*log) << "iter " << it << " heldout psnr " << p << " ssim "
                      << s << "\n";
      if (config.early_stop_psnr > 0.0 && p >= config.early_stop_psnr) {
        stop = true;
        res.early_stopped = true;
      }
    }
    if (config.checkpoint_every > 0 && it % config.checkpoint_every == 0 &&
        !config.out_checkpoint.empty())
      save_checkpoint(config.out_checkpoint,
                      model.to_checkpoint(train_meta(config)));
    res.iterations_run = it;
  }

  if (!config.out_checkpoint.empty())
    save_checkpoint(config.out_checkpoint,
                    model.to_checkpoint(train_meta(config)));
  return model;
}

}  // namespace bodynerf
