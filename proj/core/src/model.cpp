#include "bodynerf/model.hpp"

#include <sstream>

#include "bodynerf/textio.hpp"

namespace bodynerf {

namespace {

std::string join_csv(const std::vector<std::string>& parts) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ",";
    out += parts[i];
  }
  return out;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

template <typename T>
std::string ints_csv(const std::vector<T>& v) {
  std::vector<std::string> s;
  for (auto x : v) s.push_back(std::to_string(x));
  return join_csv(s);
}

}  // namespace

Model::Model(const ModelConfig& cfg, const std::vector<int>& camera_ids,
             std::uint64_t seed)
    : config(cfg) {
  Rng rng(seed);
  EncoderConfig enc;
  enc.feature_channels = cfg.feature_channels;
  enc.block_channels = cfg.encoder_channels;
  encoder = ConvEncoder(enc, rng);

  DiffusionConfig diff;
  diff.in_channels = cfg.feature_channels;
  diff.channels = cfg.volume_channels;
  diff.levels = cfg.diffusion_levels;
  diffusion = DiffusionNet(diff, rng);

  refiner = WeightRefiner(cfg.n_parts, cfg.refiner_hidden, rng);

  attn_density = AttentionBlock("attn_density", cfg.query_dim(),
                                cfg.feature_channels, cfg.attn_dim, rng);
  attn_color = AttentionBlock("attn_color", cfg.query_dim(),
                              cfg.feature_channels, cfg.attn_dim, rng);

  std::vector<std::int64_t> ddims{cfg.query_dim()};
  for (auto h : cfg.density_hidden) ddims.push_back(h);
  ddims.push_back(1);
  density_mlp = Mlp("density", ddims, rng);

  std::vector<std::int64_t> cdims{cfg.query_dim() + cfg.pe_dim() +
                                  cfg.latent_dim};
  for (auto h : cfg.color_hidden) cdims.push_back(h);
  cdims.push_back(3);
  color_mlp = Mlp("color", cdims, rng);

  latents = CameraLatentTable(camera_ids, cfg.latent_dim, rng);
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  encoder.collect_parameters(out);
  diffusion.collect_parameters(out);
  refiner.collect_parameters(out);
  attn_density.collect_parameters(out);
  attn_color.collect_parameters(out);
  density_mlp.collect_parameters(out);
  color_mlp.collect_parameters(out);
  latents.collect_parameters(out);
  return out;
}

Checkpoint Model::to_checkpoint(
    std::map<std::string, std::string> extra_meta) const {
  Model* self = const_cast<Model*>(this);
  std::map<std::string, std::string> meta = std::move(extra_meta);
  meta["model.n_parts"] = std::to_string(config.n_parts);
  meta["model.feature_channels"] = std::to_string(config.feature_channels);
  meta["model.volume_channels"] = std::to_string(config.volume_channels);
  meta["model.diffusion_levels"] = std::to_string(config.diffusion_levels);
  meta["model.attn_dim"] = std::to_string(config.attn_dim);
  meta["model.latent_dim"] = std::to_string(config.latent_dim);
  meta["model.pe_bands"] = std::to_string(config.pe_bands);
  meta["model.use_attention"] = config.use_attention ? "1" : "0";
  meta["model.encoder_channels"] =
      ints_csv(std::vector<int>(config.encoder_channels.begin(),
                                config.encoder_channels.end()));
  meta["model.refiner_hidden"] = ints_csv(config.refiner_hidden);
  meta["model.density_hidden"] = ints_csv(config.density_hidden);
  meta["model.color_hidden"] = ints_csv(config.color_hidden);
  {
    std::vector<int> ids;
    for (const auto& [id, row] : latents.ids()) ids.push_back(id);
    meta["model.camera_ids"] = ints_csv(ids);
  }
  meta["model.norm_mean"] = join_csv({fmt_double(encoder.norm_mean()[0]),
                                      fmt_double(encoder.norm_mean()[1]),
                                      fmt_double(encoder.norm_mean()[2])});
  meta["model.norm_std"] = join_csv({fmt_double(encoder.norm_std()[0]),
                                     fmt_double(encoder.norm_std()[1]),
                                     fmt_double(encoder.norm_std()[2])});
  return Checkpoint::snapshot(self->parameters(), std::move(meta));
}

Model Model::from_checkpoint(const Checkpoint& ckpt) {
  ModelConfig cfg;
  cfg.n_parts = static_cast<int>(ckpt.meta_int("model.n_parts"));
  cfg.feature_channels = static_cast<int>(ckpt.meta_int("model.feature_channels"));
  cfg.volume_channels = static_cast<int>(ckpt.meta_int("model.volume_channels"));
  cfg.diffusion_levels = static_cast<int>(ckpt.meta_int("model.diffusion_levels"));
  cfg.attn_dim = static_cast<int>(ckpt.meta_int("model.attn_dim"));
  cfg.latent_dim = static_cast<int>(ckpt.meta_int("model.latent_dim"));
  cfg.pe_bands = static_cast<int>(ckpt.meta_int("model.pe_bands"));
  cfg.use_attention = ckpt.meta_int("model.use_attention") != 0;

  auto enc = split_csv(ckpt.meta_at("model.encoder_channels"));
  BN_CHECK(enc.size() == 4, "checkpoint: bad encoder channel list");
  for (int i = 0; i < 4; ++i) cfg.encoder_channels[i] = std::stoi(enc[i]);
  cfg.refiner_hidden.clear();
  for (const auto& s : split_csv(ckpt.meta_at("model.refiner_hidden")))
    cfg.refiner_hidden.push_back(std::stoll(s));
  cfg.density_hidden.clear();
  for (const auto& s : split_csv(ckpt.meta_at("model.density_hidden")))
    cfg.density_hidden.push_back(std::stoll(s));
  cfg.color_hidden.clear();
  for (const auto& s : split_csv(ckpt.meta_at("model.color_hidden")))
    cfg.color_hidden.push_back(std::stoll(s));

  std::vector<int> camera_ids;
  for (const auto& s : split_csv(ckpt.meta_at("model.camera_ids")))
    camera_ids.push_back(std::stoi(s));

  Model model(cfg, camera_ids, /*seed=*/0);
  auto mean = split_csv(ckpt.meta_at("model.norm_mean"));
  auto stdv = split_csv(ckpt.meta_at("model.norm_std"));
  BN_CHECK(mean.size() == 3 && stdv.size() == 3,
           "checkpoint: bad normalization stats");
  model.encoder.set_normalization(
      {std::stod(mean[0]), std::stod(mean[1]), std::stod(mean[2])},
      {std::stod(stdv[0]), std::stod(stdv[1]), std::stod(stdv[2])});

  auto params = model.parameters();
  ckpt.restore(params);
  return model;
}

}  // namespace bodynerf
