#include "kexp/config_json.hpp"

#include <fstream>
#include <set>

namespace kexp {

using nlohmann::json;

json to_json(const RunConfig& cfg) {
  json j;
  j["model"] = {
      {"use_batchnorm", cfg.model.use_batchnorm},
      {"use_dropout", cfg.model.use_dropout},
      {"attention", to_string(cfg.model.attention)},
      {"dense_widths", cfg.model.dense_widths},
      {"dropout_rates", cfg.model.dropout_rates},
      {"input_size", cfg.model.input_size},
      {"num_classes", cfg.model.num_classes},
      {"attention_reduction", cfg.model.attention_reduction},
      {"seed", cfg.model.seed},
  };
  j["train"] = {
      {"batch_size", cfg.train.batch_size},
      {"epochs", cfg.train.epochs},
      {"initial_lr", cfg.train.initial_lr},
      {"lr_decay", cfg.train.lr_decay},
      {"decay_period_epochs", cfg.train.decay_period_epochs},
      {"momentum", cfg.train.momentum},
      {"workers", cfg.train.workers},
      {"seed", cfg.train.seed},
      {"clip_norm", cfg.train.clip_norm},
      {"use_augment", cfg.train.use_augment},
  };
  j["augment"] = {
      {"brightness_contrast_prob", cfg.augment.brightness_contrast_prob},
      {"contrast_lo", cfg.augment.contrast_lo},
      {"contrast_hi", cfg.augment.contrast_hi},
      {"brightness_shift", cfg.augment.brightness_shift},
      {"jitter_prob", cfg.augment.jitter_prob},
      {"hue_delta", cfg.augment.hue_delta},
      {"sat_delta", cfg.augment.sat_delta},
      {"bright_delta", cfg.augment.bright_delta},
      {"blur_prob", cfg.augment.blur_prob},
      {"blur_kernel_choices", cfg.augment.blur_kernel_choices},
      {"jpeg_prob", cfg.augment.jpeg_prob},
      {"jpeg_quality", cfg.augment.jpeg_quality},
      {"shadow_prob", cfg.augment.shadow_prob},
      {"shadow_factor", cfg.augment.shadow_factor},
      {"affine_prob", cfg.augment.affine_prob},
      {"rotation_max_deg", cfg.augment.rotation_max_deg},
      {"translate_frac", cfg.augment.translate_frac},
      {"scale_lo", cfg.augment.scale_lo},
      {"scale_hi", cfg.augment.scale_hi},
      {"pose_prob", cfg.augment.pose_prob},
      {"pose_max_frac", cfg.augment.pose_max_frac},
      {"hflip_prob", cfg.augment.hflip_prob},
      {"vflip_prob", cfg.augment.vflip_prob},
      {"saltpepper_prob", cfg.augment.saltpepper_prob},
      {"saltpepper_density", cfg.augment.saltpepper_density},
      {"erase_prob", cfg.augment.erase_prob},
      {"erase_area_lo", cfg.augment.erase_area_lo},
      {"erase_area_hi", cfg.augment.erase_area_hi},
      {"erase_aspect_lo", cfg.augment.erase_aspect_lo},
      {"erase_aspect_hi", cfg.augment.erase_aspect_hi},
      {"master_seed", cfg.augment.master_seed},
  };
  j["data"] = {
      {"root", cfg.data.root},
      {"val_frac", cfg.data.val_frac},
      {"seed", cfg.data.seed},
      {"image_size", cfg.data.image_size},
  };
  return j;
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known,
                    const std::string& section) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("config: unknown key '" + section + it.key() + "'");
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void apply_model(const json& j, ModelConfig& m) {
  reject_unknown(j,
                 {"use_batchnorm", "use_dropout", "attention", "dense_widths",
                  "dropout_rates", "input_size", "num_classes",
                  "attention_reduction", "seed"},
                 "model.");
  get_if(j, "use_batchnorm", m.use_batchnorm);
  get_if(j, "use_dropout", m.use_dropout);
  if (j.contains("attention"))
    m.attention = attention_from_string(j.at("attention").get<std::string>());
  get_if(j, "dense_widths", m.dense_widths);
  get_if(j, "dropout_rates", m.dropout_rates);
  get_if(j, "input_size", m.input_size);
  get_if(j, "num_classes", m.num_classes);
  get_if(j, "attention_reduction", m.attention_reduction);
  get_if(j, "seed", m.seed);
}

void apply_train(const json& j, TrainConfig& t) {
  reject_unknown(j,
                 {"batch_size", "epochs", "initial_lr", "lr_decay",
                  "decay_period_epochs", "momentum", "workers", "seed",
                  "clip_norm", "use_augment"},
                 "train.");
  get_if(j, "batch_size", t.batch_size);
  get_if(j, "epochs", t.epochs);
  get_if(j, "initial_lr", t.initial_lr);
  get_if(j, "lr_decay", t.lr_decay);
  get_if(j, "decay_period_epochs", t.decay_period_epochs);
  get_if(j, "momentum", t.momentum);
  get_if(j, "workers", t.workers);
  get_if(j, "seed", t.seed);
  get_if(j, "clip_norm", t.clip_norm);
  get_if(j, "use_augment", t.use_augment);
}

void apply_augment(const json& j, AugmentConfig& a) {
  reject_unknown(
      j,
      {"brightness_contrast_prob", "contrast_lo", "contrast_hi",
       "brightness_shift", "jitter_prob", "hue_delta", "sat_delta",
       "bright_delta", "blur_prob", "blur_kernel_choices", "jpeg_prob",
       "jpeg_quality", "shadow_prob", "shadow_factor", "affine_prob",
       "rotation_max_deg", "translate_frac", "scale_lo", "scale_hi",
       "pose_prob", "pose_max_frac", "hflip_prob", "vflip_prob",
       "saltpepper_prob", "saltpepper_density", "erase_prob", "erase_area_lo",
       "erase_area_hi", "erase_aspect_lo", "erase_aspect_hi", "master_seed"},
      "augment.");
  get_if(j, "brightness_contrast_prob", a.brightness_contrast_prob);
  get_if(j, "contrast_lo", a.contrast_lo);
  get_if(j, "contrast_hi", a.contrast_hi);
  get_if(j, "brightness_shift", a.brightness_shift);
  get_if(j, "jitter_prob", a.jitter_prob);
  get_if(j, "hue_delta", a.hue_delta);
  get_if(j, "sat_delta", a.sat_delta);
  get_if(j, "bright_delta", a.bright_delta);
  get_if(j, "blur_prob", a.blur_prob);
  get_if(j, "blur_kernel_choices", a.blur_kernel_choices);
  get_if(j, "jpeg_prob", a.jpeg_prob);
  get_if(j, "jpeg_quality", a.jpeg_quality);
  get_if(j, "shadow_prob", a.shadow_prob);
  get_if(j, "shadow_factor", a.shadow_factor);
  get_if(j, "affine_prob", a.affine_prob);
  get_if(j, "rotation_max_deg", a.rotation_max_deg);
  get_if(j, "translate_frac", a.translate_frac);
  get_if(j, "scale_lo", a.scale_lo);
  get_if(j, "scale_hi", a.scale_hi);
  get_if(j, "pose_prob", a.pose_prob);
  get_if(j, "pose_max_frac", a.pose_max_frac);
  get_if(j, "hflip_prob", a.hflip_prob);
  get_if(j, "vflip_prob", a.vflip_prob);
  get_if(j, "saltpepper_prob", a.saltpepper_prob);
  get_if(j, "saltpepper_density", a.saltpepper_density);
  get_if(j, "erase_prob", a.erase_prob);
  get_if(j, "erase_area_lo", a.erase_area_lo);
  get_if(j, "erase_area_hi", a.erase_area_hi);
  get_if(j, "erase_aspect_lo", a.erase_aspect_lo);
  get_if(j, "erase_aspect_hi", a.erase_aspect_hi);
  get_if(j, "master_seed", a.master_seed);
}

void apply_data(const json& j, DataConfig& d) {
  reject_unknown(j, {"root", "val_frac", "seed", "image_size"}, "data.");
  get_if(j, "root", d.root);
  get_if(j, "val_frac", d.val_frac);
  get_if(j, "seed", d.seed);
  get_if(j, "image_size", d.image_size);
}

}  // namespace

RunConfig run_config_from_json(const json& j, RunConfig base) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  reject_unknown(j, {"model", "train", "augment", "data"}, "");
  try {
    if (j.contains("model")) apply_model(j.at("model"), base.model);
    if (j.contains("train")) apply_train(j.at("train"), base.train);
    if (j.contains("augment")) apply_augment(j.at("augment"), base.augment);
    if (j.contains("data")) apply_data(j.at("data"), base.data);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return base;
}

RunConfig load_run_config_file(const std::string& path, RunConfig base) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j, std::move(base));
}

}  // namespace kexp
