#ifndef AORTASEG_CONFIG_HPP_
#define AORTASEG_CONFIG_HPP_

#include <filesystem>
#include <set>
#include <string>

#include <yaml-cpp/yaml.h>

#include "json.hpp"

#include "aortaseg/infer.hpp"
#include "aortaseg/train.hpp"

namespace aortaseg
{

/**
 * @brief Experiment description: modality, datalist and data root, plus
 * optional train/arch/loss/augment/infer override sections.
 *
 *     modality: CT
 *     datalist: ./dataset.json
 *     dataroot: /data/phantoms
 *     train: {epochs: 40, lr0: 1.0e-3}
 */
struct ExperimentConfig
{
  std::string modality = "CT";
  fs::path datalist;
  fs::path dataroot;
  TrainConfig train{};
  InferConfig infer{};
};

namespace detail
{

class YamlSection
{
public:
  YamlSection(const YAML::Node & node, std::string path) : node_(node), path_(std::move(path))
  {
    if (node_ && !node_.IsMap()) {throw InvalidArgument(path_ + ": expected a mapping");}
  }

  ~YamlSection() noexcept(false)
  {
    if (std::uncaught_exceptions() > 0 || !node_) {return;}
    for (const auto & kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key)) {throw InvalidArgument("unknown config key '" + prefix() + key + "'");}
    }
  }

  template<typename T>
  void get(const std::string & key, T & out)
  {
    seen_.insert(key);
    if (!node_ || !node_[key]) {return;}
    try {
      out = node_[key].as<T>();
    } catch (const YAML::Exception & e) {
      throw InvalidArgument("config key '" + prefix() + key + "': " + e.what());
    }
  }

  void get_shape(const std::string & key, Shape3 & out)
  {
    seen_.insert(key);
    if (!node_ || !node_[key]) {return;}
    const auto & n = node_[key];
    try {
      if (n.IsScalar()) {
        out.fill(n.as<Index>());
      } else {
        const auto v = n.as<std::vector<Index>>();
        if (v.size() != 3) {throw InvalidArgument("expected 3 values");}
        std::copy(v.begin(), v.end(), out.begin());
      }
    } catch (const std::exception & e) {
      throw InvalidArgument("config key '" + prefix() + key + "': " + e.what());
    }
  }

  void get_vec3(const std::string & key, Vec3 & out)
  {
    seen_.insert(key);
    if (!node_ || !node_[key]) {return;}
    try {
      const auto v = node_[key].as<std::vector<double>>();
      if (v.size() != 3) {throw InvalidArgument("expected 3 values");}
      std::copy(v.begin(), v.end(), out.begin());
    } catch (const std::exception & e) {
      throw InvalidArgument("config key '" + prefix() + key + "': " + e.what());
    }
  }

  YAML::Node child(const std::string & key)
  {
    seen_.insert(key);
    return node_ ? node_[key] : YAML::Node();
  }

  const std::string & path() const {return path_;}

private:
  std::string prefix() const {return path_.empty() ? "" : path_ + ".";}

  YAML::Node node_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline void parse_arch(const YAML::Node & n, ArchConfig & a)
{
  detail::YamlSection s(n, "arch");
  s.get("init_filters", a.init_filters);
  s.get("blocks_per_stage", a.blocks_per_stage);
  s.get("kernel", a.kernel);
  s.get("in_channels", a.in_channels);
  s.get("num_classes", a.num_classes);
  s.get("deep_supervision_levels", a.deep_supervision_levels);
}

inline void parse_loss(const YAML::Node & n, LossConfig & l)
{
  detail::YamlSection s(n, "loss");
  s.get("focal_gamma", l.focal_gamma);
  s.get("dice_smooth", l.dice_smooth);
  s.get("ds_weights", l.ds_weights);
  s.get("include_background_in_dice", l.include_background_in_dice);
}

inline void parse_augment(const YAML::Node & n, AugmentConfig & a)
{
  detail::YamlSection s(n, "augment");
  s.get_shape("crop_size", a.crop_size);
  s.get("foreground_crop_prob", a.foreground_crop_prob);
  s.get("p_flip", a.p_flip);
  s.get("p_affine", a.p_affine);
  s.get("rotation_deg", a.rotation_deg);
  s.get("scale_min", a.scale_min);
  s.get("scale_max", a.scale_max);
  s.get("p_intensity_scale", a.p_intensity_scale);
  s.get("intensity_scale", a.intensity_scale);
  s.get("p_intensity_shift", a.p_intensity_shift);
  s.get("intensity_shift", a.intensity_shift);
  s.get("p_noise", a.p_noise);
  s.get("noise_std", a.noise_std);
  s.get("p_blur", a.p_blur);
  s.get("blur_sigma_min", a.blur_sigma_min);
  s.get("blur_sigma_max", a.blur_sigma_max);
  s.get("seed", a.seed);
}

inline void parse_train(const YAML::Node & n, TrainConfig & t)
{
  detail::YamlSection s(n, "train");
  s.get("lr0", t.lr0);
  s.get("weight_decay", t.optimizer.weight_decay);
  s.get("beta1", t.optimizer.beta1);
  s.get("beta2", t.optimizer.beta2);
  s.get("eps", t.optimizer.eps);
  s.get("epochs", t.epochs);
  s.get("batch_per_device", t.batch_per_device);
  s.get("num_devices", t.num_devices);
  s.get("effective_batch", t.effective_batch);
  s.get("samples_per_case", t.samples_per_case);
  s.get("folds", t.folds);
  s.get("repeats", t.repeats);
  s.get_vec3("target_spacing", t.target_spacing);
  s.get("seed", t.seed);
  s.get("val_interval", t.val_interval);
  s.get("val_overlap", t.val_overlap);
  s.get("percentile_lo", t.percentile_lo);
  s.get("percentile_hi", t.percentile_hi);
  s.get("softclip_k", t.softclip_k);
  s.get("paper_literal", t.paper_literal);
}

inline void parse_infer(const YAML::Node & n, InferConfig & c)
{
  detail::YamlSection s(n, "infer");
  s.get_shape("roi_size", c.roi_size);
  s.get("overlap", c.overlap);
  std::string blend = to_string(c.blend);
  s.get("blend", blend);
  c.blend = blend_mode_from_string(blend);
  s.get("sigma_scale", c.sigma_scale);
  s.get("stage1_count", c.stage1_count);
  s.get("percentile_lo", c.percentile_lo);
  s.get("percentile_hi", c.percentile_hi);
  s.get("softclip_k", c.softclip_k);
  s.get("paper_literal", c.paper_literal);
  s.get("postfilter", c.postfilter);
  s.get("jobs", c.jobs);
}

/// Parse YAML text; relative datalist/dataroot paths resolve against @p base_dir.
inline ExperimentConfig parse_experiment_config(const std::string & text, const fs::path & base_dir = {})
{
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception & e) {
    throw InvalidArgument(std::string("config is not valid YAML: ") + e.what());
  }
  ExperimentConfig cfg;
  {
    detail::YamlSection s(root, "");
    s.get("modality", cfg.modality);
    std::string datalist;
    std::string dataroot;
    s.get("datalist", datalist);
    s.get("dataroot", dataroot);
    cfg.datalist = datalist;
    cfg.dataroot = dataroot;
    parse_train(s.child("train"), cfg.train);
    parse_arch(s.child("arch"), cfg.train.arch);
    parse_loss(s.child("loss"), cfg.train.loss);
    parse_augment(s.child("augment"), cfg.train.augment);
    cfg.infer.roi_size = cfg.train.augment.crop_size;
    cfg.infer.paper_literal = cfg.train.paper_literal;
    cfg.infer.softclip_k = cfg.train.softclip_k;
    cfg.infer.percentile_lo = cfg.train.percentile_lo;
    cfg.infer.percentile_hi = cfg.train.percentile_hi;
    parse_infer(s.child("infer"), cfg.infer);
  }
  if (cfg.modality != "CT") {throw InvalidArgument("modality '" + cfg.modality + "' is not supported (expected CT)");}
  if (cfg.datalist.empty()) {throw InvalidArgument("config key 'datalist' is required");}
  if (!base_dir.empty()) {
    if (cfg.datalist.is_relative()) {cfg.datalist = base_dir / cfg.datalist;}
    if (!cfg.dataroot.empty() && cfg.dataroot.is_relative()) {cfg.dataroot = base_dir / cfg.dataroot;}
  }
  cfg.infer.stage1_count = std::min(cfg.infer.stage1_count, cfg.train.folds);
  cfg.train.validate();
  cfg.infer.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const fs::path & path)
{
  const auto bytes = detail::read_all(path);
  return parse_experiment_config(std::string(bytes.begin(), bytes.end()), path.parent_path());
}

inline nlohmann::json to_json(const TrainConfig & t)
{
  const auto & a = t.augment;
  return {
    {"lr0", t.lr0},
    {"weight_decay", t.optimizer.weight_decay},
    {"betas", {t.optimizer.beta1, t.optimizer.beta2}},
    {"eps", t.optimizer.eps},
    {"epochs", t.epochs},
    {"batch_per_device", t.batch_per_device},
    {"num_devices", t.num_devices},
    {"effective_batch", t.effective_batch},
    {"accumulation_steps", t.accumulation_steps()},
    {"samples_per_case", t.samples_per_case},
    {"folds", t.folds},
    {"repeats", t.repeats},
    {"target_spacing", t.target_spacing},
    {"seed", t.seed},
    {"val_interval", t.val_interval},
    {"val_overlap", t.val_overlap},
    {"percentiles", {t.percentile_lo, t.percentile_hi}},
    {"softclip_k", t.softclip_k},
    {"paper_literal", t.paper_literal},
    {"arch", arch_to_json(t.arch)},
    {"loss", {
        {"focal_gamma", t.loss.focal_gamma},
        {"dice_smooth", t.loss.dice_smooth},
        {"ds_weights", t.loss.ds_weights},
        {"include_background_in_dice", t.loss.include_background_in_dice}}},
    {"augment", {
        {"crop_size", a.crop_size},
        {"foreground_crop_prob", a.foreground_crop_prob},
        {"p_flip", a.p_flip},
        {"p_affine", a.p_affine},
        {"rotation_deg", a.rotation_deg},
        {"scale", {a.scale_min, a.scale_max}},
        {"p_intensity_scale", a.p_intensity_scale},
        {"intensity_scale", a.intensity_scale},
        {"p_intensity_shift", a.p_intensity_shift},
        {"intensity_shift", a.intensity_shift},
        {"p_noise", a.p_noise},
        {"noise_std", a.noise_std},
        {"p_blur", a.p_blur},
        {"blur_sigma", {a.blur_sigma_min, a.blur_sigma_max}}}},
  };
}

inline nlohmann::json to_json(const InferConfig & c)
{
  return {
    {"roi_size", c.roi_size},
    {"overlap", c.overlap},
    {"blend", to_string(c.blend)},
    {"sigma_scale", c.sigma_scale},
    {"stage1_count", c.stage1_count},
    {"percentiles", {c.percentile_lo, c.percentile_hi}},
    {"softclip_k", c.softclip_k},
    {"paper_literal", c.paper_literal},
    {"postfilter", c.postfilter},
    {"jobs", c.jobs},
  };
}

}  // namespace aortaseg

#endif  // AORTASEG_CONFIG_HPP_
