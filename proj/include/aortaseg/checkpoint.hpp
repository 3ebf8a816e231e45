#ifndef AORTASEG_CHECKPOINT_HPP_
#define AORTASEG_CHECKPOINT_HPP_

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "aortaseg/io.hpp"
#include "aortaseg/segresnet.hpp"

namespace aortaseg
{

inline constexpr char kCheckpointMagic[8] = {'A', 'O', 'R', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json arch_to_json(const ArchConfig & a)
{
  return {
    {"init_filters", a.init_filters},
    {"blocks_per_stage", a.blocks_per_stage},
    {"kernel", a.kernel},
    {"in_channels", a.in_channels},
    {"num_classes", a.num_classes},
    {"deep_supervision_levels", a.deep_supervision_levels},
  };
}

inline ArchConfig arch_from_json(const nlohmann::json & j)
{
  ArchConfig a;
  a.init_filters = j.at("init_filters").get<Index>();
  a.blocks_per_stage = j.at("blocks_per_stage").get<std::vector<Index>>();
  a.kernel = j.at("kernel").get<Index>();
  a.in_channels = j.at("in_channels").get<Index>();
  a.num_classes = j.at("num_classes").get<Index>();
  a.deep_supervision_levels = j.at("deep_supervision_levels").get<Index>();
  a.validate();
  return a;
}

/**
 * @brief Trained weights plus everything inference needs to reproduce preprocessing.
 *
 * On disk: 8-byte magic "AORTCKPT", u32 version, u64 metadata length, UTF-8 JSON
 * metadata, then every parameter tensor as little-endian f32 in metadata order.
 */
struct Checkpoint
{
  ArchConfig arch;
  NormalizationMode normalization_mode = NormalizationMode::zscore;
  Index fold = 0;
  Index repeat = 0;
  std::uint64_t seed = 0;
  Vec3 target_spacing{0.7, 0.7, 1.0};
  Shape3 roi_size{64, 64, 64};
  double softclip_k = 10.0;
  double percentile_lo = 5.0;
  double percentile_hi = 95.0;
  double best_val_dice = 0.0;
  Index best_epoch = -1;

  struct Tensor
  {
    std::string name;
    std::vector<float> values;
  };
  std::vector<Tensor> tensors;

  static Checkpoint from_model(SegResNet<float> & model)
  {
    Checkpoint c;
    c.arch = model.config();
    for (auto * p : model.parameters()) {c.tensors.push_back({p->name, p->value});}
    return c;
  }

  /// Copy stored tensors into a freshly built network of the recorded architecture.
  SegResNet<float> build_model() const
  {
    SegResNet<float> model(arch, seed);
    load_into(model);
    return model;
  }

  void load_into(SegResNet<float> & model) const
  {
    auto params = model.parameters();
    if (params.size() != tensors.size()) {
      throw IoError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model has " +
              std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->name != tensors[i].name || params[i]->value.size() != tensors[i].values.size()) {
        throw IoError("checkpoint tensor '" + tensors[i].name + "' does not match model parameter '" +
                params[i]->name + "'");
      }
      params[i]->value = tensors[i].values;
    }
  }

  nlohmann::json metadata() const
  {
    nlohmann::json t = nlohmann::json::array();
    for (const auto & x : tensors) {t.push_back({{"name", x.name}, {"size", x.values.size()}});}
    return {
      {"arch", arch_to_json(arch)},
      {"normalization_mode", to_string(normalization_mode)},
      {"fold", fold},
      {"repeat", repeat},
      {"seed", seed},
      {"target_spacing", target_spacing},
      {"roi_size", roi_size},
      {"softclip_k", softclip_k},
      {"percentiles", {percentile_lo, percentile_hi}},
      {"best_val_dice", best_val_dice},
      {"best_epoch", best_epoch},
      {"tensors", t},
    };
  }
};

inline void save_checkpoint(const Checkpoint & c, const fs::path & path)
{
  const std::string meta = c.metadata().dump();
  std::vector<unsigned char> buf(kCheckpointMagic, kCheckpointMagic + 8);
  detail::append<std::uint32_t>(buf, kCheckpointVersion);
  detail::append<std::uint64_t>(buf, meta.size());
  buf.insert(buf.end(), meta.begin(), meta.end());
  for (const auto & t : c.tensors) {
    const auto off = buf.size();
    buf.resize(off + 4 * t.values.size());
    std::memcpy(buf.data() + off, t.values.data(), 4 * t.values.size());
  }
  detail::write_all(path, buf, false);
}

inline Checkpoint load_checkpoint(const fs::path & path)
{
  const auto buf = detail::read_all(path);
  const std::string name = path.string();
  if (buf.size() < 20 || std::memcmp(buf.data(), kCheckpointMagic, 8) != 0) {
    throw IoError(name + ": not a checkpoint file");
  }
  const auto version = detail::get<std::uint32_t>(buf, 8);
  if (version != kCheckpointVersion) {
    throw IoError(name + ": checkpoint version " + std::to_string(version) + " is not supported (expected " +
            std::to_string(kCheckpointVersion) + ")");
  }
  const auto meta_len = detail::get<std::uint64_t>(buf, 12);
  if (buf.size() < 20 + meta_len) {throw IoError(name + ": truncated metadata");}
  Checkpoint c;
  try {
    const auto j = nlohmann::json::parse(buf.begin() + 20, buf.begin() + 20 + static_cast<std::ptrdiff_t>(meta_len));
    c.arch = arch_from_json(j.at("arch"));
    c.normalization_mode = normalization_mode_from_string(j.at("normalization_mode").get<std::string>());
    c.fold = j.at("fold").get<Index>();
    c.repeat = j.at("repeat").get<Index>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.target_spacing = j.at("target_spacing").get<Vec3>();
    c.roi_size = j.at("roi_size").get<Shape3>();
    c.softclip_k = j.at("softclip_k").get<double>();
    c.percentile_lo = j.at("percentiles").at(0).get<double>();
    c.percentile_hi = j.at("percentiles").at(1).get<double>();
    c.best_val_dice = j.at("best_val_dice").get<double>();
    c.best_epoch = j.at("best_epoch").get<Index>();
    std::size_t off = 20 + meta_len;
    for (const auto & t : j.at("tensors")) {
      Checkpoint::Tensor x;
      x.name = t.at("name").get<std::string>();
      const auto n = t.at("size").get<std::size_t>();
      if (buf.size() < off + 4 * n) {throw IoError(name + ": truncated tensor data");}
      x.values.resize(n);
      std::memcpy(x.values.data(), buf.data() + off, 4 * n);
      off += 4 * n;
      c.tensors.push_back(std::move(x));
    }
    if (off != buf.size()) {throw IoError(name + ": trailing bytes after tensor data");}
  } catch (const nlohmann::json::exception & e) {
    throw IoError(name + ": bad checkpoint metadata: " + e.what());
  } catch (const InvalidArgument & e) {
    throw IoError(name + ": " + e.what());
  }
  return c;
}

}  // namespace aortaseg

#endif  // AORTASEG_CHECKPOINT_HPP_
