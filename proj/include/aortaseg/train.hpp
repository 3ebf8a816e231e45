#ifndef AORTASEG_TRAIN_HPP_
#define AORTASEG_TRAIN_HPP_

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "aortaseg/augment.hpp"
#include "aortaseg/checkpoint.hpp"
#include "aortaseg/infer.hpp"
#include "aortaseg/io.hpp"
#include "aortaseg/losses.hpp"
#include "aortaseg/metrics.hpp"
#include "aortaseg/normalize.hpp"
#include "aortaseg/optim.hpp"
#include "aortaseg/resample.hpp"
#include "aortaseg/segresnet.hpp"

namespace aortaseg
{

struct DatalistEntry
{
  std::string case_id;
  fs::path image;
  fs::path label;
  Index fold = 0;
};

/// Case list with fold assignments, as stored in dataset.json.
struct Datalist
{
  std::vector<DatalistEntry> entries;

  Index num_folds() const
  {
    Index k = 0;
    for (const auto & e : entries) {k = std::max(k, e.fold + 1);}
    return k;
  }

  /// Every fold in [0, k) nonempty, ids unique.
  void validate(Index k) const
  {
    if (entries.empty()) {throw InvalidArgument("datalist is empty");}
    std::vector<Index> count(static_cast<std::size_t>(k), 0);
    std::set<std::string> ids;
    for (const auto & e : entries) {
      if (e.fold < 0 || e.fold >= k) {
        throw InvalidArgument("case '" + e.case_id + "' has fold " + std::to_string(e.fold) +
                " outside [0, " + std::to_string(k) + ")");
      }
      ++count[e.fold];
      if (!ids.insert(e.case_id).second) {throw InvalidArgument("duplicate case id '" + e.case_id + "'");}
    }
    for (Index f = 0; f < k; ++f) {
      if (count[f] == 0) {throw InvalidArgument("fold " + std::to_string(f) + " has no cases");}
    }
  }
};

/// File name without directory and without .nii/.nii.gz/.vol suffix.
inline std::string case_id_from_path(const fs::path & p)
{
  std::string s = p.filename().string();
  for (const char * suf : {".nii.gz", ".nii", ".vol"}) {
    if (detail::ends_with(s, suf)) {return s.substr(0, s.size() - std::strlen(suf));}
  }
  return s;
}

/**
 * @brief Read {"training": [{"image", "label", "fold"}, ...]}.
 *
 * Relative paths resolve against @p dataroot, or the file's directory when it is empty.
 */
inline Datalist load_datalist(const fs::path & path, const fs::path & dataroot = {})
{
  std::ifstream in(path);
  if (!in) {throw IoError("cannot open datalist " + path.string());}
  const fs::path root = dataroot.empty() ? path.parent_path() : dataroot;
  Datalist dl;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto & e : j.at("training")) {
      DatalistEntry d;
      d.image = e.at("image").get<std::string>();
      d.label = e.at("label").get<std::string>();
      if (d.image.is_relative()) {d.image = root / d.image;}
      if (d.label.is_relative()) {d.label = root / d.label;}
      d.fold = e.value("fold", Index(0));
      d.case_id = e.contains("id") ? e.at("id").get<std::string>() : case_id_from_path(d.image);
      dl.entries.push_back(std::move(d));
    }
  } catch (const nlohmann::json::exception & e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return dl;
}

inline void save_datalist(const Datalist & dl, const fs::path & path, const fs::path & relative_to = {})
{
  nlohmann::json arr = nlohmann::json::array();
  for (const auto & e : dl.entries) {
    auto rel = [&](const fs::path & p) {
        return relative_to.empty() ? p.generic_string() : fs::relative(p, relative_to).generic_string();
      };
    arr.push_back({{"id", e.case_id}, {"image", rel(e.image)}, {"label", rel(e.label)}, {"fold", e.fold}});
  }
  const std::string text = nlohmann::json{{"training", arr}}.dump(2) + "\n";
  detail::write_all(path, std::vector<unsigned char>(text.begin(), text.end()), false);
}

/**
 * @brief Random k-fold assignment: seeded shuffle, then round-robin.
 *
 * Returns the fold of each case in input order; fold sizes differ by at most one.
 */
inline std::vector<Index> make_folds(const std::vector<std::string> & case_ids, Index k, std::uint64_t seed)
{
  if (k < 2) {throw InvalidArgument("make_folds: need at least 2 folds");}
  if (static_cast<Index>(case_ids.size()) < k) {
    throw InvalidArgument("make_folds: " + std::to_string(case_ids.size()) + " cases cannot fill " +
            std::to_string(k) + " folds");
  }
  std::vector<Index> order(case_ids.size());
  std::iota(order.begin(), order.end(), Index(0));
  Rng rng(seed);
  // Fisher-Yates with explicit draws so the permutation does not depend on the library's shuffle.
  for (Index i = static_cast<Index>(order.size()) - 1; i > 0; --i) {
    const Index j = static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(order[i], order[j]);
  }
  std::vector<Index> fold(case_ids.size());
  for (std::size_t p = 0; p < order.size(); ++p) {fold[order[p]] = static_cast<Index>(p) % k;}
  return fold;
}

struct TrainConfig
{
  double lr0 = 2e-4;
  AdamWConfig optimizer{};
  Index epochs = 100;
  Index batch_per_device = 1;
  Index num_devices = 1;
  /// Samples per optimizer update; reached by gradient accumulation.
  Index effective_batch = 8;
  /// Random crops drawn from each training case per epoch.
  Index samples_per_case = 1;
  Index folds = 5;
  Index repeats = 3;
  Vec3 target_spacing{0.7, 0.7, 1.0};
  ArchConfig arch{};
  LossConfig loss{};
  AugmentConfig augment{};
  std::uint64_t seed = 0;
  /// Validate every this many epochs (and always after the last one).
  Index val_interval = 1;
  double val_overlap = 0.25;
  double percentile_lo = 5.0;
  double percentile_hi = 95.0;
  double softclip_k = 10.0;
  /// Train every repeat on z-scored input instead of soft-clipped input for repeats > 0.
  bool paper_literal = false;

  Index accumulation_steps() const
  {
    const Index per_step = batch_per_device * num_devices;
    return std::max<Index>(1, (effective_batch + per_step - 1) / per_step);
  }

  void validate() const
  {
    if (!(lr0 > 0.0)) {throw InvalidArgument("lr0 must be > 0");}
    if (folds < 2) {throw InvalidArgument("folds must be >= 2");}
    if (repeats < 1) {throw InvalidArgument("repeats must be >= 1");}
    if (epochs < 1) {throw InvalidArgument("epochs must be >= 1");}
    if (batch_per_device < 1 || num_devices < 1 || effective_batch < 1) {
      throw InvalidArgument("batch sizes and device count must be >= 1");
    }
    if (samples_per_case < 1) {throw InvalidArgument("samples_per_case must be >= 1");}
    if (val_interval < 1) {throw InvalidArgument("val_interval must be >= 1");}
    if (!(val_overlap >= 0.0 && val_overlap < 1.0)) {throw InvalidArgument("val_overlap must be in [0, 1)");}
    check_spacing(target_spacing, "target_spacing");
    arch.validate();
    loss.validate();
    augment.validate();
    for (int a = 0; a < 3; ++a) {
      if (augment.crop_size[a] % arch.size_divisor() != 0) {
        throw InvalidArgument("crop size " + to_string(augment.crop_size) + " is not divisible by " +
                std::to_string(arch.size_divisor()));
      }
    }
  }

  /// Preprocessing used for the model of a given repeat.
  NormalizationMode mode_for_repeat(Index repeat) const
  {
    return repeat == 0 || paper_literal ? NormalizationMode::zscore : NormalizationMode::percentile_softclip;
  }
};

/// A resampled, normalised case held in memory for training or validation.
struct PreparedCase
{
  std::string case_id;
  Volume image;
  Volume label;
};

/// Resample to @p spacing, then z-score, or soft-clip between the label's foreground percentiles.
inline PreparedCase prepare_case(
  const Volume & image, const Volume & label, const std::string & case_id, NormalizationMode mode,
  const Vec3 & spacing, double p_lo, double p_hi, double k)
{
  require_same_grid(image, label, "prepare_case");
  PreparedCase c;
  c.case_id = case_id;
  const Volume img = resample(image, spacing);
  c.label = resample(label, spacing);
  if (mode == NormalizationMode::zscore) {
    c.image = zscore_normalize(img);
  } else {
    c.image = softclip_rescale(img, foreground_percentile_bounds(img, binarize(c.label), p_lo, p_hi), k);
  }
  return c;
}

inline Tensor<float> to_tensor(const Volume & v)
{
  const auto & s = v.shape();
  return Tensor<float>({1, 1, s[0], s[1], s[2]}, std::vector<float>(v.values()));
}

struct EpochLog
{
  Index epoch = 0;
  double train_loss = 0.0;
  double lr = 0.0;
  /// NaN when the epoch was not validated.
  double val_dice = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

struct TrainResult
{
  Checkpoint best;
  std::vector<EpochLog> history;
};

/// Mean class-1 dice of sliding-window predictions over the validation cases.
inline double validation_dice(SegResNet<float> & model, const std::vector<PreparedCase> & cases, const InferConfig & icfg)
{
  const WindowPredictor predict = [&model](const Tensor<float> & x) {return model.forward(x, false).logits;};
  double sum = 0.0;
  for (const auto & c : cases) {
    const Volume pred = binarize(sliding_window_predict(predict, c.image, icfg).argmax());
    sum += dice_score(pred, binarize(c.label));
  }
  return sum / static_cast<double>(cases.size());
}

using TrainLogger = std::function<void(Index fold, Index repeat, const EpochLog &)>;

/**
 * @brief Train one fold/repeat and return the best-validation checkpoint.
 *
 * Trains on every case whose fold differs from @p fold and validates on the
 * rest. The run seed is cfg.seed + repeat; it seeds the weights, and together
 * with the fold it seeds the sampling stream.
 */
inline TrainResult train_fold(
  const TrainConfig & cfg, const Datalist & datalist, Index fold, Index repeat, const TrainLogger & log = {})
{
  using clock = std::chrono::steady_clock;
  cfg.validate();
  if (fold < 0 || fold >= cfg.folds) {throw InvalidArgument("fold " + std::to_string(fold) + " out of range");}
  if (repeat < 0 || repeat >= cfg.repeats) {throw InvalidArgument("repeat " + std::to_string(repeat) + " out of range");}
  datalist.validate(cfg.folds);

  const NormalizationMode mode = cfg.mode_for_repeat(repeat);
  std::vector<PreparedCase> train;
  std::vector<PreparedCase> val;
  for (const auto & e : datalist.entries) {
    auto c = prepare_case(load_volume(e.image, VolumeKind::image), load_volume(e.label, VolumeKind::label),
      e.case_id, mode, cfg.target_spacing, cfg.percentile_lo, cfg.percentile_hi, cfg.softclip_k);
    (e.fold == fold ? val : train).push_back(std::move(c));
  }
  if (train.empty()) {throw InvalidArgument("fold " + std::to_string(fold) + ": empty training split");}
  if (val.empty()) {throw InvalidArgument("fold " + std::to_string(fold) + ": empty validation split");}
  std::set<std::string> train_ids;
  for (const auto & c : train) {train_ids.insert(c.case_id);}

  const std::uint64_t run_seed = cfg.seed + static_cast<std::uint64_t>(repeat);
  SegResNet<float> model(cfg.arch, run_seed);
  auto params = model.parameters();
  AdamW<float> opt(cfg.optimizer);
  std::seed_seq sseq{run_seed, static_cast<std::uint64_t>(fold), std::uint64_t{0x5eed}};
  Rng rng(sseq);

  const Index accum = cfg.accumulation_steps();
  const Index samples_per_epoch = static_cast<Index>(train.size()) * cfg.samples_per_case;
  const Index steps_per_epoch = (samples_per_epoch + accum - 1) / accum;
  const Index total_steps = steps_per_epoch * cfg.epochs;

  InferConfig icfg;
  icfg.roi_size = cfg.augment.crop_size;
  icfg.overlap = cfg.val_overlap;

  TrainResult res;
  res.best = Checkpoint::from_model(model);
  bool have_best = false;
  Index step = 0;
  std::vector<Index> order;
  for (Index s = 0; s < cfg.samples_per_case; ++s) {
    for (Index i = 0; i < static_cast<Index>(train.size()); ++i) {order.push_back(i);}
  }

  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = clock::now();
    for (const auto & c : val) {
      if (train_ids.count(c.case_id)) {
        throw std::logic_error("validation case '" + c.case_id + "' is in the training split");
      }
    }
    for (Index i = static_cast<Index>(order.size()) - 1; i > 0; --i) {
      std::swap(order[i], order[static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1))]);
    }
    EpochLog el;
    el.epoch = epoch;
    el.lr = cosine_lr(step, total_steps, cfg.lr0);
    double loss_sum = 0.0;
    Index pending = 0;
    model.zero_grad();
    auto update = [&]() {
        opt.step(params, cosine_lr(step, total_steps, cfg.lr0), 1.0 / static_cast<double>(pending));
        ++step;
        pending = 0;
        model.zero_grad();
      };
    for (Index idx : order) {
      const auto & c = train[idx];
      auto [ci, cl] = random_crop_pair(c.image, c.label, cfg.augment.crop_size, rng, cfg.augment.foreground_crop_prob);
      std::tie(ci, cl) = apply_augmentations(ci, cl, cfg.augment, rng);
      const auto fwd = model.forward(to_tensor(ci), true);
      const auto target = one_hot<float>(cl, cfg.arch.num_classes);
      const auto loss = total_loss(fwd.logits, fwd.ds_outputs, target, cfg.loss);
      if (!std::isfinite(loss.value)) {
        throw NonFiniteLoss("non-finite loss " + std::to_string(loss.value) + " at fold " + std::to_string(fold) +
                " repeat " + std::to_string(repeat) + " epoch " + std::to_string(epoch) + " step " +
                std::to_string(step) + " case '" + c.case_id + "' lr " + std::to_string(cosine_lr(step, total_steps, cfg.lr0)));
      }
      loss_sum += loss.value;
      model.backward(loss.dlogits, loss.dds);
      if (++pending == accum) {update();}
    }
    if (pending > 0) {update();}
    el.train_loss = loss_sum / static_cast<double>(order.size());

    if ((epoch + 1) % cfg.val_interval == 0 || epoch + 1 == cfg.epochs) {
      el.val_dice = validation_dice(model, val, icfg);
      if (!have_best || el.val_dice >= res.best.best_val_dice) {
        res.best = Checkpoint::from_model(model);
        res.best.best_val_dice = el.val_dice;
        res.best.best_epoch = epoch;
        have_best = true;
      }
    }
    el.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    res.history.push_back(el);
    if (log) {log(fold, repeat, el);}
  }

  auto & b = res.best;
  b.normalization_mode = mode;
  b.fold = fold;
  b.repeat = repeat;
  b.seed = run_seed;
  b.target_spacing = cfg.target_spacing;
  b.roi_size = cfg.augment.crop_size;
  b.softclip_k = cfg.softclip_k;
  b.percentile_lo = cfg.percentile_lo;
  b.percentile_hi = cfg.percentile_hi;
  return res;
}

inline fs::path checkpoint_path(const fs::path & ckpt_dir, Index fold, Index repeat)
{
  return ckpt_dir / ("fold" + std::to_string(fold) + "_rep" + std::to_string(repeat)) / "best.ckpt";
}

struct TrainAllResult
{
  std::vector<fs::path> checkpoints;
  std::vector<std::string> failures;
  /// Per-run epoch logs keyed by checkpoint path; empty for resumed runs.
  std::vector<std::pair<fs::path, std::vector<EpochLog>>> histories;
};

/**
 * @brief Train every fold x repeat, writing ckpt/fold{F}_rep{R}/best.ckpt.
 *
 * Existing checkpoints are kept when @p resume is set. A failing run is
 * recorded and the remaining runs continue.
 */
inline TrainAllResult train_all(
  const TrainConfig & cfg, const Datalist & datalist, const fs::path & ckpt_dir, bool resume = true,
  const TrainLogger & log = {})
{
  cfg.validate();
  datalist.validate(cfg.folds);
  TrainAllResult out;
  for (Index repeat = 0; repeat < cfg.repeats; ++repeat) {
    for (Index fold = 0; fold < cfg.folds; ++fold) {
      const auto path = checkpoint_path(ckpt_dir, fold, repeat);
      if (resume && fs::exists(path)) {
        try {
          const auto c = load_checkpoint(path);
          if (c.fold == fold && c.repeat == repeat && c.arch == cfg.arch) {
            out.checkpoints.push_back(path);
            continue;
          }
          warn("train_all: " + path.string() + " does not match this configuration; retraining");
        } catch (const IoError & e) {
          warn(std::string("train_all: unreadable checkpoint, retraining: ") + e.what());
        }
      }
      try {
        auto r = train_fold(cfg, datalist, fold, repeat, log);
        save_checkpoint(r.best, path);
        out.checkpoints.push_back(path);
        out.histories.emplace_back(path, std::move(r.history));
      } catch (const std::exception & e) {
        out.failures.push_back("fold " + std::to_string(fold) + " repeat " + std::to_string(repeat) + ": " + e.what());
      }
    }
  }
  return out;
}

/// Load every checkpoint below @p ckpt_dir matching fold*_rep*/best.ckpt, sorted by (repeat, fold).
inline std::vector<Checkpoint> load_checkpoint_dir(const fs::path & ckpt_dir)
{
  if (!fs::is_directory(ckpt_dir)) {throw IoError("checkpoint directory " + ckpt_dir.string() + " not found");}
  std::vector<fs::path> paths;
  for (const auto & d : fs::directory_iterator(ckpt_dir)) {
    const auto p = d.path() / "best.ckpt";
    if (d.is_directory() && d.path().filename().string().rfind("fold", 0) == 0 && fs::exists(p)) {
      paths.push_back(p);
    }
  }
  std::vector<Checkpoint> out;
  for (const auto & p : paths) {out.push_back(load_checkpoint(p));}
  std::sort(out.begin(), out.end(), [](const Checkpoint & a, const Checkpoint & b) {
      return std::tie(a.repeat, a.fold) < std::tie(b.repeat, b.fold);
    });
  return out;
}

}  // namespace aortaseg

#endif  // AORTASEG_TRAIN_HPP_
