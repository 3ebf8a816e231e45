#ifndef AORTASEG_INFER_HPP_
#define AORTASEG_INFER_HPP_

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <thread>
#include <vector>

#include "json.hpp"

#include "aortaseg/checkpoint.hpp"
#include "aortaseg/metrics.hpp"
#include "aortaseg/normalize.hpp"
#include "aortaseg/resample.hpp"
#include "aortaseg/tensor.hpp"

namespace aortaseg
{

enum class BlendMode {gaussian, constant};

inline const char * to_string(BlendMode b) {return b == BlendMode::gaussian ? "gaussian" : "constant";}

inline BlendMode blend_mode_from_string(const std::string & s)
{
  if (s == "gaussian") {return BlendMode::gaussian;}
  if (s == "constant") {return BlendMode::constant;}
  throw InvalidArgument("unknown blend mode '" + s + "' (expected gaussian or constant)");
}

struct InferConfig
{
  Shape3 roi_size{64, 64, 64};
  double overlap = 0.25;
  BlendMode blend = BlendMode::gaussian;
  /// Gaussian sigma as a fraction of the window extent.
  double sigma_scale = 0.125;
  Index stage1_count = 5;
  double percentile_lo = 5.0;
  double percentile_hi = 95.0;
  double softclip_k = 10.0;
  /// Stage-2 models were trained on z-scored input, as in the original protocol.
  bool paper_literal = false;
  bool postfilter = true;
  /// Worker threads for independent model inferences.
  Index jobs = 1;

  void validate() const
  {
    for (Index r : roi_size) {
      if (r < 1) {throw InvalidArgument("roi_size must be >= 1 on every axis");}
    }
    if (!(overlap >= 0.0 && overlap < 1.0)) {throw InvalidArgument("overlap must be in [0, 1)");}
    if (!(sigma_scale > 0.0)) {throw InvalidArgument("sigma_scale must be > 0");}
    if (stage1_count < 1) {throw InvalidArgument("stage1_count must be >= 1");}
    if (!(percentile_lo >= 0.0 && percentile_lo < percentile_hi && percentile_hi <= 100.0)) {
      throw InvalidArgument("percentiles must satisfy 0 <= lo < hi <= 100");
    }
    if (!(softclip_k > 0.0)) {throw InvalidArgument("softclip_k must be > 0");}
    if (jobs < 1) {throw InvalidArgument("jobs must be >= 1");}
  }
};

/// Per-voxel class probabilities on the grid of a source volume.
struct ProbMap
{
  /// Shape (1, C, x, y, z).
  Tensor<float> probs;
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};

  Index num_classes() const noexcept {return probs.channels();}
  Shape3 shape() const noexcept {return {probs.dim(2), probs.dim(3), probs.dim(4)};}

  /// Label volume of the most probable class; ties go to the lower class index.
  Volume argmax() const
  {
    const Index S = probs.spatial_size();
    std::vector<float> out(static_cast<std::size_t>(S));
    for (Index v = 0; v < S; ++v) {
      Index best = 0;
      float bp = probs.channel(0, 0)[v];
      for (Index c = 1; c < num_classes(); ++c) {
        if (probs.channel(0, c)[v] > bp) {
          bp = probs.channel(0, c)[v];
          best = c;
        }
      }
      out[v] = static_cast<float>(best);
    }
    return Volume(shape(), spacing, origin, VolumeKind::label, std::move(out));
  }
};

/// Maps a (1, 1, rx, ry, rz) window to (1, C, rx, ry, rz) logits.
using WindowPredictor = std::function<Tensor<float>(const Tensor<float> &)>;

namespace detail
{

/// Window start offsets along one axis of extent n >= roi.
inline std::vector<Index> window_starts(Index n, Index roi, double overlap)
{
  const Index stride = std::max<Index>(1, static_cast<Index>(std::floor(static_cast<double>(roi) * (1.0 - overlap))));
  const Index last = n - roi;
  std::vector<Index> s;
  for (Index p = 0; ; p += stride) {
    if (p >= last) {
      s.push_back(last);
      break;
    }
    s.push_back(p);
  }
  return s;
}

/// numpy-style "reflect" index (edge not repeated) for any integer position.
inline Index reflect_index(Index i, Index n)
{
  if (n == 1) {return 0;}
  const Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) {i += period;}
  return i < n ? i : period - i;
}

inline std::vector<double> blend_weights(const Shape3 & roi, BlendMode mode, double sigma_scale)
{
  std::vector<double> w(static_cast<std::size_t>(product(roi)), 1.0);
  if (mode == BlendMode::constant) {return w;}
  std::array<std::vector<double>, 3> ax;
  for (int a = 0; a < 3; ++a) {
    const double c = 0.5 * static_cast<double>(roi[a] - 1);
    const double sigma = sigma_scale * static_cast<double>(roi[a]);
    ax[a].resize(static_cast<std::size_t>(roi[a]));
    for (Index i = 0; i < roi[a]; ++i) {
      const double d = static_cast<double>(i) - c;
      ax[a][i] = std::exp(-d * d / (2.0 * sigma * sigma));
    }
  }
  Index o = 0;
  for (Index i = 0; i < roi[0]; ++i) {
    for (Index j = 0; j < roi[1]; ++j) {
      for (Index k = 0; k < roi[2]; ++k, ++o) {w[o] = ax[0][i] * ax[1][j] * ax[2][k];}
    }
  }
  // Keep the edge weights away from zero so every voxel stays covered.
  const double mx = *std::max_element(w.begin(), w.end());
  for (auto & v : w) {v = std::max(v / mx, 1e-3);}
  return w;
}

/// Run @p fn(i) for i in [0, n) on up to @p jobs threads.
inline void parallel_for(Index n, Index jobs, const std::function<void(Index)> & fn)
{
  if (jobs <= 1 || n <= 1) {
    for (Index i = 0; i < n; ++i) {fn(i);}
    return;
  }
  std::atomic<Index> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::vector<std::thread> pool;
  for (Index t = 0; t < std::min(jobs, n); ++t) {
    pool.emplace_back([&] {
        for (Index i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
  }
  for (auto & th : pool) {th.join();}
  for (auto & e : errors) {
    if (e) {std::rethrow_exception(e);}
  }
}

}  // namespace detail

/**
 * @brief Tile @p image with overlapping windows, predict each, and blend the softmax outputs.
 *
 * Axes shorter than the window are reflect-padded for prediction and cropped
 * back afterwards. The blended result is renormalised to sum to 1 per voxel.
 */
inline ProbMap sliding_window_predict(
  const WindowPredictor & predict, const Volume & image, const InferConfig & cfg)
{
  cfg.validate();
  const auto & s = image.shape();
  const auto & roi = cfg.roi_size;
  Shape3 padded{};
  for (int a = 0; a < 3; ++a) {padded[a] = std::max(s[a], roi[a]);}

  const auto starts_x = detail::window_starts(padded[0], roi[0], cfg.overlap);
  const auto starts_y = detail::window_starts(padded[1], roi[1], cfg.overlap);
  const auto starts_z = detail::window_starts(padded[2], roi[2], cfg.overlap);
  const auto weights = detail::blend_weights(roi, cfg.blend, cfg.sigma_scale);

  Index C = 0;
  std::vector<double> num;
  std::vector<double> den(static_cast<std::size_t>(product(padded)), 0.0);
  Tensor<float> window({1, 1, roi[0], roi[1], roi[2]});
  const Index Sp = product(padded);

  for (Index x0 : starts_x) {
    for (Index y0 : starts_y) {
      for (Index z0 : starts_z) {
        Index o = 0;
        for (Index i = 0; i < roi[0]; ++i) {
          const Index si = detail::reflect_index(x0 + i, s[0]);
          for (Index j = 0; j < roi[1]; ++j) {
            const Index sj = detail::reflect_index(y0 + j, s[1]);
            for (Index k = 0; k < roi[2]; ++k, ++o) {
              window[o] = image.at(si, sj, detail::reflect_index(z0 + k, s[2]));
            }
          }
        }
        const Tensor<float> logits = predict(window);
        if (logits.batch() != 1 || logits.dim(2) != roi[0] || logits.dim(3) != roi[1] || logits.dim(4) != roi[2]) {
          throw ShapeError("predictor returned " + Tensor<float>::shape_string(logits.shape()) +
                  " for a window of " + to_string(roi));
        }
        if (C == 0) {
          C = logits.channels();
          num.assign(static_cast<std::size_t>(C * Sp), 0.0);
        } else if (logits.channels() != C) {
          throw ShapeError("predictor changed its class count between windows");
        }
        const Tensor<float> p = softmax_channels(logits);
        o = 0;
        for (Index i = 0; i < roi[0]; ++i) {
          for (Index j = 0; j < roi[1]; ++j) {
            const Index row = ((x0 + i) * padded[1] + (y0 + j)) * padded[2] + z0;
            for (Index k = 0; k < roi[2]; ++k, ++o) {
              const double w = weights[o];
              den[row + k] += w;
              for (Index c = 0; c < C; ++c) {num[c * Sp + row + k] += w * p.channel(0, c)[o];}
            }
          }
        }
      }
    }
  }

  ProbMap out;
  out.spacing = image.spacing();
  out.origin = image.origin();
  out.probs = Tensor<float>({1, C, s[0], s[1], s[2]});
  std::vector<double> acc(static_cast<std::size_t>(C));
  Index o = 0;
  for (Index i = 0; i < s[0]; ++i) {
    for (Index j = 0; j < s[1]; ++j) {
      for (Index k = 0; k < s[2]; ++k, ++o) {
        const Index v = (i * padded[1] + j) * padded[2] + k;
        double total = 0.0;
        for (Index c = 0; c < C; ++c) {
          acc[c] = num[c * Sp + v] / den[v];
          total += acc[c];
        }
        for (Index c = 0; c < C; ++c) {out.probs.channel(0, c)[o] = static_cast<float>(acc[c] / total);}
      }
    }
  }
  return out;
}

/// Voxelwise mean of probability maps, summed in list order.
inline ProbMap ensemble_average(const std::vector<ProbMap> & maps)
{
  if (maps.empty()) {throw InvalidArgument("ensemble_average: no probability maps");}
  const auto & ref = maps.front();
  for (const auto & m : maps) {
    if (m.probs.shape() != ref.probs.shape()) {
      throw ShapeError("ensemble_average: map shapes " + Tensor<float>::shape_string(m.probs.shape()) +
              " and " + Tensor<float>::shape_string(ref.probs.shape()) + " differ");
    }
    if (m.spacing != ref.spacing) {throw ShapeError("ensemble_average: map spacings differ");}
  }
  const Index N = ref.probs.numel();
  std::vector<double> sum(static_cast<std::size_t>(N), 0.0);
  for (const auto & m : maps) {
    for (Index i = 0; i < N; ++i) {sum[i] += m.probs[i];}
  }
  ProbMap out;
  out.spacing = ref.spacing;
  out.origin = ref.origin;
  out.probs = Tensor<float>(ref.probs.shape());
  const double n = static_cast<double>(maps.size());
  for (Index i = 0; i < N; ++i) {out.probs[i] = static_cast<float>(sum[i] / n);}
  return out;
}

/// One ensemble member: its preprocessing contract plus a window predictor.
struct EnsembleMember
{
  NormalizationMode mode = NormalizationMode::zscore;
  Index fold = 0;
  Index repeat = 0;
  WindowPredictor predict;

  static EnsembleMember from_checkpoint(const Checkpoint & c)
  {
    auto model = std::make_shared<SegResNet<float>>(c.build_model());
    EnsembleMember m;
    m.mode = c.normalization_mode;
    m.fold = c.fold;
    m.repeat = c.repeat;
    m.predict = [model](const Tensor<float> & x) {return model->forward(x, false).logits;};
    return m;
  }
};

struct TwoStageReport
{
  PercentileBounds bounds{0.0, 0.0};
  bool fallback = false;
  std::string fallback_reason;
  Index stage1_foreground_voxels = 0;
  Index stage1_models = 0;
  Index stage2_models = 0;
  double seconds_preprocess = 0.0;
  double seconds_stage1 = 0.0;
  double seconds_stage2 = 0.0;
  double seconds_postprocess = 0.0;

  nlohmann::json to_json() const
  {
    return {
      {"bounds", {{"lo", bounds.lo}, {"hi", bounds.hi}}},
      {"fallback", fallback},
      {"fallback_reason", fallback_reason},
      {"stage1_foreground_voxels", stage1_foreground_voxels},
      {"stage1_models", stage1_models},
      {"stage2_models", stage2_models},
      {"timings_s", {
          {"preprocess", seconds_preprocess},
          {"stage1", seconds_stage1},
          {"stage2", seconds_stage2},
          {"postprocess", seconds_postprocess}}},
    };
  }
};

struct TwoStageResult
{
  /// Final mask on the raw image grid.
  Volume mask;
  /// Ensemble probabilities on the resampled grid.
  ProbMap probs;
  TwoStageReport report;
};

/**
 * @brief Two-stage adaptive-normalisation ensemble inference.
 *
 * Stage 1 (the repeat-0 z-score members, one per fold) locates the vessel; the
 * intensity percentiles inside that mask define a soft-clipped renormalisation
 * on which the remaining members run. All member maps are averaged, argmaxed,
 * reduced to the largest component and resampled back to the raw grid.
 */
inline TwoStageResult two_stage_predict(
  const std::vector<EnsembleMember> & members, const Volume & raw_image, const Vec3 & target_spacing,
  const InferConfig & cfg)
{
  using clock = std::chrono::steady_clock;
  auto seconds = [](clock::time_point a, clock::time_point b) {
      return std::chrono::duration<double>(b - a).count();
    };
  cfg.validate();

  std::vector<const EnsembleMember *> stage1;
  std::vector<const EnsembleMember *> stage2;
  for (const auto & m : members) {
    (m.repeat == 0 && m.mode == NormalizationMode::zscore ? stage1 : stage2).push_back(&m);
  }
  auto by_repeat_fold = [](const EnsembleMember * a, const EnsembleMember * b) {
      return std::tie(a->repeat, a->fold) < std::tie(b->repeat, b->fold);
    };
  std::sort(stage1.begin(), stage1.end(), by_repeat_fold);
  std::sort(stage2.begin(), stage2.end(), by_repeat_fold);
  if (static_cast<Index>(stage1.size()) != cfg.stage1_count) {
    throw InvalidArgument("two_stage_predict: expected " + std::to_string(cfg.stage1_count) +
            " repeat-0 z-score members for stage 1, found " + std::to_string(stage1.size()));
  }
  if (stage2.empty()) {throw InvalidArgument("two_stage_predict: no stage-2 members");}
  const auto expected_mode = cfg.paper_literal ? NormalizationMode::zscore : NormalizationMode::percentile_softclip;
  for (const auto * m : stage2) {
    if (m->mode != expected_mode) {
      throw InvalidArgument("two_stage_predict: stage-2 member fold " + std::to_string(m->fold) + " repeat " +
              std::to_string(m->repeat) + " was trained with " + to_string(m->mode) + ", expected " +
              to_string(expected_mode) + (cfg.paper_literal ? "" : " (use paper-literal mode for z-score ensembles)"));
    }
  }

  TwoStageResult res;
  auto & rep = res.report;
  rep.stage1_models = static_cast<Index>(stage1.size());
  rep.stage2_models = static_cast<Index>(stage2.size());

  auto t0 = clock::now();
  const Volume resampled = resample(raw_image, target_spacing);
  const Volume zscored = zscore_normalize(resampled);
  auto t1 = clock::now();
  rep.seconds_preprocess = seconds(t0, t1);

  auto run = [&](const std::vector<const EnsembleMember *> & ms, const Volume & input) {
      std::vector<ProbMap> maps(ms.size());
      detail::parallel_for(static_cast<Index>(ms.size()), cfg.jobs, [&](Index i) {
          maps[i] = sliding_window_predict(ms[i]->predict, input, cfg);
        });
      return maps;
    };

  std::vector<ProbMap> maps = run(stage1, zscored);
  const Volume stage1_mask = binarize(ensemble_average(maps).argmax(), 1.0f);
  rep.stage1_foreground_voxels = stage1_mask.count_nonzero();
  auto t2 = clock::now();
  rep.seconds_stage1 = seconds(t1, t2);

  Volume stage2_input = zscored;
  if (rep.stage1_foreground_voxels == 0) {
    rep.fallback = true;
    rep.fallback_reason = "empty stage-1 foreground";
  } else {
    rep.bounds = foreground_percentile_bounds(resampled, stage1_mask, cfg.percentile_lo, cfg.percentile_hi);
    if (!(rep.bounds.lo < rep.bounds.hi)) {
      rep.fallback = true;
      rep.fallback_reason = "degenerate intensity bounds";
    } else {
      stage2_input = softclip_rescale(resampled, rep.bounds, cfg.softclip_k);
    }
  }
  if (rep.fallback) {warn("two_stage_predict: " + rep.fallback_reason + "; stage 2 runs on z-scored input");}
  auto more = run(stage2, stage2_input);
  for (auto & m : more) {maps.push_back(std::move(m));}
  auto t3 = clock::now();
  rep.seconds_stage2 = seconds(t2, t3);

  res.probs = ensemble_average(maps);
  Volume mask = res.probs.argmax();
  if (cfg.postfilter) {mask = largest_component(mask);}
  if (mask.shape() != raw_image.shape() || mask.spacing() != raw_image.spacing()) {
    mask = resample_to_grid(mask, raw_image.shape(), raw_image.spacing(), Interpolation::nearest);
  }
  res.mask = Volume(raw_image.shape(), raw_image.spacing(), raw_image.origin(), VolumeKind::label,
    std::vector<float>(mask.values()));
  rep.seconds_postprocess = seconds(t3, clock::now());
  return res;
}

inline TwoStageResult two_stage_predict(
  const std::vector<Checkpoint> & checkpoints, const Volume & raw_image, const InferConfig & cfg)
{
  if (checkpoints.empty()) {throw InvalidArgument("two_stage_predict: no checkpoints");}
  std::vector<EnsembleMember> members;
  for (const auto & c : checkpoints) {
    if (c.target_spacing != checkpoints.front().target_spacing) {
      throw InvalidArgument("two_stage_predict: checkpoints disagree on target spacing");
    }
    members.push_back(EnsembleMember::from_checkpoint(c));
  }
  return two_stage_predict(members, raw_image, checkpoints.front().target_spacing, cfg);
}

}  // namespace aortaseg

#endif  // AORTASEG_INFER_HPP_
