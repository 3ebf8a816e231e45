#include <gtest/gtest.h>

#include <fstream>

#include "test_util.hpp"

using namespace aortaseg;

TEST(ExperimentConfig, MinimalConfigUsesDefaults)
{
  const auto cfg = parse_experiment_config("modality: CT\ndatalist: ./dataset.json\ndataroot: /data/seg.a23\n", "/base");
  EXPECT_EQ(cfg.modality, "CT");
  EXPECT_EQ(cfg.datalist, fs::path("/base/./dataset.json"));
  EXPECT_EQ(cfg.dataroot, fs::path("/data/seg.a23"));
  EXPECT_EQ(cfg.train.lr0, 2e-4);
  EXPECT_EQ(cfg.train.folds, 5);
  EXPECT_EQ(cfg.train.repeats, 3);
  EXPECT_EQ(cfg.infer.roi_size, cfg.train.augment.crop_size);
  EXPECT_EQ(cfg.infer.stage1_count, 5);
}

TEST(ExperimentConfig, OverridesEverySection)
{
  const std::string text = R"(
modality: CT
datalist: d.json
train: {lr0: 0.002, epochs: 7, folds: 3, repeats: 2, effective_batch: 2, target_spacing: [1, 1, 1], paper_literal: true}
arch: {init_filters: 4, blocks_per_stage: [1, 2], deep_supervision_levels: 1}
loss: {focal_gamma: 1.5}
augment: {crop_size: 16, p_affine: 0.3}
infer: {overlap: 0.5, blend: constant, postfilter: false}
)";
  const auto cfg = parse_experiment_config(text);
  EXPECT_EQ(cfg.train.lr0, 0.002);
  EXPECT_EQ(cfg.train.epochs, 7);
  EXPECT_EQ(cfg.train.folds, 3);
  EXPECT_TRUE(cfg.train.paper_literal);
  EXPECT_EQ(cfg.train.arch.init_filters, 4);
  EXPECT_EQ(cfg.train.arch.blocks_per_stage, (std::vector<Index>{1, 2}));
  EXPECT_EQ(cfg.train.loss.focal_gamma, 1.5);
  EXPECT_EQ(cfg.train.augment.crop_size, (Shape3{16, 16, 16}));
  EXPECT_EQ(cfg.train.augment.p_affine, 0.3);
  EXPECT_EQ(cfg.infer.roi_size, (Shape3{16, 16, 16}));
  EXPECT_EQ(cfg.infer.overlap, 0.5);
  EXPECT_EQ(cfg.infer.blend, BlendMode::constant);
  EXPECT_FALSE(cfg.infer.postfilter);
  EXPECT_TRUE(cfg.infer.paper_literal);
  EXPECT_EQ(cfg.infer.stage1_count, 3);
}

TEST(ExperimentConfig, UnknownKeysAreRejectedWithTheirPath)
{
  try {
    parse_experiment_config("modality: CT\ndatalist: d.json\ntrain: {lr: 0.1}\n");
    FAIL();
  } catch (const InvalidArgument & e) {
    EXPECT_NE(std::string(e.what()).find("train.lr"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_experiment_config("modality: CT\ndatalist: d.json\nextra: 1\n"), InvalidArgument);
}

TEST(ExperimentConfig, InvalidInputs)
{
  EXPECT_THROW(parse_experiment_config("modality: MR\ndatalist: d.json\n"), InvalidArgument);
  EXPECT_THROW(parse_experiment_config("modality: CT\n"), InvalidArgument);
  EXPECT_THROW(parse_experiment_config("modality: CT\ndatalist: d.json\ntrain: {epochs: many}\n"), InvalidArgument);
  EXPECT_THROW(parse_experiment_config("modality: CT\ndatalist: d.json\naugment: {crop_size: [1, 2]}\n"), InvalidArgument);
  EXPECT_THROW(parse_experiment_config("modality: CT\ndatalist: d.json\ntrain: {lr0: -1}\n"), InvalidArgument);
  EXPECT_THROW(parse_experiment_config("modality: CT\ndatalist: d.json\ninfer: {blend: box}\n"), InvalidArgument);
  EXPECT_THROW(parse_experiment_config("[1, 2"), InvalidArgument);
  EXPECT_THROW(parse_experiment_config("modality: CT\ndatalist: d.json\ntrain: 3\n"), InvalidArgument);
}

TEST(ExperimentConfig, LoadResolvesRelativeToFile)
{
  const auto dir = testutil::scratch_dir("config");
  std::ofstream(dir / "exp.yaml") << "modality: CT\ndatalist: sub/dataset.json\ndataroot: data\n";
  const auto cfg = load_experiment_config(dir / "exp.yaml");
  EXPECT_EQ(fs::weakly_canonical(cfg.datalist), fs::weakly_canonical(dir / "sub/dataset.json"));
  EXPECT_EQ(fs::weakly_canonical(cfg.dataroot), fs::weakly_canonical(dir / "data"));
  EXPECT_THROW(load_experiment_config(dir / "missing.yaml"), IoError);
}

TEST(ExperimentConfig, TrainConfigSerializesEveryField)
{
  const auto j = to_json(TrainConfig{});
  for (const char * key : {"lr0", "epochs", "folds", "repeats", "seed", "effective_batch", "target_spacing"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j["lr0"].get<double>(), 2e-4);
}
