#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace aortaseg;
using namespace aortaseg::nn;
using testutil::random_tensor;
using testutil::rel_err;

namespace
{

/// Direct 7-loop convolution with zero padding.
Tensor<double> naive_conv(const Tensor<double> & x, const std::vector<double> & w, const std::vector<double> & b,
  const ConvGeometry & g)
{
  const Shape3 out = g.out_shape(x.spatial());
  const Index k = g.kernel;
  Tensor<double> y({x.batch(), g.out_channels, out[0], out[1], out[2]});
  for (Index n = 0; n < x.batch(); ++n) {
    for (Index co = 0; co < g.out_channels; ++co) {
      for (Index ox = 0; ox < out[0]; ++ox) {
        for (Index oy = 0; oy < out[1]; ++oy) {
          for (Index oz = 0; oz < out[2]; ++oz) {
            double acc = b.empty() ? 0.0 : b[co];
            for (Index ci = 0; ci < g.in_channels; ++ci) {
              for (Index a = 0; a < k; ++a) {
                for (Index c = 0; c < k; ++c) {
                  for (Index d = 0; d < k; ++d) {
                    const Index ix = ox * g.stride - g.pad + a;
                    const Index iy = oy * g.stride - g.pad + c;
                    const Index iz = oz * g.stride - g.pad + d;
                    if (ix < 0 || iy < 0 || iz < 0 || ix >= x.dim(2) || iy >= x.dim(3) || iz >= x.dim(4)) {continue;}
                    acc += w[(((co * g.in_channels + ci) * k + a) * k + c) * k + d] * x.at(n, ci, ix, iy, iz);
                  }
                }
              }
            }
            y.at(n, co, ox, oy, oz) = acc;
          }
        }
      }
    }
  }
  return y;
}

double dot(const Tensor<double> & a, const Tensor<double> & b)
{
  double s = 0;
  for (Index i = 0; i < a.numel(); ++i) {s += a[i] * b[i];}
  return s;
}

/// Central-difference check of d(sum(probe * f(x)))/dx against an analytic gradient.
template<typename F>
double max_fd_error(Tensor<double> & x, const Tensor<double> & analytic, F && objective, std::mt19937_64 & rng,
  int samples, double h = 1e-5)
{
  std::uniform_int_distribution<Index> pick(0, x.numel() - 1);
  double worst = 0;
  for (int s = 0; s < samples; ++s) {
    const Index i = pick(rng);
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = objective();
    x[i] = orig - h;
    const double fm = objective();
    x[i] = orig;
    worst = std::max(worst, rel_err((fp - fm) / (2 * h), analytic[i], 1e-4));
  }
  return worst;
}

}  // namespace

struct ConvCase
{
  Index cin;
  Index cout;
  Index kernel;
  Index stride;
  Shape3 in;
};

class ConvOracle : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvOracle, ForwardMatchesNaive)
{
  const auto c = GetParam();
  const ConvGeometry g{c.cin, c.cout, c.kernel, c.stride, c.kernel / 2};
  std::mt19937_64 rng(31);
  const auto x = random_tensor<double>(rng, {2, c.cin, c.in[0], c.in[1], c.in[2]});
  const auto wt = random_tensor<double>(rng, {1, 1, 1, 1, c.cout * g.patch()});
  const auto bt = random_tensor<double>(rng, {1, 1, 1, 1, c.cout});
  const auto y = conv_forward(x, wt.vec(), bt.data(), g);
  const auto ref = naive_conv(x, wt.vec(), bt.vec(), g);
  ASSERT_EQ(y.shape(), ref.shape());
  for (Index i = 0; i < y.numel(); ++i) {ASSERT_NEAR(y[i], ref[i], 1e-12);}
}

TEST_P(ConvOracle, BackwardIsTheAdjoint)
{
  // <conv(x), dy> == <x, conv_backward_data(dy)> and d<conv(x), dy>/dw == conv_backward_weight.
  const auto c = GetParam();
  const ConvGeometry g{c.cin, c.cout, c.kernel, c.stride, c.kernel / 2};
  std::mt19937_64 rng(37);
  const auto x = random_tensor<double>(rng, {2, c.cin, c.in[0], c.in[1], c.in[2]});
  const auto wt = random_tensor<double>(rng, {1, 1, 1, 1, c.cout * g.patch()});
  const auto y = conv_forward(x, wt.vec(), static_cast<const double *>(nullptr), g);
  const auto dy = random_tensor<double>(rng, y.shape());
  const auto dx = conv_backward_data(dy, wt.vec(), g, x.spatial());
  EXPECT_NEAR(dot(y, dy), dot(x, dx), 1e-9 * std::max(1.0, std::abs(dot(y, dy))));

  std::vector<double> dw(wt.vec().size(), 0.0);
  conv_backward_weight(x, dy, g, dw);
  for (std::size_t j = 0; j < dw.size(); j += std::max<std::size_t>(1, dw.size() / 17)) {
    auto w1 = wt.vec();
    w1[j] += 1.0;
    const auto y1 = conv_forward(x, w1, static_cast<const double *>(nullptr), g);
    // The objective is linear in w, so a unit step gives the exact derivative.
    EXPECT_NEAR(dot(y1, dy) - dot(y, dy), dw[j], 1e-9 * std::max(1.0, std::abs(dw[j])));
  }
}

INSTANTIATE_TEST_SUITE_P(Geometries, ConvOracle, ::testing::Values(
    ConvCase{1, 2, 3, 1, {4, 5, 3}},
    ConvCase{3, 2, 3, 2, {6, 4, 5}},
    ConvCase{2, 3, 1, 1, {3, 3, 2}},
    ConvCase{2, 2, 3, 2, {1, 2, 2}}));

TEST(ConvTranspose, DoublesExtentAndIsAdjointOfStridedConv)
{
  std::mt19937_64 rng(41);
  std::mt19937_64 init(1);
  nn::ConvTranspose3d<double> up("up", 4, 2, init);
  const auto x = random_tensor<double>(rng, {1, 4, 2, 3, 2});
  const auto y = up.forward(x, true);
  EXPECT_EQ(y.shape(), (Tensor<double>::Shape{1, 2, 4, 6, 4}));
  // Gradient wrt input is the strided conv with the same weights.
  const auto dy = random_tensor<double>(rng, y.shape());
  auto params = nn::ParameterRefs<double>{};
  up.collect(params);
  const auto dx = up.backward(dy);
  const ConvGeometry g{2, 4, 3, 2, 1};
  const auto ref = conv_forward(dy, params[0]->value, static_cast<const double *>(nullptr), g);
  for (Index i = 0; i < dx.numel(); ++i) {EXPECT_NEAR(dx[i], ref[i], 1e-12);}
  // Bias adds uniformly.
  double s = 0;
  for (Index v = 0; v < dy.spatial_size(); ++v) {s += dy.channel(0, 1)[v];}
  EXPECT_NEAR(params[1]->grad[1], s, 1e-9);
}

TEST(BatchNorm, TrainingNormalisesAndGradientMatchesFiniteDifferences)
{
  std::mt19937_64 rng(43);
  nn::BatchNorm3d<double> bn("bn", 3);
  auto x = random_tensor<double>(rng, {2, 3, 3, 2, 2}, 3.0);
  const auto y = bn.forward(x, true);
  for (Index c = 0; c < 3; ++c) {
    double m = 0;
    double v = 0;
    for (Index n = 0; n < 2; ++n) {
      for (Index i = 0; i < y.spatial_size(); ++i) {m += y.channel(n, c)[i];}
    }
    m /= 2.0 * y.spatial_size();
    for (Index n = 0; n < 2; ++n) {
      for (Index i = 0; i < y.spatial_size(); ++i) {v += std::pow(y.channel(n, c)[i] - m, 2);}
    }
    v /= 2.0 * y.spatial_size();
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-4);
  }
  const auto probe = random_tensor<double>(rng, y.shape());
  const auto dx = bn.backward(probe);
  auto objective = [&] {
      nn::BatchNorm3d<double> fresh("bn", 3);
      return dot(fresh.forward(x, true), probe);
    };
  EXPECT_LT(max_fd_error(x, dx, objective, rng, 30), 1e-6);
}

TEST(BatchNorm, EvalModeUsesRunningStatistics)
{
  nn::BatchNorm3d<double> bn("bn", 1);
  const Tensor<double> x({1, 1, 1, 1, 4}, std::vector<double>{1, 2, 3, 4});
  bn.forward(x, true);
  // running_mean = 0.1 * 2.5; running_var = 0.9 + 0.1 * var_unbiased(1..4).
  const double rm = 0.25;
  const double rv = 0.9 + 0.1 * (5.0 / 3.0);
  const auto y = bn.forward(x, false);
  for (Index i = 0; i < 4; ++i) {EXPECT_NEAR(y[i], (x[i] - rm) / std::sqrt(rv + 1e-5), 1e-12);}
}

TEST(ResBlock, GradientMatchesFiniteDifferences)
{
  std::mt19937_64 rng(47);
  auto x = random_tensor<double>(rng, {2, 2, 3, 3, 2});
  std::mt19937_64 init(5);
  nn::ResBlock<double> blk("b", 2, init);
  const auto y = blk.forward(x, true);
  const auto probe = random_tensor<double>(rng, y.shape());
  const auto dx = blk.backward(probe);
  auto objective = [&] {
      std::mt19937_64 again(5);
      nn::ResBlock<double> fresh("b", 2, again);
      return dot(fresh.forward(x, true), probe);
    };
  EXPECT_LT(max_fd_error(x, dx, objective, rng, 30), 1e-5);
}

TEST(SegResNet, DefaultChannelWidths)
{
  const ArchConfig a;
  std::vector<Index> w;
  for (Index s = 0; s < a.num_stages(); ++s) {w.push_back(a.stage_channels(s));}
  EXPECT_EQ(w, (std::vector<Index>{32, 64, 128, 256, 512}));
  EXPECT_EQ(a.size_divisor(), 16);
}

TEST(SegResNet, ShapeContractOnRandomSmallConfigs)
{
  std::mt19937_64 rng(53);
  std::uniform_int_distribution<Index> nstages(2, 4);
  std::uniform_int_distribution<Index> nblocks(1, 2);
  std::uniform_int_distribution<Index> filters(1, 3);
  std::uniform_int_distribution<Index> classes(2, 3);
  std::uniform_int_distribution<Index> mult(1, 2);
  for (int t = 0; t < 8; ++t) {
    ArchConfig a;
    a.init_filters = filters(rng);
    a.blocks_per_stage.assign(static_cast<std::size_t>(nstages(rng)), 1);
    for (auto & b : a.blocks_per_stage) {b = nblocks(rng);}
    a.num_classes = classes(rng);
    a.deep_supervision_levels = std::uniform_int_distribution<Index>(0, a.num_stages() - 1)(rng);
    SegResNet<float> net(a, static_cast<std::uint64_t>(t));
    const Index d = a.size_divisor();
    const Shape3 in{d * mult(rng), d * mult(rng), d * mult(rng)};
    const auto x = random_tensor<float>(rng, {1, 1, in[0], in[1], in[2]});
    const auto r = net.forward(x, false);
    EXPECT_EQ(r.logits.shape(), (Tensor<float>::Shape{1, a.num_classes, in[0], in[1], in[2]}));
    ASSERT_EQ(static_cast<Index>(r.ds_outputs.size()), a.deep_supervision_levels);
    for (std::size_t i = 0; i < r.ds_outputs.size(); ++i) {
      const Index f = Index(1) << (i + 1);
      EXPECT_EQ(r.ds_outputs[i].shape(), (Tensor<float>::Shape{1, a.num_classes, in[0] / f, in[1] / f, in[2] / f}));
    }
    EXPECT_EQ(r.bottleneck_channels, a.stage_channels(a.num_stages() - 1));
    EXPECT_EQ(r.bottleneck_spatial, (Shape3{in[0] / d, in[1] / d, in[2] / d}));
  }
}

TEST(SegResNet, DefaultConfigOn32CubeHasExpectedHeadShapes)
{
  // Scaled-down stand-in for a 64^3 input: 32^3 with the default 5-stage layout gives a 2^3 bottleneck.
  ArchConfig a;
  a.init_filters = 2;
  SegResNet<float> net(a, 0);
  std::mt19937_64 rng(1);
  const auto r = net.forward(random_tensor<float>(rng, {1, 1, 32, 32, 32}), false);
  EXPECT_EQ(r.logits.shape(), (Tensor<float>::Shape{1, 2, 32, 32, 32}));
  ASSERT_EQ(r.ds_outputs.size(), 3u);
  EXPECT_EQ(r.ds_outputs[0].shape(), (Tensor<float>::Shape{1, 2, 16, 16, 16}));
  EXPECT_EQ(r.ds_outputs[1].shape(), (Tensor<float>::Shape{1, 2, 8, 8, 8}));
  EXPECT_EQ(r.ds_outputs[2].shape(), (Tensor<float>::Shape{1, 2, 4, 4, 4}));
  EXPECT_EQ(r.bottleneck_channels, 32);
  EXPECT_EQ(r.bottleneck_spatial, (Shape3{2, 2, 2}));
}

TEST(SegResNet, IndivisibleInputNamesAxis)
{
  ArchConfig a;
  a.init_filters = 1;
  SegResNet<float> net(a, 0);
  try {
    net.forward(Tensor<float>({1, 1, 64, 64, 60}), false);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError & e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("axis z"), std::string::npos) << msg;
    EXPECT_NE(msg.find("60"), std::string::npos) << msg;
  }
}

TEST(SegResNet, InvalidConfigRejected)
{
  EXPECT_THROW(SegResNet<float>(testutil::tiny_arch(2, {1}, 0), 0), InvalidArgument);
  EXPECT_THROW(SegResNet<float>(testutil::tiny_arch(0, {1, 1}, 0), 0), InvalidArgument);
  EXPECT_THROW(SegResNet<float>(testutil::tiny_arch(2, {1, 1}, 2), 0), InvalidArgument);
}

TEST(SegResNet, SeedDeterminesParametersBitwise)
{
  SegResNet<float> a(testutil::tiny_arch(3, {1, 2, 1}, 2), 17);
  SegResNet<float> b(testutil::tiny_arch(3, {1, 2, 1}, 2), 17);
  SegResNet<float> c(testutil::tiny_arch(3, {1, 2, 1}, 2), 18);
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  const auto pc = c.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->name, pb[i]->name);
    EXPECT_EQ(pa[i]->value, pb[i]->value);
    differs = differs || pa[i]->value != pc[i]->value;
  }
  EXPECT_TRUE(differs);
}

TEST(SegResNet, DefaultParameterCountIsPinned)
{
  // stem 27*32; encoder blocks 2*(27 c^2) + 4c each; downsampling 27*c_prev*c;
  // decoder up 27*c_in*c_out + c_out, block as above; heads 33*2 + DS heads (c+1)*2.
  auto block = [](Index c) {return 2 * 27 * c * c + 4 * c;};
  const Index ch[] = {32, 64, 128, 256, 512};
  const Index nb[] = {1, 2, 2, 4, 4};
  Index expect = 27 * 32;
  for (int s = 0; s < 5; ++s) {
    if (s > 0) {expect += 27 * ch[s - 1] * ch[s];}
    expect += nb[s] * block(ch[s]);
  }
  for (int l = 0; l < 4; ++l) {expect += 27 * ch[l + 1] * ch[l] + ch[l] + block(ch[l]);}
  expect += (32 + 1) * 2;
  for (int i = 0; i < 3; ++i) {expect += (ch[i + 1] + 1) * 2;}
  SegResNet<float> a(ArchConfig{}, 1);
  SegResNet<float> b(ArchConfig{}, 2);
  EXPECT_EQ(a.trainable_parameter_count(), expect);
  EXPECT_EQ(b.trainable_parameter_count(), expect);
}

TEST(SegResNet, EvalForwardIsBitwiseDeterministic)
{
  SegResNet<float> net(testutil::tiny_arch(4, {1, 1, 1}, 2), 3);
  std::mt19937_64 rng(2);
  const auto x = random_tensor<float>(rng, {1, 1, 8, 8, 8});
  const auto a = net.forward(x, false);
  const auto b = net.forward(x, false);
  EXPECT_EQ(a.logits.vec(), b.logits.vec());
  for (std::size_t i = 0; i < a.ds_outputs.size(); ++i) {EXPECT_EQ(a.ds_outputs[i].vec(), b.ds_outputs[i].vec());}
}

TEST(SegResNet, EveryTrainableParameterReceivesGradient)
{
  SegResNet<double> net(testutil::tiny_arch(2, {1, 2, 1}, 2), 9);
  std::mt19937_64 rng(4);
  const auto x = random_tensor<double>(rng, {2, 1, 8, 8, 4});
  const auto r = net.forward(x, true);
  std::vector<Tensor<double>> dds;
  for (const auto & d : r.ds_outputs) {dds.push_back(random_tensor<double>(rng, d.shape()));}
  net.zero_grad();
  net.backward(random_tensor<double>(rng, r.logits.shape()), dds);
  for (auto * p : net.parameters()) {
    if (!p->trainable) {continue;}
    double n = 0;
    for (double g : p->grad) {n += g * g;}
    EXPECT_GT(n, 0.0) << p->name;
  }
}

TEST(SegResNet, EndToEndGradientMatchesFiniteDifferences)
{
  const ArchConfig arch = testutil::tiny_arch(2, {1, 1}, 1);
  SegResNet<double> net(arch, 11);
  std::mt19937_64 rng(6);
  auto x = random_tensor<double>(rng, {2, 1, 4, 4, 2});
  const auto r = net.forward(x, true);
  const auto pl = random_tensor<double>(rng, r.logits.shape());
  const auto pd = random_tensor<double>(rng, r.ds_outputs[0].shape());
  net.zero_grad();
  const auto dx = net.backward(pl, {pd});
  // Snapshot analytic parameter gradients before the probing forwards.
  std::vector<std::vector<double>> grads;
  for (auto * p : net.parameters()) {grads.push_back(p->grad);}

  auto objective = [&] {
      const auto o = net.forward(x, true);
      return dot(o.logits, pl) + dot(o.ds_outputs[0], pd);
    };
  // Running statistics change with each training forward but do not affect training-mode outputs.
  EXPECT_LT(max_fd_error(x, dx, objective, rng, 20), 1e-5);

  auto params = net.parameters();
  double worst = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto * p = params[i];
    if (!p->trainable) {continue;}
    for (std::size_t j = 0; j < p->value.size(); j += std::max<std::size_t>(1, p->value.size() / 3)) {
      const double orig = p->value[j];
      const double h = 1e-5;
      p->value[j] = orig + h;
      const double fp = objective();
      p->value[j] = orig - h;
      const double fm = objective();
      p->value[j] = orig;
      worst = std::max(worst, rel_err((fp - fm) / (2 * h), grads[i][j], 1e-4));
    }
  }
  EXPECT_LT(worst, 1e-5);
}
