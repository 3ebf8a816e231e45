#ifndef AORTASEG_SEGRESNET_HPP_
#define AORTASEG_SEGRESNET_HPP_

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "aortaseg/nn/layers.hpp"
#include "aortaseg/normalize.hpp"

namespace aortaseg
{

/// Network shape. Stage s runs at 1/2^s resolution with init_filters * 2^s channels.
struct ArchConfig
{
  Index init_filters = 32;
  std::vector<Index> blocks_per_stage{1, 2, 2, 4, 4};
  Index kernel = 3;
  Index in_channels = 1;
  Index num_classes = 2;
  Index deep_supervision_levels = 3;

  Index num_stages() const noexcept {return static_cast<Index>(blocks_per_stage.size());}
  Index stage_channels(Index s) const noexcept {return init_filters << s;}
  /// Spatial extents of the input must be multiples of this.
  Index size_divisor() const noexcept {return Index(1) << (num_stages() - 1);}

  void validate() const
  {
    if (blocks_per_stage.size() < 2) {throw InvalidArgument("ArchConfig needs at least 2 stages");}
    for (Index b : blocks_per_stage) {
      if (b < 1) {throw InvalidArgument("ArchConfig: every stage needs at least one block");}
    }
    if (init_filters < 1) {throw InvalidArgument("ArchConfig: init_filters must be >= 1");}
    if (kernel != 3) {throw InvalidArgument("ArchConfig: only 3x3x3 kernels are supported");}
    if (in_channels < 1 || num_classes < 2) {
      throw InvalidArgument("ArchConfig: need in_channels >= 1 and num_classes >= 2");
    }
    if (deep_supervision_levels < 0 || deep_supervision_levels >= num_stages()) {
      throw InvalidArgument("ArchConfig: deep_supervision_levels must be in [0, num_stages)");
    }
  }

  bool operator==(const ArchConfig &) const = default;
};

/// Output of one forward pass.
template<typename T>
struct ForwardResult
{
  Tensor<T> logits;
  /// ds_outputs[i] is at 1/2^(i+1) of the input resolution.
  std::vector<Tensor<T>> ds_outputs;
  /// Deepest encoder feature map.
  Shape3 bottleneck_spatial{};
  Index bottleneck_channels = 0;
};

/**
 * @brief Residual encoder-decoder with additive skips and deep-supervision heads.
 *
 * Encoder: a 3x3x3 stem, then per stage an optional stride-2 downsampling
 * convolution followed by pre-activation residual blocks. Decoder: per level a
 * transposed convolution halving channels and doubling extent, addition of the
 * encoder output at that scale, and one residual block. 1x1x1 heads produce
 * class scores at full resolution and at the coarser decoder levels.
 */
template<typename T>
class SegResNet
{
public:
  SegResNet() = default;

  SegResNet(ArchConfig cfg, std::uint64_t seed)
  : cfg_(std::move(cfg)), seed_(seed)
  {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const Index S = cfg_.num_stages();
    stem_ = nn::Conv3d<T>("stem", cfg_.in_channels, cfg_.init_filters, 3, 1, false, rng);
    encoder_.resize(static_cast<std::size_t>(S));
    for (Index s = 0; s < S; ++s) {
      auto & st = encoder_[s];
      const std::string name = "encoder." + std::to_string(s);
      const Index ch = cfg_.stage_channels(s);
      if (s > 0) {
        st.down = nn::Conv3d<T>(name + ".down", cfg_.stage_channels(s - 1), ch, 3, 2, false, rng);
      }
      for (Index b = 0; b < cfg_.blocks_per_stage[s]; ++b) {
        st.blocks.emplace_back(name + ".block" + std::to_string(b), ch, rng);
      }
    }
    decoder_.resize(static_cast<std::size_t>(S - 1));
    for (Index l = S - 2; l >= 0; --l) {
      const std::string name = "decoder." + std::to_string(l);
      decoder_[l].up = nn::ConvTranspose3d<T>(name + ".up", cfg_.stage_channels(l + 1), cfg_.stage_channels(l), rng);
      decoder_[l].block = nn::ResBlock<T>(name + ".block", cfg_.stage_channels(l), rng);
    }
    head_ = nn::Conv3d<T>("head", cfg_.init_filters, cfg_.num_classes, 1, 1, true, rng);
    for (Index i = 0; i < cfg_.deep_supervision_levels; ++i) {
      ds_heads_.emplace_back("ds_head." + std::to_string(i), cfg_.stage_channels(i + 1),
        cfg_.num_classes, 1, 1, true, rng);
    }
  }

  const ArchConfig & config() const noexcept {return cfg_;}
  std::uint64_t seed() const noexcept {return seed_;}

  /// All tensors in a fixed order, trainable or not.
  nn::ParameterRefs<T> parameters()
  {
    nn::ParameterRefs<T> out;
    stem_.collect(out);
    for (auto & st : encoder_) {
      if (st.down) {st.down->collect(out);}
      for (auto & b : st.blocks) {b.collect(out);}
    }
    for (auto & d : decoder_) {
      d.up.collect(out);
      d.block.collect(out);
    }
    head_.collect(out);
    for (auto & h : ds_heads_) {h.collect(out);}
    return out;
  }

  Index trainable_parameter_count()
  {
    Index n = 0;
    for (auto * p : parameters()) {
      if (p->trainable) {n += static_cast<Index>(p->value.size());}
    }
    return n;
  }

  void zero_grad()
  {
    for (auto * p : parameters()) {p->zero_grad();}
  }

  void check_input(const Tensor<T> & x) const
  {
    if (x.channels() != cfg_.in_channels) {
      throw ShapeError("network expects " + std::to_string(cfg_.in_channels) +
              " input channel(s), got " + std::to_string(x.channels()));
    }
    static const char * axes[] = {"x", "y", "z"};
    const Index div = cfg_.size_divisor();
    for (int a = 0; a < 3; ++a) {
      const Index n = x.dim(2 + a);
      if (n < div || n % div != 0) {
        throw ShapeError(std::string("input extent ") + std::to_string(n) + " on axis " + axes[a] +
                " is not divisible by " + std::to_string(div) + " (2^(stages-1))");
      }
    }
  }

  /**
   * @brief Run the network.
   *
   * With @p training set, batch statistics are used and activations are cached
   * for backward(); otherwise running statistics are used and nothing is cached.
   */
  ForwardResult<T> forward(const Tensor<T> & x, bool training)
  {
    check_input(x);
    const Index S = cfg_.num_stages();
    std::vector<Tensor<T>> enc(static_cast<std::size_t>(S));
    Tensor<T> h = stem_.forward(x, training);
    for (Index s = 0; s < S; ++s) {
      auto & st = encoder_[s];
      if (st.down) {h = st.down->forward(h, training);}
      for (auto & b : st.blocks) {h = b.forward(h, training);}
      enc[s] = h;
    }
    ForwardResult<T> r;
    r.bottleneck_spatial = enc[S - 1].spatial();
    r.bottleneck_channels = enc[S - 1].channels();

    // dec[l] holds the decoder output at level l; the bottleneck serves as level S-1.
    std::vector<Tensor<T>> dec(static_cast<std::size_t>(S));
    dec[S - 1] = std::move(enc[S - 1]);
    for (Index l = S - 2; l >= 0; --l) {
      Tensor<T> u = decoder_[l].up.forward(dec[l + 1], training);
      u += enc[l];
      enc[l] = Tensor<T>();
      dec[l] = decoder_[l].block.forward(u, training);
    }
    r.logits = head_.forward(dec[0], training);
    for (Index i = 0; i < cfg_.deep_supervision_levels; ++i) {
      r.ds_outputs.push_back(ds_heads_[i].forward(dec[i + 1], training));
    }
    return r;
  }

  /**
   * @brief Backpropagate loss gradients; accumulates into parameter grads.
   *
   * @p dds may be shorter than the number of heads; missing entries count as zero.
   * Returns the gradient with respect to the network input.
   */
  Tensor<T> backward(const Tensor<T> & dlogits, const std::vector<Tensor<T>> & dds)
  {
    const Index S = cfg_.num_stages();
    std::vector<Tensor<T>> gdec(static_cast<std::size_t>(S));
    auto accumulate = [](Tensor<T> & dst, Tensor<T> && g) {
        if (dst.empty()) {
          dst = std::move(g);
        } else {
          dst += g;
        }
      };
    accumulate(gdec[0], head_.backward(dlogits));
    for (Index i = 0; i < cfg_.deep_supervision_levels; ++i) {
      if (static_cast<std::size_t>(i) < dds.size() && !dds[i].empty()) {
        accumulate(gdec[i + 1], ds_heads_[i].backward(dds[i]));
      }
    }
    std::vector<Tensor<T>> genc(static_cast<std::size_t>(S));
    for (Index l = 0; l <= S - 2; ++l) {
      Tensor<T> g = decoder_[l].block.backward(gdec[l]);
      accumulate(genc[l], Tensor<T>(g));
      accumulate(gdec[l + 1], decoder_[l].up.backward(g));
    }
    accumulate(genc[S - 1], std::move(gdec[S - 1]));

    Tensor<T> g;
    for (Index s = S - 1; s >= 0; --s) {
      if (g.empty()) {
        g = std::move(genc[s]);
      } else {
        g += genc[s];
      }
      auto & st = encoder_[s];
      for (auto it = st.blocks.rbegin(); it != st.blocks.rend(); ++it) {g = it->backward(g);}
      if (st.down) {g = st.down->backward(g);}
    }
    return stem_.backward(g);
  }

private:
  struct Stage
  {
    std::optional<nn::Conv3d<T>> down;
    std::vector<nn::ResBlock<T>> blocks;
  };
  struct Level
  {
    nn::ConvTranspose3d<T> up;
    nn::ResBlock<T> block;
  };

  ArchConfig cfg_;
  std::uint64_t seed_ = 0;
  nn::Conv3d<T> stem_;
  std::vector<Stage> encoder_;
  std::vector<Level> decoder_;
  nn::Conv3d<T> head_;
  std::vector<nn::Conv3d<T>> ds_heads_;
};

}  // namespace aortaseg

#endif  // AORTASEG_SEGRESNET_HPP_
