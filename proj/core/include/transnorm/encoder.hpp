#pragma once

#include "transnorm/nn.hpp"

namespace tn {

/// Ordered multi-scale encoder outputs. `levels[i]` sits at spatial scale
/// 1/2^(i+1) of the input (1/2, 1/4, 1/8); the bottleneck is at 1/16. Channel
/// counts double per level starting from the configured base width.
struct FeaturePyramid {
  std::vector<Tensor> levels;
  Tensor bottleneck;
};

/// Contracting path: four stages of [conv3x3 -> bn -> relu] x2 -> maxpool(2).
class Encoder {
 public:
  Encoder() = default;
  Encoder(int in_channels, int base_width, std::uint64_t seed);

  /// Requires H and W divisible by 16 (checked before any compute).
  FeaturePyramid encode(const Tensor& image, bool training);

  int base_width() const { return base_width_; }
  int in_channels() const { return in_channels_; }
  /// Channels at the bottleneck (8 * base width).
  int bottleneck_channels() const { return base_width_ * 8; }

  void visit(StateVisitor& v);

 private:
  struct Stage {
    ConvBnRelu a, b;
  };
  std::vector<Stage> stages_;
  int in_channels_ = 0;
  int base_width_ = 0;
};

}  // namespace tn
