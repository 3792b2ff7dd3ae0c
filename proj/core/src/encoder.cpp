#include "transnorm/encoder.hpp"

namespace tn {

Encoder::Encoder(int in_channels, int base_width, std::uint64_t seed)
    : in_channels_(in_channels), base_width_(base_width) {
  if (in_channels < 1 || base_width < 1)
    throw ConfigError("encoder: channels and base width must be positive");
  int in = in_channels;
  for (int s = 0; s < 4; ++s) {
    int out = base_width << s;
    std::string name = "encoder.stage" + std::to_string(s);
    stages_.push_back(Stage{ConvBnRelu(in, out, seed, name + ".block0"),
                            ConvBnRelu(out, out, seed, name + ".block1")});
    in = out;
  }
}

FeaturePyramid Encoder::encode(const Tensor& image, bool training) {
  if (image.rank() != 4)
    throw DimensionError("encode: expected [B,C,H,W] image, got " +
                         shape_str(image.shape()));
  int c = image.shape()[1], h = image.shape()[2], w = image.shape()[3];
  if (c != in_channels_)
    throw DimensionError("encode: image has " + std::to_string(c) +
                         " channels, encoder configured for " + std::to_string(in_channels_));
  if (h % 16 != 0 || w % 16 != 0)
    throw DimensionError("encode: spatial size " + shape_str(image.shape()) +
                         " must be divisible by 16");

  FeaturePyramid pyr;
  Tensor x = image;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    x = stages_[s].b(stages_[s].a(x, training), training);
    x = max_pool2d(x, 2);
    if (s + 1 < stages_.size())
      pyr.levels.push_back(x);
    else
      pyr.bottleneck = x;
  }
  return pyr;
}

void Encoder::visit(StateVisitor& v) {
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    std::string name = "encoder.stage" + std::to_string(s);
    stages_[s].a.visit(name + ".block0", v);
    stages_[s].b.visit(name + ".block1", v);
  }
}

}  // namespace tn
