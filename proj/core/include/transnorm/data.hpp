#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "transnorm/tensor.hpp"

namespace tn {

enum class ShapeKind { Ellipse, Rectangle, Ring };

/// Synthetic segmentation dataset description. Every foreground class draws
/// one shape over a textured background; masks are exact analytic
/// rasterizations. Foreground area is rejection-sampled into
/// [fg_min, fg_max].
struct SynthSpec {
  int count = 200;
  int size = 64;
  int num_classes = 2;
  int channels = 1;
  std::vector<ShapeKind> kinds = {ShapeKind::Ellipse, ShapeKind::Rectangle,
                                  ShapeKind::Ring};
  double noise_std = 0.05;
  double contrast = 0.7;  // 1.0 = fully separable from the background
  bool overlap = true;
  double fg_min = 0.05, fg_max = 0.60;
  std::uint64_t seed = 0;
  double train_frac = 0.7, val_frac = 0.15, test_frac = 0.15;

  void validate() const;
  static SynthSpec from_json_text(const std::string& text);
  std::string to_json_text() const;
};

struct Sample {
  Tensor image;  // [C,H,W] in [0,1]
  Tensor mask;   // [H,W] class ids
};

using Dataset = std::vector<Sample>;

/// Deterministic under spec.seed; per-sample streams make generation order
/// independent.
Dataset generate(const SynthSpec& spec);
Sample generate_sample(const SynthSpec& spec, int index);

struct SplitIndices {
  std::vector<int> train, val, test;
};

/// Disjoint, exhaustive, deterministic shuffle-split. Fractions must sum to 1.
SplitIndices split(int count, double train_frac, double val_frac, double test_frac,
                   std::uint64_t seed);

// ---- PGM + on-disk dataset layout -------------------------------------------

/// Binary portable graymap, P5, maxval 255 only.
struct PgmImage {
  int w = 0, h = 0;
  std::vector<std::uint8_t> pixels;
};

void write_pgm(const std::string& path, const PgmImage& img);
PgmImage read_pgm(const std::string& path);

/// dataset_root/{images,masks}/NNNNN.pgm with 5-digit indices; 3-channel
/// images store planes with _r/_g/_b suffixes. manifest.json records the
/// spec and the split membership.
void save_dataset(const Dataset& data, const SynthSpec& spec, const SplitIndices& splits,
                  const std::string& root);

struct LoadedDataset {
  Dataset samples;
  SynthSpec spec;
  SplitIndices splits;
};
LoadedDataset load_dataset(const std::string& root);

/// Gathers (image, mask) pairs for the given indices.
std::vector<std::pair<Tensor, Tensor>> gather(const Dataset& data,
                                              const std::vector<int>& indices);

}  // namespace tn
