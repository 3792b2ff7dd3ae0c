#pragma once

#include <utility>

#include "transnorm/nn.hpp"

namespace tn {

struct TransformerConfig {
  int layers = 4;  // K
  int heads = 4;
  int dim = 64;   // embedding width D
  int patch = 1;  // patch side P over the bottleneck grid
};

/// Attention probabilities per layer ([B, heads, N, N], rows sum to 1) plus
/// the spatial saliency map derived from the last layer, rescaled to [0,1].
struct AttentionRecord {
  std::vector<Tensor> attention;
  Tensor spatial_map;  // [B, 1, H', W']
  int grid_h = 0, grid_w = 0;
};

/// [B,C,H,W] -> [B, N, P*P*C] with N = (H/P)*(W/P). Patches ordered row-major
/// over the grid; within a patch, channel-major then row-major. Exact inverse
/// of unpatchify.
Tensor patchify(const Tensor& x, int patch);
Tensor unpatchify(const Tensor& tokens, int channels, int h, int w, int patch);

/// z0 = patches * E + E_pos (E_pos broadcast over batch).
Tensor embed(const Tensor& patches, const Tensor& proj, const Tensor& pos);

struct TransformerLayer {
  LayerNorm ln_attn, ln_mlp;
  Linear q, k, v, out;
  Linear mlp_in, mlp_out;  // D -> 4D -> D

  TransformerLayer() = default;
  TransformerLayer(int dim, std::uint64_t seed, const std::string& name);
  void visit(const std::string& prefix, StateVisitor& v);
};

/// Pre-norm residual block: z' = MSA(LN(z)) + z; out = MLP(LN(z')) + z'.
/// Returns the block output and the per-head attention probabilities
/// [B, heads, N, N].
std::pair<Tensor, Tensor> transformer_block(const Tensor& z, const TransformerLayer& layer,
                                            int heads);

/// Head-mean, query-mean, grid reshape, bilinear x patch, then rescale to
/// [0,1] by the per-image maximum (max is exactly 1 afterwards).
Tensor derive_spatial_map(const Tensor& attn, int patch, int grid_h, int grid_w);

/// Bottleneck transformer: patchify -> embed -> K blocks -> final layer norm
/// -> linear back to patch size -> unpatchify. Output is shape-compatible
/// with the input feature map for channel concatenation.
class Transformer {
 public:
  Transformer() = default;
  Transformer(int channels, int grid_h, int grid_w, TransformerConfig cfg,
              std::uint64_t seed);

  std::pair<Tensor, AttentionRecord> run(const Tensor& x) const;

  const TransformerConfig& config() const { return cfg_; }
  void visit(StateVisitor& v);

 private:
  TransformerConfig cfg_;
  int channels_ = 0;
  int grid_h_ = 0, grid_w_ = 0;  // token grid (H/P x W/P)
  Tensor embed_proj_;            // [P*P*C, D]
  Tensor pos_;                   // [N, D]
  std::vector<TransformerLayer> layers_;
  LayerNorm final_ln_;
  Linear reproject_;  // D -> P*P*C
};

}  // namespace tn
