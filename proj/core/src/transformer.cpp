#include "transnorm/transformer.hpp"

#include <cmath>

namespace tn {

Tensor patchify(const Tensor& x, int patch) {
  if (x.rank() != 4)
    throw DimensionError("patchify: expected [B,C,H,W], got " + shape_str(x.shape()));
  int b = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (patch < 1 || h % patch != 0 || w % patch != 0)
    throw DimensionError("patchify: spatial size " + shape_str(x.shape()) +
                         " not divisible by patch " + std::to_string(patch));
  int gh = h / patch, gw = w / patch;
  // [B,C,gh,P,gw,P] -> [B,gh,gw,C,P,P] -> [B,N,P*P*C]
  Tensor r = reshape(x, {b, c, gh, patch, gw, patch});
  Tensor p = permute(r, {0, 2, 4, 1, 3, 5});
  return reshape(p, {b, gh * gw, c * patch * patch});
}

Tensor unpatchify(const Tensor& tokens, int channels, int h, int w, int patch) {
  if (tokens.rank() != 3)
    throw DimensionError("unpatchify: expected [B,N,L], got " + shape_str(tokens.shape()));
  int b = tokens.shape()[0], n = tokens.shape()[1], l = tokens.shape()[2];
  int gh = h / patch, gw = w / patch;
  if (n != gh * gw || l != channels * patch * patch || h % patch != 0 || w % patch != 0)
    throw DimensionError("unpatchify: tokens " + shape_str(tokens.shape()) +
                         " do not assemble into [" + std::to_string(channels) + "x" +
                         std::to_string(h) + "x" + std::to_string(w) + "] with patch " +
                         std::to_string(patch));
  Tensor r = reshape(tokens, {b, gh, gw, channels, patch, patch});
  Tensor p = permute(r, {0, 3, 1, 4, 2, 5});
  return reshape(p, {b, channels, h, w});
}

Tensor embed(const Tensor& patches, const Tensor& proj, const Tensor& pos) {
  if (patches.rank() != 3 || proj.rank() != 2 || patches.shape()[2] != proj.shape()[0])
    throw DimensionError("embed: patches " + shape_str(patches.shape()) +
                         " incompatible with projection " + shape_str(proj.shape()));
  int b = patches.shape()[0], n = patches.shape()[1];
  int d = proj.shape()[1];
  if (pos.shape() != Shape{n, d})
    throw DimensionError("embed: position embedding " + shape_str(pos.shape()) +
                         " must be [" + std::to_string(n) + "x" + std::to_string(d) + "]");
  Tensor flat = reshape(patches, {b * n, patches.shape()[2]});
  Tensor z = reshape(matmul(flat, proj), {b, n, d});
  return add(z, pos);
}

TransformerLayer::TransformerLayer(int dim, std::uint64_t seed, const std::string& name)
    : ln_attn(dim),
      ln_mlp(dim),
      q(dim, dim, seed, name + ".q"),
      k(dim, dim, seed, name + ".k"),
      v(dim, dim, seed, name + ".v"),
      out(dim, dim, seed, name + ".out"),
      mlp_in(dim, 4 * dim, seed, name + ".mlp_in"),
      mlp_out(4 * dim, dim, seed, name + ".mlp_out") {}

void TransformerLayer::visit(const std::string& prefix, StateVisitor& vis) {
  ln_attn.visit(prefix + ".ln_attn", vis);
  ln_mlp.visit(prefix + ".ln_mlp", vis);
  q.visit(prefix + ".q", vis);
  k.visit(prefix + ".k", vis);
  v.visit(prefix + ".v", vis);
  out.visit(prefix + ".out", vis);
  mlp_in.visit(prefix + ".mlp_in", vis);
  mlp_out.visit(prefix + ".mlp_out", vis);
}

namespace {
// [B,N,D] -> [B*heads, N, dh]
Tensor split_heads(const Tensor& x, int heads) {
  int b = x.shape()[0], n = x.shape()[1], d = x.shape()[2];
  int dh = d / heads;
  Tensor r = reshape(x, {b, n, heads, dh});
  Tensor p = permute(r, {0, 2, 1, 3});
  return reshape(p, {b * heads, n, dh});
}

Tensor merge_heads(const Tensor& x, int batch, int heads) {
  int n = x.shape()[1], dh = x.shape()[2];
  Tensor r = reshape(x, {batch, heads, n, dh});
  Tensor p = permute(r, {0, 2, 1, 3});
  return reshape(p, {batch, n, heads * dh});
}
}  // namespace

std::pair<Tensor, Tensor> transformer_block(const Tensor& z, const TransformerLayer& layer,
                                            int heads) {
  if (z.rank() != 3)
    throw DimensionError("transformer_block: expected [B,N,D], got " + shape_str(z.shape()));
  int b = z.shape()[0], n = z.shape()[1], d = z.shape()[2];
  if (heads < 1 || d % heads != 0)
    throw DimensionError("transformer_block: dim " + std::to_string(d) +
                         " not divisible by heads " + std::to_string(heads));
  int dh = d / heads;

  Tensor ln = layer.ln_attn(z);
  Tensor qh = split_heads(layer.q(ln), heads);
  Tensor kh = split_heads(layer.k(ln), heads);
  Tensor vh = split_heads(layer.v(ln), heads);
  Tensor scores = affine(bmm(qh, permute(kh, {0, 2, 1})), 1.0 / std::sqrt(double(dh)));
  Tensor attn = softmax(scores);  // [B*heads, N, N]
  Tensor ctx = merge_heads(bmm(attn, vh), b, heads);
  Tensor z_mid = add(z, layer.out(ctx));

  Tensor mlp = layer.mlp_out(gelu(layer.mlp_in(layer.ln_mlp(z_mid))));
  Tensor z_out = add(z_mid, mlp);

  return {z_out, reshape(attn, {b, heads, n, n})};
}

Tensor derive_spatial_map(const Tensor& attn, int patch, int grid_h, int grid_w) {
  if (attn.rank() != 4 || attn.shape()[2] != attn.shape()[3])
    throw DimensionError("derive_spatial_map: expected [B,heads,N,N], got " +
                         shape_str(attn.shape()));
  int b = attn.shape()[0], heads = attn.shape()[1], n = attn.shape()[2];
  if (n != grid_h * grid_w)
    throw DimensionError("derive_spatial_map: " + std::to_string(n) +
                         " tokens do not fill a " + std::to_string(grid_h) + "x" +
                         std::to_string(grid_w) + " grid");
  // received attention per token: mean over heads, then over the query axis
  Tensor head_mean = affine(sum_axis(attn, 1), 1.0 / heads);        // [B,N,N]
  Tensor saliency = affine(sum_axis(head_mean, 1), 1.0 / n);        // [B,N]
  Tensor grid = reshape(saliency, {b, 1, grid_h, grid_w});
  Tensor up = bilinear_upsample(grid, patch);                       // [B,1,H',W']
  Tensor flat = reshape(up, {b, grid_h * patch * grid_w * patch});
  Tensor peak = reshape(max_axis(flat, 1, true), {b, 1, 1, 1});
  return div(up, peak);
}

Transformer::Transformer(int channels, int grid_h, int grid_w, TransformerConfig cfg,
                         std::uint64_t seed)
    : cfg_(cfg), channels_(channels), grid_h_(grid_h), grid_w_(grid_w) {
  if (cfg.layers < 0) throw ConfigError("transformer: negative layer count");
  if (cfg.heads < 1 || cfg.dim % cfg.heads != 0)
    throw ConfigError("transformer: dim " + std::to_string(cfg.dim) +
                      " must be divisible by heads " + std::to_string(cfg.heads));
  if (grid_h < 1 || grid_w < 1)
    throw ConfigError("transformer: empty token grid");
  int patch_len = cfg.patch * cfg.patch * channels;
  int n = grid_h * grid_w;
  Rng rng_e = layer_rng(seed, "transformer.embed");
  embed_proj_ = Tensor::randn({patch_len, cfg.dim}, rng_e, 0.02).set_requires_grad(true);
  Rng rng_p = layer_rng(seed, "transformer.pos");
  pos_ = Tensor::randn({n, cfg.dim}, rng_p, 0.02).set_requires_grad(true);
  for (int i = 0; i < cfg.layers; ++i)
    layers_.emplace_back(cfg.dim, seed, "transformer.layer" + std::to_string(i));
  final_ln_ = LayerNorm(cfg.dim);
  reproject_ = Linear(cfg.dim, patch_len, seed, "transformer.reproject");
}

std::pair<Tensor, AttentionRecord> Transformer::run(const Tensor& x) const {
  int h = x.shape()[2], w = x.shape()[3];
  if (x.shape()[1] != channels_ || h != grid_h_ * cfg_.patch || w != grid_w_ * cfg_.patch)
    throw DimensionError("transformer: input " + shape_str(x.shape()) +
                         " does not match configured grid " + std::to_string(grid_h_) +
                         "x" + std::to_string(grid_w_) + " with patch " +
                         std::to_string(cfg_.patch));
  Tensor z = embed(patchify(x, cfg_.patch), embed_proj_, pos_);
  AttentionRecord record;
  record.grid_h = grid_h_;
  record.grid_w = grid_w_;
  for (const auto& layer : layers_) {
    auto [z_next, attn] = transformer_block(z, layer, cfg_.heads);
    z = z_next;
    record.attention.push_back(attn);
  }
  if (!record.attention.empty())
    record.spatial_map =
        derive_spatial_map(record.attention.back(), cfg_.patch, grid_h_, grid_w_);
  Tensor tokens = reproject_(final_ln_(z));
  Tensor out = unpatchify(tokens, channels_, h, w, cfg_.patch);
  return {out, std::move(record)};
}

void Transformer::visit(StateVisitor& v) {
  v.tensor("transformer.embed_proj", embed_proj_, true);
  v.tensor("transformer.pos", pos_, true);
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i].visit("transformer.layer" + std::to_string(i), v);
  final_ln_.visit("transformer.final_ln", v);
  reproject_.visit("transformer.reproject", v);
}

}  // namespace tn
