#include "transnorm/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include <json.hpp>

namespace tn {

using nlohmann::json;

// ---- config ----------------------------------------------------------------

void ModelConfig::validate() const {
  if (input_channels < 1) throw ConfigError("config: input_channels must be >= 1");
  if (input_size < 16 || input_size % 16 != 0)
    throw ConfigError("config: input_size " + std::to_string(input_size) +
                      " must be a positive multiple of 16");
  if (num_classes < 2) throw ConfigError("config: num_classes must be >= 2");
  if (base_width < 1) throw ConfigError("config: base_width must be >= 1");
  if (skip_count < 0 || skip_count > 3)
    throw ConfigError("config: skip_count must be in [0,3], got " +
                      std::to_string(skip_count));
  if (gate_reduction < 1) throw ConfigError("config: gate_reduction must be >= 1");
  if (use_transformer) {
    if (transformer.layers < 0) throw ConfigError("config: transformer.layers negative");
    if (transformer.heads < 1 || transformer.dim % transformer.heads != 0)
      throw ConfigError("config: transformer.dim " + std::to_string(transformer.dim) +
                        " must be divisible by heads " + std::to_string(transformer.heads));
    if (transformer.patch < 1 || (input_size / 16) % transformer.patch != 0)
      throw ConfigError("config: bottleneck grid " + std::to_string(input_size / 16) +
                        " not divisible by patch " + std::to_string(transformer.patch));
  }
  if (use_spatial_gate && (!use_transformer || transformer.layers < 1))
    throw ConfigError(
        "config: spatial gating requires a transformer with at least one layer");
  if (use_channel_gate || use_spatial_gate) {
    // gate channel counts at the three lateral sites
    int c4 = base_width * 8;
    std::vector<int> cs;
    if (skip_count >= 1) cs.push_back(use_transformer ? 2 * c4 : c4);
    if (skip_count >= 2) cs.push_back(base_width * 8);
    if (skip_count >= 3) cs.push_back(base_width * 4);
    for (int c : cs)
      if (c % gate_reduction != 0)
        throw ConfigError("config: gate channels " + std::to_string(c) +
                          " not divisible by reduction " + std::to_string(gate_reduction));
  }
}

ModelConfig& ModelConfig::apply_scale() {
  if (scale == ModelScale::Large) {
    transformer.layers = 8;
    transformer.dim = 128;
  }
  return *this;
}

ModelConfig ModelConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(std::string("config JSON parse error: ") + e.what());
  }
  ModelConfig c;
  c.input_channels = j.value("input_channels", c.input_channels);
  c.input_size = j.value("input_size", c.input_size);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.base_width = j.value("base_width", c.base_width);
  c.gate_reduction = j.value("gate_reduction", c.gate_reduction);
  c.skip_count = j.value("skip_count", c.skip_count);
  c.use_transformer = j.value("use_transformer", c.use_transformer);
  c.use_channel_gate = j.value("use_channel_gate", c.use_channel_gate);
  c.use_spatial_gate = j.value("use_spatial_gate", c.use_spatial_gate);
  c.seed = j.value("seed", c.seed);
  std::string scale = j.value("scale", std::string("base"));
  if (scale == "large")
    c.scale = ModelScale::Large;
  else if (scale == "base")
    c.scale = ModelScale::Base;
  else
    throw ConfigError("config: unknown scale '" + scale + "' (expected base|large)");
  bool explicit_layers = false, explicit_dim = false;
  if (j.contains("transformer")) {
    const json& t = j["transformer"];
    explicit_layers = t.contains("layers");
    explicit_dim = t.contains("dim");
    c.transformer.layers = t.value("layers", c.transformer.layers);
    c.transformer.heads = t.value("heads", c.transformer.heads);
    c.transformer.dim = t.value("dim", c.transformer.dim);
    c.transformer.patch = t.value("patch", c.transformer.patch);
  }
  if (c.scale == ModelScale::Large) {
    if (!explicit_layers) c.transformer.layers = 8;
    if (!explicit_dim) c.transformer.dim = 128;
  }
  return c;
}

std::string ModelConfig::to_json_text() const {
  json j;
  j["input_channels"] = input_channels;
  j["input_size"] = input_size;
  j["num_classes"] = num_classes;
  j["base_width"] = base_width;
  j["transformer"] = {{"layers", transformer.layers},
                      {"heads", transformer.heads},
                      {"dim", transformer.dim},
                      {"patch", transformer.patch}};
  j["gate_reduction"] = gate_reduction;
  j["skip_count"] = skip_count;
  j["scale"] = scale == ModelScale::Large ? "large" : "base";
  j["use_transformer"] = use_transformer;
  j["use_channel_gate"] = use_channel_gate;
  j["use_spatial_gate"] = use_spatial_gate;
  j["seed"] = seed;
  return j.dump(2);
}

// ---- model -----------------------------------------------------------------

TransNorm::TransNorm(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  int w0 = cfg_.base_width;
  int c4 = 8 * w0, c3 = 4 * w0, c2 = 2 * w0, c1 = w0;
  encoder_ = Encoder(cfg_.input_channels, w0, cfg_.seed);

  bool any_gate = cfg_.use_channel_gate || cfg_.use_spatial_gate;
  if (cfg_.use_transformer) {
    int grid = (cfg_.input_size / 16) / cfg_.transformer.patch;
    transformer_ = Transformer(c4, grid, grid, cfg_.transformer, cfg_.seed);
  }
  if (cfg_.skip_count >= 1) {
    int merged = cfg_.use_transformer ? 2 * c4 : c4;
    if (any_gate)
      bottleneck_gate_ = AttentionGate(merged, cfg_.gate_reduction, cfg_.use_channel_gate,
                                       cfg_.use_spatial_gate, cfg_.seed, "gate16");
    if (cfg_.use_transformer) fuse_ = Conv2d(merged, c4, 1, 1, 0, cfg_.seed, "fuse");
  }

  // decoder, deepest first: 1/16 -> 1/8 -> 1/4 -> 1/2 -> 1/1
  struct Plan {
    int in, out, skip_level, ws_factor;
    bool skip;
    const char* gate_name;
  };
  const Plan plans[4] = {
      {c4, c3, 2, 2, cfg_.skip_count >= 2, "gate8"},
      {c3, c2, 1, 4, cfg_.skip_count >= 3, "gate4"},
      {c2, c1, -1, 8, false, ""},
      {c1, c1, -1, 16, false, ""},
  };
  for (int i = 0; i < 4; ++i) {
    const Plan& p = plans[i];
    DecoderStage st;
    std::string name = "decoder.stage" + std::to_string(i);
    st.up = ConvTranspose2d(p.in, p.out, 2, 2, cfg_.seed, name + ".up");
    st.has_skip = p.skip;
    st.skip_level = p.skip_level;
    st.ws_factor = p.ws_factor;
    int block_in = p.out;
    if (p.skip) {
      block_in = 2 * p.out;
      if (any_gate)
        st.gate = AttentionGate(block_in, cfg_.gate_reduction, cfg_.use_channel_gate,
                                cfg_.use_spatial_gate, cfg_.seed, p.gate_name);
    }
    st.a = ConvBnRelu(block_in, p.out, cfg_.seed, name + ".block0");
    st.b = ConvBnRelu(p.out, p.out, cfg_.seed, name + ".block1");
    stages_.push_back(std::move(st));
  }
  head_ = Conv2d(c1, cfg_.num_classes, 1, 1, 0, cfg_.seed, "head");
}

Tensor TransNorm::gated(const Tensor& f, const Tensor& ws_native, int factor,
                        const std::optional<AttentionGate>& gate) {
  if (!gate || gate_mode_ == GateMode::Neutral) return f;
  ++gate_invocations_;
  Tensor map;
  if (gate->spatial_enabled()) map = bilinear_upsample(ws_native, factor);
  return apply_gate(f, map, *gate);
}

TransNorm::ForwardResult TransNorm::forward(const Tensor& image, bool training) {
  if (image.rank() != 4 || image.shape()[1] != cfg_.input_channels ||
      image.shape()[2] != cfg_.input_size || image.shape()[3] != cfg_.input_size)
    throw DimensionError("forward: image " + shape_str(image.shape()) +
                         " does not match configured input [Bx" +
                         std::to_string(cfg_.input_channels) + "x" +
                         std::to_string(cfg_.input_size) + "x" +
                         std::to_string(cfg_.input_size) + "]");
  FeaturePyramid pyr = encoder_.encode(image, training);

  AttentionRecord record;
  Tensor z;
  if (transformer_) {
    auto [zz, rec] = transformer_->run(pyr.bottleneck);
    z = zz;
    record = std::move(rec);
  }

  Tensor d;
  if (cfg_.skip_count >= 1) {
    Tensor f = transformer_ ? concat({pyr.bottleneck, z}, 1) : pyr.bottleneck;
    f = gated(f, record.spatial_map, 1, bottleneck_gate_);
    d = fuse_ ? (*fuse_)(f) : f;
  } else {
    d = transformer_ ? z : pyr.bottleneck;
  }

  for (auto& st : stages_) {
    d = st.up(d);
    if (st.has_skip) {
      Tensor f = concat({pyr.levels[st.skip_level], d}, 1);
      f = gated(f, record.spatial_map, st.ws_factor, st.gate);
      d = st.b(st.a(f, training), training);
    } else {
      d = st.b(st.a(d, training), training);
    }
  }
  return {head_(d), std::move(record)};
}

// ---- loss ------------------------------------------------------------------

namespace {
std::vector<int> target_ids(const Tensor& target, int num_classes, std::size_t expected) {
  if (target.numel() != expected)
    throw DimensionError("loss: target " + shape_str(target.shape()) +
                         " does not match logits pixel count");
  std::vector<int> ids(target.numel());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    double v = target.data()[i];
    if (v != std::floor(v) || v < 0.0 || v >= static_cast<double>(num_classes))
      throw ContractError("loss: invalid class id " + std::to_string(v) +
                          " (num_classes=" + std::to_string(num_classes) + ")");
    ids[i] = static_cast<int>(v);
  }
  return ids;
}

Tensor flatten_logits(const Tensor& logits) {
  int b = logits.shape()[0], k = logits.shape()[1], h = logits.shape()[2],
      w = logits.shape()[3];
  return reshape(permute(logits, {0, 2, 3, 1}), {b * h * w, k});
}
}  // namespace

Tensor TransNorm::cross_entropy(const Tensor& logits, const Tensor& target) const {
  if (logits.rank() != 4 || logits.shape()[1] != cfg_.num_classes)
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) +
                         " must be [Bx" + std::to_string(cfg_.num_classes) + "xHxW]");
  Tensor flat = flatten_logits(logits);
  auto ids = target_ids(target, cfg_.num_classes,
                        logits.numel() / static_cast<std::size_t>(cfg_.num_classes));
  Tensor m = max_axis(flat, 1, true);
  Tensor shifted = sub(flat, m);
  Tensor lse = log(sum_axis(exp(shifted), 1, true));
  Tensor logp = sub(shifted, lse);
  return affine(mean(gather_index(logp, ids)), -1.0);
}

Tensor TransNorm::dice_loss(const Tensor& logits, const Tensor& target) const {
  constexpr double kSmooth = 1e-6;
  Tensor flat = flatten_logits(logits);
  auto ids = target_ids(target, cfg_.num_classes,
                        logits.numel() / static_cast<std::size_t>(cfg_.num_classes));
  Tensor probs = softmax(flat);
  Tensor hot = one_hot(ids, cfg_.num_classes);
  Tensor inter = sum_axis(mul(probs, hot), 0);
  Tensor sums = add(sum_axis(probs, 0), sum_axis(hot, 0));
  Tensor dice = div(affine(inter, 2.0, kSmooth), affine(sums, 1.0, kSmooth));
  return affine(mean(dice), -1.0, 1.0);
}

Tensor TransNorm::loss(const Tensor& logits, const Tensor& target) const {
  return add(affine(cross_entropy(logits, target), 0.5),
             affine(dice_loss(logits, target), 0.5));
}

// ---- state -----------------------------------------------------------------

void TransNorm::visit(StateVisitor& v) {
  encoder_.visit(v);
  if (transformer_) transformer_->visit(v);
  if (bottleneck_gate_) bottleneck_gate_->visit("gate16", v);
  if (fuse_) fuse_->visit("fuse", v);
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    std::string name = "decoder.stage" + std::to_string(i);
    stages_[i].up.visit(name + ".up", v);
    if (stages_[i].gate)
      stages_[i].gate->visit(i == 0 ? "gate8" : "gate4", v);
    stages_[i].a.visit(name + ".block0", v);
    stages_[i].b.visit(name + ".block1", v);
  }
  head_.visit("head", v);
}

namespace {
struct ParamCollector : StateVisitor {
  std::vector<std::pair<std::string, Tensor>> out;
  void tensor(const std::string& name, Tensor& t, bool trainable) override {
    if (trainable) out.emplace_back(name, t);
  }
  void raw(const std::string&, std::vector<double>&) override {}
};

struct SnapshotVisitor : StateVisitor {
  Checkpoint* ck;
  void tensor(const std::string& name, Tensor& t, bool) override {
    ck->tensors.emplace_back(name, t.clone());
  }
  void raw(const std::string& name, std::vector<double>& v) override {
    ck->tensors.emplace_back(name, Tensor::from({static_cast<int>(v.size())}, v));
  }
};

struct RestoreVisitor : StateVisitor {
  const std::map<std::string, const Tensor*>* src;
  std::set<std::string>* used;
  void tensor(const std::string& name, Tensor& t, bool) override {
    const Tensor& s = find(name);
    if (s.shape() != t.shape())
      throw CompatError("checkpoint tensor '" + name + "' has shape " +
                        shape_str(s.shape()) + ", model expects " + shape_str(t.shape()));
    t.data() = s.data();
    t.zero_grad();
  }
  void raw(const std::string& name, std::vector<double>& v) override {
    const Tensor& s = find(name);
    if (s.numel() != v.size())
      throw CompatError("checkpoint buffer '" + name + "' has " +
                        std::to_string(s.numel()) + " values, model expects " +
                        std::to_string(v.size()));
    v = s.data();
  }
  const Tensor& find(const std::string& name) {
    auto it = src->find(name);
    if (it == src->end())
      throw CompatError("checkpoint is missing tensor '" + name + "'");
    used->insert(name);
    return *it->second;
  }
};

struct NonFiniteScan : StateVisitor {
  std::optional<std::string> hit;
  void tensor(const std::string& name, Tensor& t, bool) override {
    if (!hit && !t.all_finite()) hit = name;
  }
  void raw(const std::string& name, std::vector<double>& v) override {
    if (hit) return;
    for (double x : v)
      if (!std::isfinite(x)) {
        hit = name;
        return;
      }
  }
};
}  // namespace

std::vector<std::pair<std::string, Tensor>> TransNorm::named_parameters() {
  ParamCollector c;
  visit(c);
  return std::move(c.out);
}

void TransNorm::zero_grad() {
  for (auto& [name, t] : named_parameters()) t.zero_grad();
}

std::optional<std::string> TransNorm::first_nonfinite() {
  NonFiniteScan s;
  visit(s);
  return s.hit;
}

Checkpoint TransNorm::snapshot(long long step) {
  Checkpoint ck;
  json j = json::parse(cfg_.to_json_text());
  j["step"] = step;
  ck.config_json = j.dump(2);
  ck.step = step;
  SnapshotVisitor v;
  v.ck = &ck;
  visit(v);
  return ck;
}

void TransNorm::restore(const Checkpoint& ckpt) {
  std::map<std::string, const Tensor*> src;
  for (const auto& [name, t] : ckpt.tensors) src[name] = &t;
  std::set<std::string> used;
  RestoreVisitor v;
  v.src = &src;
  v.used = &used;
  visit(v);
  if (used.size() != src.size())
    for (const auto& [name, t] : ckpt.tensors)
      if (!used.count(name))
        throw CompatError("checkpoint tensor '" + name + "' has no place in this model");
}

TransNorm TransNorm::from_checkpoint(const Checkpoint& ckpt) {
  ModelConfig cfg = ModelConfig::from_json_text(ckpt.config_json);
  TransNorm model(cfg);
  model.restore(ckpt);
  return model;
}

// ---- checkpoint i/o --------------------------------------------------------

namespace {
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size())
      throw IoError(std::string("checkpoint truncated at offset ") + std::to_string(pos) +
                    " while reading " + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64(const char* what) {
    std::uint64_t bits = u64(what);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};
}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string out;
  out += "TNRM";
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(ckpt.config_json.size()));
  out += ckpt.config_json;
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put_u64(out, static_cast<std::uint64_t>(d));
    for (double v : t.data()) put_f64(out, v);
  }
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + tmp + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{buf};
  std::string magic = r.bytes(4, "magic");
  if (magic != "TNRM")
    throw IoError("bad checkpoint magic at offset 0 (expected 'TNRM')");
  std::uint32_t version = r.u32("version");
  if (version != 1)
    throw IoError("unsupported checkpoint version " + std::to_string(version) +
                  " at offset 4 (expected 1)");
  std::uint32_t json_len = r.u32("config length");
  Checkpoint ck;
  ck.config_json = r.bytes(json_len, "config JSON");
  try {
    json j = json::parse(ck.config_json);
    ck.step = j.value("step", 0LL);
  } catch (const json::parse_error& e) {
    throw IoError(std::string("checkpoint config JSON invalid: ") + e.what());
  }
  std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = r.u32("tensor name length");
    std::string name = r.bytes(name_len, "tensor name");
    std::uint32_t rank = r.u32("tensor rank");
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      std::uint64_t dim = r.u64("tensor dims");
      if (dim == 0 || dim > (1ULL << 31))
        throw IoError("implausible dimension " + std::to_string(dim) + " at offset " +
                      std::to_string(r.pos - 8));
      shape.push_back(static_cast<int>(dim));
      numel *= dim;
    }
    std::vector<double> data(numel);
    for (std::size_t e = 0; e < numel; ++e) data[e] = r.f64("tensor data");
    ck.tensors.emplace_back(std::move(name), Tensor::from(shape, std::move(data)));
  }
  return ck;
}

// ---- optimizer -------------------------------------------------------------

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].second.numel(), 0.0);
    v_[i].assign(params_[i].second.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].second;
    if (!p.has_grad()) continue;
    const auto& g = p.grad();
    auto& d = p.data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < d.size(); ++j) {
      double gj = g[j] + cfg_.weight_decay * d[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      d[j] -= cfg_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

double train_step(TransNorm& model, Adam& adam, const Tensor& images,
                  const Tensor& targets) {
  GradTape tape;
  auto out = model.forward(images, true);
  Tensor l = model.loss(out.logits, targets);
  double lv = l.item();
  if (!std::isfinite(lv)) {
    auto culprit = model.first_nonfinite();
    throw NumericError("non-finite loss; first non-finite tensor: " +
                       culprit.value_or("(loss itself)"));
  }
  adam.zero_grad();
  tape.backward(l);
  adam.step();
  return lv;
}

// ---- fit -------------------------------------------------------------------

std::pair<Tensor, Tensor> make_batch(const std::vector<std::pair<Tensor, Tensor>>& samples,
                                     const std::vector<int>& indices) {
  if (indices.empty()) throw ContractError("make_batch: empty index list");
  const Tensor& img0 = samples[indices[0]].first;
  const Tensor& msk0 = samples[indices[0]].second;
  int c = img0.shape()[0], h = img0.shape()[1], w = img0.shape()[2];
  int b = static_cast<int>(indices.size());
  Tensor images = Tensor::zeros({b, c, h, w});
  Tensor masks = Tensor::zeros({b, h, w});
  std::size_t isz = img0.numel(), msz = msk0.numel();
  for (int i = 0; i < b; ++i) {
    const auto& [img, msk] = samples[indices[i]];
    if (img.shape() != img0.shape() || msk.shape() != msk0.shape())
      throw DimensionError("make_batch: inconsistent sample shapes");
    std::copy(img.data().begin(), img.data().end(), images.data().begin() + i * isz);
    std::copy(msk.data().begin(), msk.data().end(), masks.data().begin() + i * msz);
  }
  return {images, masks};
}

Tensor argmax_classes(const Tensor& logits) {
  int b = logits.shape()[0], k = logits.shape()[1], h = logits.shape()[2],
      w = logits.shape()[3];
  Tensor out = Tensor::zeros({b, h, w});
  std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int bi = 0; bi < b; ++bi)
    for (std::size_t p = 0; p < hw; ++p) {
      int best = 0;
      double bv = logits.data()[(static_cast<std::size_t>(bi) * k) * hw + p];
      for (int c = 1; c < k; ++c) {
        double v = logits.data()[(static_cast<std::size_t>(bi) * k + c) * hw + p];
        if (v > bv) {
          bv = v;
          best = c;
        }
      }
      out.data()[bi * hw + p] = static_cast<double>(best);
    }
  return out;
}

namespace {
double eval_epoch_loss(TransNorm& model, const std::vector<std::pair<Tensor, Tensor>>& set,
                       int batch_size) {
  double total = 0.0;
  int batches = 0;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    std::vector<int> idx;
    for (std::size_t i = start; i < std::min(set.size(), start + batch_size); ++i)
      idx.push_back(static_cast<int>(i));
    auto [imgs, msks] = make_batch(set, idx);
    auto out = model.forward(imgs, false);
    total += model.loss(out.logits, msks).item();
    ++batches;
  }
  return total / batches;
}
}  // namespace

FitResult fit(TransNorm& model, const std::vector<std::pair<Tensor, Tensor>>& train,
              const std::vector<std::pair<Tensor, Tensor>>& val, const TrainConfig& cfg) {
  if (train.empty()) throw ConfigError("fit: empty training set");
  if (cfg.batch_size < 1) throw ConfigError("fit: batch_size must be >= 1");
  Adam adam(model.named_parameters(),
            AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  Rng shuffle_rng(cfg.seed ^ 0x9044cbf1f0b3e2a1ULL);

  FitResult res;
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  long long step = 0;
  std::vector<int> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);
    double train_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<int> idx(order.begin() + start,
                           order.begin() +
                               std::min(order.size(), start + cfg.batch_size));
      auto [imgs, msks] = make_batch(train, idx);
      train_loss += train_step(model, adam, imgs, msks);
      ++batches;
      ++step;
    }
    train_loss /= batches;
    double val_loss = val.empty() ? train_loss
                                  : eval_epoch_loss(model, val, cfg.batch_size);
    res.history.push_back({epoch, train_loss, val_loss});
    res.epochs_run = epoch;
    if (val_loss < best) {
      best = val_loss;
      res.best_epoch = epoch;
      res.best = model.snapshot(step);
      stale = 0;
    } else {
      ++stale;
    }
    if (stale >= cfg.patience) {
      res.early_stopped = true;
      break;
    }
  }
  res.best_val_loss = best;
  model.restore(res.best);
  return res;
}

TrainConfig TrainConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(std::string("train config JSON parse error: ") + e.what());
  }
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::string TrainConfig::to_json_text() const {
  json j;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["weight_decay"] = weight_decay;
  j["patience"] = patience;
  j["seed"] = seed;
  return j.dump(2);
}

}  // namespace tn
