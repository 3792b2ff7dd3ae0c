#include "transnorm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace tn {

using nlohmann::json;
namespace fs = std::filesystem;

void SynthSpec::validate() const {
  if (count < 1) throw ConfigError("synth spec: count must be >= 1");
  if (size < 16) throw ConfigError("synth spec: size must be >= 16");
  if (num_classes < 2)
    throw ConfigError("synth spec: num_classes must be >= 2 (background + foreground)");
  if (channels != 1 && channels != 3)
    throw ConfigError("synth spec: channels must be 1 or 3");
  if (kinds.empty()) throw ConfigError("synth spec: no shape kinds");
  if (noise_std < 0.0) throw ConfigError("synth spec: negative noise std");
  if (contrast < 0.0 || contrast > 1.0)
    throw ConfigError("synth spec: contrast must be in [0,1]");
  if (!(fg_min >= 0.0 && fg_max <= 1.0 && fg_min < fg_max))
    throw ConfigError("synth spec: invalid foreground fraction band");
  double fsum = train_frac + val_frac + test_frac;
  if (std::abs(fsum - 1.0) > 1e-9)
    throw ConfigError("synth spec: split fractions sum to " + std::to_string(fsum) +
                      ", expected 1");
}

namespace {
const char* kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::Ellipse: return "ellipse";
    case ShapeKind::Rectangle: return "rectangle";
    case ShapeKind::Ring: return "ring";
  }
  return "ellipse";
}
ShapeKind kind_from(const std::string& s) {
  if (s == "ellipse") return ShapeKind::Ellipse;
  if (s == "rectangle") return ShapeKind::Rectangle;
  if (s == "ring") return ShapeKind::Ring;
  throw ConfigError("synth spec: unknown shape kind '" + s + "'");
}
}  // namespace

SynthSpec SynthSpec::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(std::string("synth spec JSON parse error: ") + e.what());
  }
  SynthSpec s;
  s.count = j.value("count", s.count);
  s.size = j.value("size", s.size);
  s.num_classes = j.value("num_classes", s.num_classes);
  s.channels = j.value("channels", s.channels);
  s.noise_std = j.value("noise_std", s.noise_std);
  s.contrast = j.value("contrast", s.contrast);
  s.overlap = j.value("overlap", s.overlap);
  s.fg_min = j.value("fg_min", s.fg_min);
  s.fg_max = j.value("fg_max", s.fg_max);
  s.seed = j.value("seed", s.seed);
  s.train_frac = j.value("train_frac", s.train_frac);
  s.val_frac = j.value("val_frac", s.val_frac);
  s.test_frac = j.value("test_frac", s.test_frac);
  if (j.contains("kinds")) {
    s.kinds.clear();
    for (const auto& k : j["kinds"]) s.kinds.push_back(kind_from(k.get<std::string>()));
  }
  return s;
}

std::string SynthSpec::to_json_text() const {
  json j;
  j["count"] = count;
  j["size"] = size;
  j["num_classes"] = num_classes;
  j["channels"] = channels;
  json kindsj = json::array();
  for (ShapeKind k : kinds) kindsj.push_back(kind_name(k));
  j["kinds"] = kindsj;
  j["noise_std"] = noise_std;
  j["contrast"] = contrast;
  j["overlap"] = overlap;
  j["fg_min"] = fg_min;
  j["fg_max"] = fg_max;
  j["seed"] = seed;
  j["train_frac"] = train_frac;
  j["val_frac"] = val_frac;
  j["test_frac"] = test_frac;
  return j.dump(2);
}

// ---- generation --------------------------------------------------------------

namespace {

struct ShapeParams {
  ShapeKind kind;
  double cx, cy, rx, ry, inner;  // inner radius fraction for rings
};

bool inside(const ShapeParams& s, double x, double y) {
  double dx = (x - s.cx) / s.rx, dy = (y - s.cy) / s.ry;
  switch (s.kind) {
    case ShapeKind::Ellipse:
      return dx * dx + dy * dy <= 1.0;
    case ShapeKind::Rectangle:
      return std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
    case ShapeKind::Ring: {
      double r2 = dx * dx + dy * dy;
      return r2 <= 1.0 && r2 >= s.inner * s.inner;
    }
  }
  return false;
}

ShapeParams draw_shape(const SynthSpec& spec, Rng& rng) {
  ShapeParams s;
  s.kind = spec.kinds[rng.next_below(spec.kinds.size())];
  double sz = spec.size;
  s.cx = rng.uniform(0.2, 0.8) * sz;
  s.cy = rng.uniform(0.2, 0.8) * sz;
  s.rx = rng.uniform(0.12, 0.35) * sz;
  s.ry = rng.uniform(0.12, 0.35) * sz;
  s.inner = rng.uniform(0.35, 0.6);
  return s;
}

void rasterize(const std::vector<ShapeParams>& shapes, int size, std::vector<int>& mask) {
  std::fill(mask.begin(), mask.end(), 0);
  for (std::size_t c = 0; c < shapes.size(); ++c)
    for (int i = 0; i < size; ++i)
      for (int j = 0; j < size; ++j)
        if (inside(shapes[c], j + 0.5, i + 0.5))
          mask[static_cast<std::size_t>(i) * size + j] = static_cast<int>(c) + 1;
}

bool overlaps(const ShapeParams& s, const std::vector<int>& mask, int size) {
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j)
      if (mask[static_cast<std::size_t>(i) * size + j] != 0 &&
          inside(s, j + 0.5, i + 0.5))
        return true;
  return false;
}

}  // namespace

Sample generate_sample(const SynthSpec& spec, int index) {
  Rng base(spec.seed);
  Rng rng = base.fork(static_cast<std::uint64_t>(index) + 1);
  int n = spec.size;
  int fg_classes = spec.num_classes - 1;

  std::vector<ShapeParams> shapes;
  std::vector<int> mask(static_cast<std::size_t>(n) * n, 0);
  double frac = 0.0;
  for (int attempt = 0; attempt < 500; ++attempt) {
    shapes.clear();
    std::fill(mask.begin(), mask.end(), 0);
    bool ok = true;
    for (int c = 0; c < fg_classes && ok; ++c) {
      ShapeParams s = draw_shape(spec, rng);
      if (!spec.overlap) {
        int tries = 0;
        while (overlaps(s, mask, n) && tries < 50) {
          s = draw_shape(spec, rng);
          ++tries;
        }
        if (overlaps(s, mask, n)) ok = false;
      }
      if (ok) {
        shapes.push_back(s);
        // paint incrementally so the overlap test sees earlier classes
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j)
            if (inside(s, j + 0.5, i + 0.5))
              mask[static_cast<std::size_t>(i) * n + j] = c + 1;
      }
    }
    if (!ok) continue;
    long long fg = 0;
    for (int v : mask) fg += v != 0;
    frac = static_cast<double>(fg) / static_cast<double>(mask.size());
    if (frac >= spec.fg_min && frac <= spec.fg_max) break;
  }
  // every image carries at least one foreground pixel
  if (std::find_if(mask.begin(), mask.end(), [](int v) { return v != 0; }) == mask.end()) {
    ShapeParams s{ShapeKind::Ellipse, n / 2.0, n / 2.0, n / 6.0, n / 6.0, 0.0};
    shapes.assign(1, s);
    rasterize(shapes, n, mask);
  }

  // textured background with per-class intensity levels blended by contrast
  double phase_x = rng.uniform(0.0, 6.283185307179586);
  double phase_y = rng.uniform(0.0, 6.283185307179586);
  double freq_x = rng.uniform(1.5, 4.0) * 6.283185307179586 / n;
  double freq_y = rng.uniform(1.5, 4.0) * 6.283185307179586 / n;
  Tensor image = Tensor::zeros({spec.channels, n, n});
  Tensor mask_t = Tensor::zeros({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      std::size_t at = static_cast<std::size_t>(i) * n + j;
      double bg = 0.2 + 0.1 * std::sin(freq_x * j + phase_x) * std::sin(freq_y * i + phase_y);
      int cls = mask[at];
      double value = bg;
      if (cls != 0) {
        double level =
            fg_classes == 1 ? 1.0 : 0.55 + 0.45 * (cls - 1) / double(fg_classes - 1);
        value = bg * (1.0 - spec.contrast) + spec.contrast * level;
      }
      mask_t.data()[at] = static_cast<double>(cls);
      for (int ch = 0; ch < spec.channels; ++ch) {
        double v = value;
        if (spec.noise_std > 0.0) v += spec.noise_std * rng.normal();
        image.data()[static_cast<std::size_t>(ch) * n * n + at] =
            std::clamp(v, 0.0, 1.0);
      }
    }
  return Sample{image, mask_t};
}

Dataset generate(const SynthSpec& spec) {
  spec.validate();
  Dataset out;
  out.reserve(spec.count);
  for (int i = 0; i < spec.count; ++i) out.push_back(generate_sample(spec, i));
  return out;
}

SplitIndices split(int count, double train_frac, double val_frac, double test_frac,
                   std::uint64_t seed) {
  if (count < 1) throw ConfigError("split: empty dataset");
  if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
    throw ConfigError("split: fractions must sum to 1");
  std::vector<int> order(count);
  for (int i = 0; i < count; ++i) order[i] = i;
  Rng rng(seed ^ 0x517cc1b727220a95ULL);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.next_below(i)]);
  int n_train = static_cast<int>(std::floor(train_frac * count));
  int n_val = static_cast<int>(std::floor(val_frac * count));
  if (train_frac > 0.0 && n_train == 0) n_train = 1;
  if (val_frac > 0.0 && n_val == 0) n_val = 1;
  while (n_train + n_val > count) (n_val > 0 ? n_val : n_train)--;
  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + n_train);
  s.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  s.test.assign(order.begin() + n_train + n_val, order.end());
  return s;
}

// ---- PGM ---------------------------------------------------------------------

void write_pgm(const std::string& path, const PgmImage& img) {
  if (img.w < 1 || img.h < 1 ||
      img.pixels.size() != static_cast<std::size_t>(img.w) * img.h)
    throw ContractError("write_pgm: inconsistent image dimensions");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << "P5\n" << img.w << ' ' << img.h << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw IoError("short write to '" + path + "'");
}

namespace {
int parse_pgm_int(const std::string& buf, std::size_t& pos, const std::string& path) {
  while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
  if (pos >= buf.size() || !std::isdigit(static_cast<unsigned char>(buf[pos])))
    throw IoError("'" + path + "': malformed PGM header at byte offset " +
                  std::to_string(pos));
  int v = 0;
  while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) {
    v = v * 10 + (buf[pos] - '0');
    ++pos;
  }
  return v;
}
}  // namespace

PgmImage read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 2 || buf[0] != 'P')
    throw IoError("'" + path + "': not a PGM file (bad magic at byte offset 0)");
  if (buf[1] == '2')
    throw IoError("'" + path + "': ASCII PGM (P2) is not supported, expected binary P5");
  if (buf[1] != '5')
    throw IoError("'" + path + "': unknown PGM magic at byte offset 1");
  std::size_t pos = 2;
  int w = parse_pgm_int(buf, pos, path);
  int h = parse_pgm_int(buf, pos, path);
  int maxval = parse_pgm_int(buf, pos, path);
  if (maxval != 255)
    throw IoError("'" + path + "': maxval " + std::to_string(maxval) +
                  " unsupported (expected 255) at byte offset " + std::to_string(pos));
  if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos])))
    throw IoError("'" + path + "': missing whitespace after maxval at byte offset " +
                  std::to_string(pos));
  ++pos;
  std::size_t need = static_cast<std::size_t>(w) * h;
  if (buf.size() - pos != need)
    throw IoError("'" + path + "': expected " + std::to_string(need) +
                  " data bytes, found " + std::to_string(buf.size() - pos) +
                  " at byte offset " + std::to_string(pos));
  PgmImage img;
  img.w = w;
  img.h = h;
  img.pixels.assign(buf.begin() + pos, buf.end());
  return img;
}

// ---- dataset on disk ----------------------------------------------------------

namespace {
std::string index_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d", i);
  return buf;
}

PgmImage plane_to_pgm(const Tensor& image, int channel, int h, int w) {
  PgmImage img;
  img.w = w;
  img.h = h;
  img.pixels.resize(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    double v = image.data()[static_cast<std::size_t>(channel) * h * w + i];
    img.pixels[i] =
        static_cast<std::uint8_t>(std::clamp(std::llround(255.0 * v), 0LL, 255LL));
  }
  return img;
}

json split_json(const std::vector<int>& v) { return json(v); }
std::vector<int> split_from(const json& j) {
  std::vector<int> out;
  for (const auto& x : j) out.push_back(x.get<int>());
  return out;
}
}  // namespace

void save_dataset(const Dataset& data, const SynthSpec& spec, const SplitIndices& splits,
                  const std::string& root) {
  fs::create_directories(fs::path(root) / "images");
  fs::create_directories(fs::path(root) / "masks");
  const char* plane_suffix[3] = {"_r", "_g", "_b"};
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sample& s = data[i];
    int c = s.image.shape()[0], h = s.image.shape()[1], w = s.image.shape()[2];
    std::string stem = index_name(static_cast<int>(i));
    if (c == 1) {
      write_pgm((fs::path(root) / "images" / (stem + ".pgm")).string(),
                plane_to_pgm(s.image, 0, h, w));
    } else {
      for (int ch = 0; ch < c; ++ch)
        write_pgm((fs::path(root) / "images" / (stem + plane_suffix[ch] + ".pgm")).string(),
                  plane_to_pgm(s.image, ch, h, w));
    }
    PgmImage m;
    m.w = s.mask.shape()[1];
    m.h = s.mask.shape()[0];
    m.pixels.resize(s.mask.numel());
    for (std::size_t p = 0; p < s.mask.numel(); ++p)
      m.pixels[p] = static_cast<std::uint8_t>(s.mask.data()[p]);
    write_pgm((fs::path(root) / "masks" / (stem + ".pgm")).string(), m);
  }
  json manifest;
  manifest["count"] = data.size();
  manifest["spec"] = json::parse(spec.to_json_text());
  manifest["splits"] = {{"train", split_json(splits.train)},
                        {"val", split_json(splits.val)},
                        {"test", split_json(splits.test)}};
  std::ofstream mf(fs::path(root) / "manifest.json");
  if (!mf) throw IoError("cannot write manifest under '" + root + "'");
  mf << manifest.dump(2) << '\n';
}

LoadedDataset load_dataset(const std::string& root) {
  std::ifstream mf(fs::path(root) / "manifest.json");
  if (!mf) throw IoError("no manifest.json under '" + root + "'");
  std::string text((std::istreambuf_iterator<char>(mf)), std::istreambuf_iterator<char>());
  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(std::string("manifest JSON parse error: ") + e.what());
  }
  LoadedDataset out;
  out.spec = SynthSpec::from_json_text(manifest["spec"].dump());
  out.splits.train = split_from(manifest["splits"]["train"]);
  out.splits.val = split_from(manifest["splits"]["val"]);
  out.splits.test = split_from(manifest["splits"]["test"]);
  int count = manifest["count"].get<int>();
  const char* plane_suffix[3] = {"_r", "_g", "_b"};
  for (int i = 0; i < count; ++i) {
    std::string stem = index_name(i);
    Sample s;
    if (out.spec.channels == 1) {
      PgmImage img = read_pgm((fs::path(root) / "images" / (stem + ".pgm")).string());
      s.image = Tensor::zeros({1, img.h, img.w});
      for (std::size_t p = 0; p < img.pixels.size(); ++p)
        s.image.data()[p] = img.pixels[p] / 255.0;
    } else {
      for (int ch = 0; ch < out.spec.channels; ++ch) {
        PgmImage img = read_pgm(
            (fs::path(root) / "images" / (stem + plane_suffix[ch] + ".pgm")).string());
        if (ch == 0) s.image = Tensor::zeros({out.spec.channels, img.h, img.w});
        for (std::size_t p = 0; p < img.pixels.size(); ++p)
          s.image.data()[static_cast<std::size_t>(ch) * img.h * img.w + p] =
              img.pixels[p] / 255.0;
      }
    }
    PgmImage m = read_pgm((fs::path(root) / "masks" / (stem + ".pgm")).string());
    s.mask = Tensor::zeros({m.h, m.w});
    for (std::size_t p = 0; p < m.pixels.size(); ++p)
      s.mask.data()[p] = static_cast<double>(m.pixels[p]);
    out.samples.push_back(std::move(s));
  }
  return out;
}

std::vector<std::pair<Tensor, Tensor>> gather(const Dataset& data,
                                              const std::vector<int>& indices) {
  std::vector<std::pair<Tensor, Tensor>> out;
  out.reserve(indices.size());
  for (int i : indices) {
    if (i < 0 || static_cast<std::size_t>(i) >= data.size())
      throw ContractError("gather: index " + std::to_string(i) + " out of range");
    out.emplace_back(data[i].image, data[i].mask);
  }
  return out;
}

}  // namespace tn
