#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "transnorm/data.hpp"
#include "transnorm/metrics.hpp"
#include "transnorm/model.hpp"

#ifndef TRANSNORM_VERSION
#define TRANSNORM_VERSION "v0.1.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitCompat = 4;

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read '" + path + "'");
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << text;
}

int worker_count(std::size_t jobs) {
  unsigned n = std::thread::hardware_concurrency();
  if (const char* env = std::getenv("TRANSNORM_THREADS")) {
    long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = static_cast<unsigned>(v);
  }
  if (n < 1) n = 1;
  return static_cast<int>(std::min<std::size_t>(n, jobs));
}

// ---- generate ---------------------------------------------------------------

int cmd_generate(const std::string& spec_path, const std::string& out_dir,
                 std::uint64_t seed_override, bool has_seed) {
  SynthSpec spec;
  if (!spec_path.empty()) spec = SynthSpec::from_json_text(read_file(spec_path));
  if (has_seed) spec.seed = seed_override;
  spec.validate();
  Dataset data = generate(spec);
  SplitIndices splits =
      split(spec.count, spec.train_frac, spec.val_frac, spec.test_frac, spec.seed);
  save_dataset(data, spec, splits, out_dir);
  std::cout << "wrote " << data.size() << " samples to " << out_dir << " (train "
            << splits.train.size() << ", val " << splits.val.size() << ", test "
            << splits.test.size() << ")\n";
  return kExitOk;
}

// ---- train -------------------------------------------------------------------

void check_data_compat(const ModelConfig& cfg, const SynthSpec& spec) {
  if (cfg.input_size != spec.size)
    throw CompatError("model input_size " + std::to_string(cfg.input_size) +
                      " != dataset size " + std::to_string(spec.size));
  if (cfg.input_channels != spec.channels)
    throw CompatError("model input_channels " + std::to_string(cfg.input_channels) +
                      " != dataset channels " + std::to_string(spec.channels));
  if (cfg.num_classes < spec.num_classes)
    throw CompatError("model num_classes " + std::to_string(cfg.num_classes) +
                      " < dataset classes " + std::to_string(spec.num_classes));
}

json run_manifest(const ModelConfig& mc, const TrainConfig& tc, const std::string& data_dir,
                  const FitResult& res, double seconds) {
  json m;
  m["version"] = TRANSNORM_VERSION;
  m["seed"] = mc.seed;
  m["model_config"] = json::parse(mc.to_json_text());
  m["train_config"] = json::parse(tc.to_json_text());
  m["data_dir"] = data_dir;
  m["timings"] = {{"fit_seconds", seconds}};
  m["result"] = {{"best_epoch", res.best_epoch},
                 {"best_val_loss", res.best_val_loss},
                 {"epochs_run", res.epochs_run},
                 {"early_stopped", res.early_stopped}};
  return m;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out_path, const std::string& resume_path) {
  ModelConfig mc;
  TrainConfig tc;
  if (!config_path.empty()) {
    json j;
    try {
      j = json::parse(read_file(config_path));
    } catch (const json::parse_error& e) {
      throw IoError(std::string("config JSON parse error: ") + e.what());
    }
    if (j.contains("model")) mc = ModelConfig::from_json_text(j["model"].dump());
    if (j.contains("train")) tc = TrainConfig::from_json_text(j["train"].dump());
  }

  LoadedDataset data = load_dataset(data_dir);

  TransNorm model = resume_path.empty()
                        ? TransNorm(mc)
                        : TransNorm::from_checkpoint(load_checkpoint(resume_path));
  check_data_compat(model.config(), data.spec);

  auto train_set = gather(data.samples, data.splits.train);
  auto val_set = gather(data.samples, data.splits.val);

  auto t0 = std::chrono::steady_clock::now();
  FitResult res = fit(model, train_set, val_set, tc);
  double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (res.early_stopped)
    std::cout << "early stop at epoch " << res.epochs_run << " (best epoch "
              << res.best_epoch << ")\n";
  std::cout << "best val loss " << res.best_val_loss << " after " << res.epochs_run
            << " epochs, " << seconds << "s\n";

  save_checkpoint(res.best, out_path);

  std::ostringstream losses;
  losses << "epoch,train_loss,val_loss\n";
  for (const auto& e : res.history) {
    char row[96];
    std::snprintf(row, sizeof(row), "%d,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_loss);
    losses << row;
  }
  write_file(out_path + ".losses.csv", losses.str());
  write_file(out_path + ".manifest.json",
             run_manifest(model.config(), tc, data_dir, res, seconds).dump(2) + "\n");
  std::cout << "checkpoint written to " << out_path << "\n";
  return kExitOk;
}

// ---- eval --------------------------------------------------------------------

std::vector<int> pick_split(const LoadedDataset& data, const std::string& name) {
  if (name == "train") return data.splits.train;
  if (name == "val") return data.splits.val;
  if (name == "test") return data.splits.test;
  throw ConfigError("unknown split '" + name + "' (expected train|val|test)");
}

int cmd_eval(const std::string& data_dir, const std::string& ckpt_path,
             const std::string& pred_dir, const std::string& report_path,
             const std::string& split_name, bool hd95) {
  LoadedDataset data = load_dataset(data_dir);
  std::vector<int> indices = pick_split(data, split_name);
  if (indices.empty()) throw ConfigError("split '" + split_name + "' is empty");

  std::vector<std::pair<LabelMask, LabelMask>> pairs;
  if (!pred_dir.empty()) {
    for (int i : indices) {
      char name[16];
      std::snprintf(name, sizeof(name), "%05d.pgm", i);
      PgmImage img = read_pgm((fs::path(pred_dir) / name).string());
      LabelMask pred{img.h, img.w, std::vector<int>(img.pixels.begin(), img.pixels.end())};
      pairs.emplace_back(pred, mask_from_tensor(data.samples[i].mask));
    }
  } else {
    if (ckpt_path.empty()) throw ConfigError("eval needs --ckpt or --pred");
    TransNorm model = TransNorm::from_checkpoint(load_checkpoint(ckpt_path));
    check_data_compat(model.config(), data.spec);
    for (int i : indices) {
      auto batch = make_batch({{data.samples[i].image, data.samples[i].mask}}, {0});
      Tensor pred = argmax_classes(model.forward(batch.first, false).logits);
      pairs.emplace_back(
          mask_from_tensor(reshape(pred, {pred.shape()[1], pred.shape()[2]})),
          mask_from_tensor(data.samples[i].mask));
    }
  }
  std::optional<double> pct;
  if (hd95) pct = 95.0;
  MetricReport rep = aggregate_report(pairs, data.spec.num_classes, pct);
  std::string csv = report_csv(rep);
  write_file(report_path, csv);
  std::string json_path = report_path;
  if (json_path.size() > 4 && json_path.substr(json_path.size() - 4) == ".csv")
    json_path = json_path.substr(0, json_path.size() - 4);
  json_path += ".json";
  write_file(json_path, report_json(rep) + "\n");
  std::cout << csv;
  return kExitOk;
}

// ---- infer -------------------------------------------------------------------

Tensor image_from_files(const std::string& path, int channels) {
  if (channels == 1) {
    PgmImage img = read_pgm(path);
    Tensor t = Tensor::zeros({1, img.h, img.w});
    for (std::size_t i = 0; i < img.pixels.size(); ++i) t.data()[i] = img.pixels[i] / 255.0;
    return t;
  }
  // three planes named <stem>_r/_g/_b.pgm; the _r plane works as the handle
  std::string stem = path;
  const std::string r_sfx = "_r.pgm";
  if (stem.size() > r_sfx.size() && stem.substr(stem.size() - r_sfx.size()) == r_sfx)
    stem = stem.substr(0, stem.size() - r_sfx.size());
  else if (stem.size() > 4 && stem.substr(stem.size() - 4) == ".pgm")
    stem = stem.substr(0, stem.size() - 4);
  const char* sfx[3] = {"_r.pgm", "_g.pgm", "_b.pgm"};
  Tensor t;
  for (int c = 0; c < 3; ++c) {
    PgmImage img = read_pgm(stem + sfx[c]);
    if (c == 0) t = Tensor::zeros({3, img.h, img.w});
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
      t.data()[static_cast<std::size_t>(c) * img.h * img.w + i] = img.pixels[i] / 255.0;
  }
  return t;
}

int cmd_infer(const std::string& image_path, const std::string& ckpt_path,
              const std::string& out_path, const std::string& attn_dir, bool raw) {
  TransNorm model = TransNorm::from_checkpoint(load_checkpoint(ckpt_path));
  const ModelConfig& cfg = model.config();
  Tensor img = image_from_files(image_path, cfg.input_channels);
  if (img.shape()[1] != cfg.input_size || img.shape()[2] != cfg.input_size)
    throw CompatError("image " + shape_str(img.shape()) + " does not match model input " +
                      std::to_string(cfg.input_size));
  Tensor batch = reshape(img, {1, cfg.input_channels, cfg.input_size, cfg.input_size});
  auto out = model.forward(batch, false);
  Tensor pred = argmax_classes(out.logits);

  PgmImage mask;
  mask.w = cfg.input_size;
  mask.h = cfg.input_size;
  mask.pixels.resize(pred.numel());
  for (std::size_t i = 0; i < pred.numel(); ++i)
    mask.pixels[i] = static_cast<std::uint8_t>(pred.data()[i]);
  write_pgm(out_path, mask);
  std::cout << "mask written to " << out_path << "\n";

  if (!attn_dir.empty()) {
    if (!out.record.spatial_map.defined())
      throw ConfigError("checkpoint has no transformer; no attention map to export");
    fs::create_directories(attn_dir);
    int native = out.record.spatial_map.shape()[2];
    Tensor up = bilinear_upsample(out.record.spatial_map, cfg.input_size / native);
    PgmImage heat;
    heat.w = cfg.input_size;
    heat.h = cfg.input_size;
    heat.pixels.resize(up.numel());
    for (std::size_t i = 0; i < up.numel(); ++i)
      heat.pixels[i] = static_cast<std::uint8_t>(
          std::clamp(std::llround(255.0 * up.data()[i]), 0LL, 255LL));
    write_pgm((fs::path(attn_dir) / "ws.pgm").string(), heat);
    if (raw) {
      // full-precision native-resolution map in the checkpoint container
      Checkpoint wsck;
      wsck.config_json = "{}";
      wsck.tensors.emplace_back("W_s", out.record.spatial_map.clone());
      save_checkpoint(wsck, (fs::path(attn_dir) / "ws.tnt").string());
    }
    std::cout << "attention map written to " << attn_dir << "\n";
  }
  return kExitOk;
}

// ---- ablate ------------------------------------------------------------------

struct AblationCell {
  ModelConfig model;
  TrainConfig train;
  std::vector<std::pair<std::string, std::string>> labels;  // column -> value
  std::string status = "ok";
  double dsc = 0.0, ac = 0.0;
  bool failed = false;
};

void apply_variant(ModelConfig& cfg, const std::string& variant) {
  if (variant == "baseline") {
    cfg.use_transformer = false;
    cfg.use_channel_gate = false;
    cfg.use_spatial_gate = false;
  } else if (variant == "transformer") {
    cfg.use_transformer = true;
    cfg.use_channel_gate = false;
    cfg.use_spatial_gate = false;
  } else if (variant == "channel") {
    cfg.use_transformer = true;
    cfg.use_channel_gate = true;
    cfg.use_spatial_gate = false;
  } else if (variant == "spatial") {
    cfg.use_transformer = true;
    cfg.use_channel_gate = false;
    cfg.use_spatial_gate = true;
  } else if (variant == "full") {
    cfg.use_transformer = true;
    cfg.use_channel_gate = true;
    cfg.use_spatial_gate = true;
  } else {
    throw ConfigError("unknown variant '" + variant +
                      "' (baseline|transformer|channel|spatial|full)");
  }
}

void run_cell(AblationCell& cell, const LoadedDataset& data) {
  try {
    check_data_compat(cell.model, data.spec);
    TransNorm model(cell.model);
    auto train_set = gather(data.samples, data.splits.train);
    auto val_set = gather(data.samples, data.splits.val);
    fit(model, train_set, val_set, cell.train);

    std::vector<std::pair<LabelMask, LabelMask>> pairs;
    for (const auto& [img, msk] : val_set) {
      auto batch = make_batch({{img, msk}}, {0});
      Tensor pred = argmax_classes(model.forward(batch.first, false).logits);
      pairs.emplace_back(
          mask_from_tensor(reshape(pred, {pred.shape()[1], pred.shape()[2]})),
          mask_from_tensor(msk));
    }
    MetricReport rep = aggregate_report(pairs, data.spec.num_classes);
    cell.dsc = rep.mean.dsc.value_or(0.0);
    cell.ac = rep.mean.acc.value_or(0.0);
  } catch (const std::exception& e) {
    cell.failed = true;
    std::string msg = e.what();
    for (char& c : msg)
      if (c == ',' || c == '\n') c = ' ';
    cell.status = msg;
  }
}

int cmd_ablate(const std::string& grid_path, const std::string& data_dir,
               const std::string& out_path) {
  json grid;
  try {
    grid = json::parse(read_file(grid_path));
  } catch (const json::parse_error& e) {
    throw IoError(std::string("grid JSON parse error: ") + e.what());
  }
  ModelConfig base;
  if (grid.contains("base_model"))
    base = ModelConfig::from_json_text(grid["base_model"].dump());
  TrainConfig tc;
  if (grid.contains("train")) tc = TrainConfig::from_json_text(grid["train"].dump());
  std::vector<std::uint64_t> seeds = {base.seed};
  if (grid.contains("seeds")) {
    seeds.clear();
    for (const auto& s : grid["seeds"]) seeds.push_back(s.get<std::uint64_t>());
    if (seeds.empty()) throw ConfigError("grid: empty seed list");
  }

  struct Axis {
    std::string name;
    std::vector<json> values;
  };
  std::vector<Axis> axes;
  if (grid.contains("axes"))
    for (auto& [name, values] : grid["axes"].items()) {
      Axis ax{name, {}};
      for (const auto& v : values) ax.values.push_back(v);
      if (ax.values.empty()) throw ConfigError("axis '" + name + "' has no values");
      axes.push_back(std::move(ax));
    }

  std::vector<AblationCell> cells;
  std::vector<std::size_t> cursor(axes.size(), 0);
  while (true) {
    for (std::uint64_t seed : seeds) {
      AblationCell cell;
      cell.model = base;
      cell.train = tc;
      cell.model.seed = seed;
      cell.train.seed = seed;
      for (std::size_t a = 0; a < axes.size(); ++a) {
        const json& v = axes[a].values[cursor[a]];
        const std::string& name = axes[a].name;
        if (name == "skip_count")
          cell.model.skip_count = v.get<int>();
        else if (name == "variant")
          apply_variant(cell.model, v.get<std::string>());
        else if (name == "input_size")
          cell.model.input_size = v.get<int>();
        else if (name == "scale") {
          cell.model.scale =
              v.get<std::string>() == "large" ? ModelScale::Large : ModelScale::Base;
          cell.model.apply_scale();
        } else {
          throw ConfigError("unknown ablation axis '" + name + "'");
        }
        cell.labels.emplace_back(name, v.is_string() ? v.get<std::string>() : v.dump());
      }
      cell.labels.emplace_back("seed", std::to_string(seed));
      cells.push_back(std::move(cell));
    }
    std::size_t a = 0;
    for (; a < axes.size(); ++a) {
      if (++cursor[a] < axes[a].values.size()) break;
      cursor[a] = 0;
    }
    if (a == axes.size()) break;
  }

  LoadedDataset data = load_dataset(data_dir);

  std::atomic<std::size_t> next{0};
  int workers = worker_count(cells.size());
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      while (true) {
        std::size_t i = next.fetch_add(1);
        if (i >= cells.size()) return;
        run_cell(cells[i], data);
      }
    });
  for (auto& t : pool) t.join();

  std::ostringstream csv;
  csv << "cell";
  if (!cells.empty())
    for (const auto& [name, value] : cells[0].labels) csv << ',' << name;
  csv << ",dsc,ac,status\n";
  bool any_failed = false;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    csv << i;
    for (const auto& [name, value] : cells[i].labels) csv << ',' << value;
    char nums[64];
    std::snprintf(nums, sizeof(nums), ",%.17g,%.17g,", cells[i].dsc, cells[i].ac);
    csv << nums << cells[i].status << "\n";
    any_failed = any_failed || cells[i].failed;
  }
  write_file(out_path, csv.str());
  std::cout << csv.str();
  std::cout << (any_failed ? "some cells failed\n" : "all cells ok\n");
  return any_failed ? 1 : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TransNorm segmentation: data synthesis, training, evaluation, "
               "inference, ablation sweeps"};
  app.set_version_flag("--version", TRANSNORM_VERSION);
  app.require_subcommand(1);

  std::string spec_path, out_dir;
  std::uint64_t seed = 0;
  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "SynthSpec JSON file");
  gen->add_option("--out", out_dir, "Output dataset directory")->required();
  auto* seed_opt = gen->add_option("--seed", seed, "Override the spec seed");

  std::string data_dir, config_path, ckpt_out, resume_path;
  auto* train = app.add_subcommand("train", "Train a model on a dataset directory");
  train->add_option("--data", data_dir, "Dataset directory")->required();
  train->add_option("--config", config_path, "JSON with {model:{...}, train:{...}}");
  train->add_option("--out", ckpt_out, "Checkpoint output path")->required();
  train->add_option("--resume", resume_path, "Resume from an existing checkpoint");

  std::string eval_data, eval_ckpt, eval_pred, report_path, split_name = "test";
  bool hd95 = false;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint (or stored masks)");
  eval->add_option("--data", eval_data, "Dataset directory")->required();
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint to evaluate");
  eval->add_option("--pred", eval_pred, "Directory of predicted masks (NNNNN.pgm)");
  eval->add_option("--report", report_path, "CSV report path (JSON written alongside)")
      ->required();
  eval->add_option("--split", split_name, "Which split to evaluate (train|val|test)");
  eval->add_flag("--hd95", hd95, "Report the 95th-percentile Hausdorff distance");

  std::string image_path, infer_ckpt, mask_out, attn_dir;
  bool raw = false;
  auto* infer = app.add_subcommand("infer", "Segment one image");
  infer->add_option("--image", image_path, "Input PGM (use the _r plane for RGB)")
      ->required();
  infer->add_option("--ckpt", infer_ckpt, "Checkpoint")->required();
  infer->add_option("--out", mask_out, "Predicted mask PGM path")->required();
  infer->add_option("--attn", attn_dir, "Also export the attention map here");
  infer->add_flag("--raw", raw, "With --attn, also dump the full-precision map");

  std::string grid_path, ablate_data, ablate_out;
  auto* ablate = app.add_subcommand("ablate", "Run a config-grid ablation sweep");
  ablate->add_option("--grid", grid_path, "Grid JSON")->required();
  ablate->add_option("--data", ablate_data, "Dataset directory")->required();
  ablate->add_option("--out", ablate_out, "Results CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    app.exit(e);
    return kExitInput;
  }

  try {
    if (gen->parsed()) return cmd_generate(spec_path, out_dir, seed, !seed_opt->empty());
    if (train->parsed()) return cmd_train(data_dir, config_path, ckpt_out, resume_path);
    if (eval->parsed())
      return cmd_eval(eval_data, eval_ckpt, eval_pred, report_path, split_name, hd95);
    if (infer->parsed()) return cmd_infer(image_path, infer_ckpt, mask_out, attn_dir, raw);
    if (ablate->parsed()) return cmd_ablate(grid_path, ablate_data, ablate_out);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const CompatError& e) {
    std::cerr << "compatibility error: " << e.what() << "\n";
    return kExitCompat;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitOk;
}
