#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "transnorm/attention_gate.hpp"
#include "transnorm/encoder.hpp"
#include "transnorm/transformer.hpp"

namespace tn {

enum class ModelScale { Base, Large };

/// Every architectural hyperparameter in one place; all derived shapes follow
/// from these fields. `validate()` rejects inconsistent configurations before
/// any tensor is allocated.
struct ModelConfig {
  int input_channels = 1;
  int input_size = 64;  // H = W, divisible by 16
  int num_classes = 2;
  int base_width = 16;
  TransformerConfig transformer;
  int gate_reduction = 4;
  int skip_count = 3;  // lateral merges, deepest (1/16) first: 1/16, 1/8, 1/4
  ModelScale scale = ModelScale::Base;
  bool use_transformer = true;
  bool use_channel_gate = true;
  bool use_spatial_gate = true;
  std::uint64_t seed = 0;

  void validate() const;
  /// Applies the scale preset (Large -> K=8, D=128) and returns *this.
  ModelConfig& apply_scale();

  static ModelConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
};

/// Named snapshot of all model state plus its configuration. Binary layout:
/// magic "TNRM", u32 version=1, u32-length-prefixed UTF-8 config JSON,
/// u32 tensor count, then per tensor: u32-length-prefixed name, u32 rank,
/// u64 dims, raw little-endian f64 data.
struct Checkpoint {
  std::string config_json;
  std::vector<std::pair<std::string, Tensor>> tensors;
  long long step = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

enum class GateMode { Active, Neutral };

class TransNorm {
 public:
  explicit TransNorm(const ModelConfig& cfg);

  struct ForwardResult {
    Tensor logits;  // [B, num_classes, H, W]
    AttentionRecord record;
  };
  ForwardResult forward(const Tensor& image, bool training);

  /// Pixelwise cross-entropy over logits [B,K,H,W] vs class-id mask [B,H,W].
  Tensor cross_entropy(const Tensor& logits, const Tensor& target) const;
  /// 1 - mean soft Dice over classes (smoothing 1e-6).
  Tensor dice_loss(const Tensor& logits, const Tensor& target) const;
  /// 0.5 * cross-entropy + 0.5 * Dice loss.
  Tensor loss(const Tensor& logits, const Tensor& target) const;

  const ModelConfig& config() const { return cfg_; }
  void visit(StateVisitor& v);
  std::vector<std::pair<std::string, Tensor>> named_parameters();
  void zero_grad();

  /// Skips all gate arithmetic when Neutral (structurally identical to a
  /// gate-free model with the same seed).
  void set_gate_mode(GateMode m) { gate_mode_ = m; }
  long long gate_invocations() const { return gate_invocations_; }

  /// Name of the first tensor holding a non-finite value, if any.
  std::optional<std::string> first_nonfinite() ;

  Checkpoint snapshot(long long step = 0);
  void restore(const Checkpoint& ckpt);
  static TransNorm from_checkpoint(const Checkpoint& ckpt);

 private:
  struct DecoderStage {
    ConvTranspose2d up;
    bool has_skip = false;
    int skip_level = -1;  // index into FeaturePyramid::levels
    int ws_factor = 1;    // spatial-map upsample factor at this stage
    std::optional<AttentionGate> gate;
    ConvBnRelu a, b;
  };

  Tensor gated(const Tensor& f, const Tensor& ws_native, int factor,
               const std::optional<AttentionGate>& gate);

  ModelConfig cfg_;
  Encoder encoder_;
  std::optional<Transformer> transformer_;
  std::optional<AttentionGate> bottleneck_gate_;
  std::optional<Conv2d> fuse_;  // 1x1 after bottleneck concat
  std::vector<DecoderStage> stages_;
  Conv2d head_;  // 1x1 to num_classes
  GateMode gate_mode_ = GateMode::Active;
  long long gate_invocations_ = 0;
};

// ---- optimization ----------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Tensor>> params, AdamConfig cfg);
  /// Applies one update from the gradients currently stored on the
  /// parameters; parameters without a gradient are left untouched.
  void step();
  void zero_grad();
  long long steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig cfg_;
  long long t_ = 0;
};

/// Forward + loss + backward + Adam update on one batch. Throws NumericError
/// (naming the first non-finite tensor) if the loss is not finite.
double train_step(TransNorm& model, Adam& adam, const Tensor& images,
                  const Tensor& targets);

struct TrainConfig {
  int epochs = 100;
  int batch_size = 16;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  int patience = 10;
  std::uint64_t seed = 0;

  static TrainConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct FitResult {
  std::vector<EpochLog> history;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  int epochs_run = 0;
  bool early_stopped = false;
  Checkpoint best;
};

/// Up to cfg.epochs epochs with early stopping once the validation loss has
/// not improved for cfg.patience consecutive epochs. The model is left at
/// (and the result carries) the best-validation state. With an empty
/// validation set the train loss is monitored instead.
FitResult fit(TransNorm& model, const std::vector<std::pair<Tensor, Tensor>>& train,
              const std::vector<std::pair<Tensor, Tensor>>& val, const TrainConfig& cfg);

/// Stacks per-sample (image [C,H,W], mask [H,W]) pairs into batch tensors.
std::pair<Tensor, Tensor> make_batch(const std::vector<std::pair<Tensor, Tensor>>& samples,
                                     const std::vector<int>& indices);

/// Per-pixel argmax over the class axis: [B,K,H,W] -> [B,H,W].
Tensor argmax_classes(const Tensor& logits);

}  // namespace tn
