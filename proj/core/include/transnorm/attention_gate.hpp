#pragma once

#include "transnorm/nn.hpp"

namespace tn {

/// Two-level gate for skip-connection features: per-channel sigmoid weights
/// from a squeeze/excite MLP, followed by multiplication with a spatial
/// saliency map. Channel gating always precedes spatial gating.
class AttentionGate {
 public:
  AttentionGate() = default;
  AttentionGate(int channels, int reduction, bool use_channel, bool use_spatial,
                std::uint64_t seed, const std::string& name);

  int channels() const { return channels_; }
  int reduction() const { return reduction_; }
  bool channel_enabled() const { return use_channel_; }
  bool spatial_enabled() const { return use_spatial_; }

  const Linear& squeeze() const { return squeeze_; }
  const Linear& excite() const { return excite_; }
  Linear& squeeze() { return squeeze_; }
  Linear& excite() { return excite_; }

  void visit(const std::string& prefix, StateVisitor& v);

 private:
  int channels_ = 0;
  int reduction_ = 1;
  bool use_channel_ = true;
  bool use_spatial_ = true;
  Linear squeeze_;  // C -> C/r
  Linear excite_;   // C/r -> C
};

/// Per-channel weights in (0,1): global_avg_pool -> W1 -> relu -> W2 -> sigmoid.
/// Returns [B, C, 1, 1].
Tensor channel_attention(const Tensor& f, const AttentionGate& gate);

/// f_sn = W_s (*) (W_c(f) (*) f), broadcasting W_c over space and W_s over
/// channels. The spatial map must already be at f's resolution. Levels the
/// gate has disabled pass through unchanged.
Tensor apply_gate(const Tensor& f, const Tensor& spatial_map, const AttentionGate& gate);

}  // namespace tn
