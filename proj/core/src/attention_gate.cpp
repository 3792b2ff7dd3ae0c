#include "transnorm/attention_gate.hpp"

namespace tn {

AttentionGate::AttentionGate(int channels, int reduction, bool use_channel,
                             bool use_spatial, std::uint64_t seed, const std::string& name)
    : channels_(channels),
      reduction_(reduction),
      use_channel_(use_channel),
      use_spatial_(use_spatial) {
  if (reduction < 1) throw ConfigError("attention gate: reduction must be >= 1");
  if (channels % reduction != 0)
    throw ConfigError("attention gate: channels " + std::to_string(channels) +
                      " not divisible by reduction " + std::to_string(reduction));
  if (use_channel) {
    squeeze_ = Linear(channels, channels / reduction, seed, name + ".squeeze");
    excite_ = Linear(channels / reduction, channels, seed, name + ".excite");
  }
}

void AttentionGate::visit(const std::string& prefix, StateVisitor& v) {
  if (use_channel_) {
    squeeze_.visit(prefix + ".squeeze", v);
    excite_.visit(prefix + ".excite", v);
  }
}

Tensor channel_attention(const Tensor& f, const AttentionGate& gate) {
  if (f.rank() != 4 || f.shape()[1] != gate.channels())
    throw DimensionError("channel_attention: input " + shape_str(f.shape()) +
                         " does not match gate over " + std::to_string(gate.channels()) +
                         " channels");
  Tensor pooled = global_avg_pool(f);  // [B,C]
  Tensor weights = sigmoid(gate.excite()(relu(gate.squeeze()(pooled))));
  return reshape(weights, {f.shape()[0], f.shape()[1], 1, 1});
}

Tensor apply_gate(const Tensor& f, const Tensor& spatial_map, const AttentionGate& gate) {
  Tensor out = f;
  if (gate.channel_enabled()) out = mul(channel_attention(f, gate), out);
  if (gate.spatial_enabled()) {
    if (!spatial_map.defined())
      throw ContractError("apply_gate: spatial gating enabled but no map supplied");
    if (spatial_map.rank() != 4 || spatial_map.shape()[1] != 1 ||
        spatial_map.shape()[0] != f.shape()[0] ||
        spatial_map.shape()[2] != f.shape()[2] || spatial_map.shape()[3] != f.shape()[3])
      throw DimensionError("apply_gate: spatial map " + shape_str(spatial_map.shape()) +
                           " does not match features " + shape_str(f.shape()));
    out = mul(spatial_map, out);
  }
  return out;
}

}  // namespace tn
