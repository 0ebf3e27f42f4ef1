#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "trifuse/autodiff.hpp"

namespace trifuse::nn {

// Optimizer parameter groups with per-group learning-rate multipliers.
enum class ParamGroup { EncoderDecoder, ClipAdapter, Attention, Head };
const char* param_group_name(ParamGroup g);

struct Init {
  enum Kind { Zero, Constant, KaimingNormal, XavierUniform } kind = Zero;
  double value = 0.0;   // Constant
  double fan_in = 1.0;  // Kaiming / Xavier
  double fan_out = 1.0; // Xavier

  static Init zero() { return {}; }
  static Init constant(double v) { return {Constant, v, 1, 1}; }
  static Init kaiming(double fan_in) { return {KaimingNormal, 0, fan_in, 1}; }
  static Init xavier(double fan_in, double fan_out) { return {XavierUniform, 0, fan_in, fan_out}; }
};

// Owns every trainable tensor. Initialization is a pure function of
// (seed, parameter name), so adding or removing unrelated modules never
// shifts another module's initial weights.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ad::Var var;
    ParamGroup group;
  };

  explicit ParamStore(std::uint64_t seed) : seed_(seed) {}

  ad::Var create(const std::string& name, std::vector<int> shape, ParamGroup group, Init init);

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  const Entry* find(const std::string& name) const;
  Entry* find(const std::string& name);

  void zero_grad();
  std::int64_t total_params() const;
  std::int64_t group_params(ParamGroup g) const;
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::vector<Entry> entries_;
};

// Forward-pass context: training enables dropout, which draws from rng.
struct Ctx {
  bool training = false;
  rng_t* rng = nullptr;
};

struct Conv3d {
  ad::Var w, b;
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> pad{1, 1, 1};

  Conv3d() = default;
  Conv3d(ParamStore& ps, const std::string& prefix, int cin, int cout,
         std::array<int, 3> kernel, std::array<int, 3> stride, std::array<int, 3> pad,
         ParamGroup group);

  ad::Var operator()(const ad::Var& x) const { return ad::conv3d(x, w, b, stride, pad); }
};

struct InstanceNorm {
  ad::Var gamma, beta;

  InstanceNorm() = default;
  InstanceNorm(ParamStore& ps, const std::string& prefix, int channels, ParamGroup group);

  ad::Var operator()(const ad::Var& x) const { return ad::instance_norm(x, gamma, beta); }
};

struct Linear {
  ad::Var w, b;

  Linear() = default;
  Linear(ParamStore& ps, const std::string& prefix, int in, int out, ParamGroup group);

  ad::Var operator()(const ad::Var& x) const { return ad::linear(x, w, b); }
  ad::Var rows(const ad::Var& x) const { return ad::linear_rows(x, w, b); }
};

// Channel attention: shared two-layer MLP over average- and max-pooled
// channel descriptors, sigmoid-gated.
struct ChannelAttention {
  Linear fc1, fc2;

  ChannelAttention() = default;
  ChannelAttention(ParamStore& ps, const std::string& prefix, int channels, int reduction);

  ad::Var gate(const ad::Var& x) const;               // (C) in (0,1)
  ad::Var operator()(const ad::Var& x) const;         // rescaled features
};

// Spatial attention: conv over stacked channel-mean/max maps.
struct SpatialAttention {
  Conv3d conv;

  SpatialAttention() = default;
  SpatialAttention(ParamStore& ps, const std::string& prefix, int kernel);

  ad::Var map(const ad::Var& x) const;                // (1,D,H,W) in (0,1)
  ad::Var operator()(const ad::Var& x) const;
};

struct Cbam {
  ChannelAttention channel;
  SpatialAttention spatial;

  Cbam() = default;
  Cbam(ParamStore& ps, const std::string& prefix, int channels, int reduction, int spatial_kernel);

  ad::Var operator()(const ad::Var& x) const { return spatial(channel(x)); }
};

// Pre-activation residual block with optional CBAM on the conv path:
// out = proj(x) + attn(conv2(relu(norm2(conv1(relu(norm1(x))))))).
struct ResidualBlock {
  InstanceNorm norm1, norm2;
  Conv3d conv1, conv2;
  Conv3d proj;  // 1x1x1, present only when cin != cout
  bool has_proj = false;
  bool use_cbam = false;
  Cbam cbam;

  ResidualBlock() = default;
  ResidualBlock(ParamStore& ps, const std::string& prefix, int cin, int cout,
                std::array<int, 3> kernel, bool with_cbam, int cbam_reduction,
                int spatial_kernel);

  ad::Var operator()(const ad::Var& x) const;
};

// Attention gate on a skip connection. The gating signal is the coarser
// decoder feature map, upsampled to the skip resolution inside the op.
struct AttentionGate {
  Conv3d theta, phi, psi;

  AttentionGate() = default;
  AttentionGate(ParamStore& ps, const std::string& prefix, int skip_channels, int gate_channels,
                int inter_channels);

  ad::Var alpha(const ad::Var& skip, const ad::Var& gating) const;  // (1,D,H,W) in (0,1)
  ad::Var operator()(const ad::Var& skip, const ad::Var& gating) const;
};

struct MultiHeadSelfAttention {
  Linear wq, wk, wv, wo;
  int heads = 8;
  int dim = 0;

  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(ParamStore& ps, const std::string& prefix, int dim, int heads);

  ad::Var operator()(const ad::Var& x) const;  // (L,S) -> (L,S)
};

}  // namespace trifuse::nn
