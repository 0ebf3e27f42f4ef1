#pragma once

#include <optional>
#include <string>
#include <vector>

#include "trifuse/semantic.hpp"

namespace trifuse {

enum class FeatureExtractor { Base, ResNet3d, ResNet2d, None };
const char* feature_extractor_name(FeatureExtractor f);
FeatureExtractor feature_extractor_from_name(const std::string& name);

struct NetworkConfig {
  int in_channels = 4;
  std::vector<int> encoder_channels{32, 64, 128, 256};
  int bottleneck_channels = 512;
  int out_regions = 3;
  int deep_supervision_levels = 3;
  double bottleneck_dropout = 0.1;
  int cbam_reduction = 8;
  int spatial_attention_kernel = 7;
  int head_channels = 16;
  int cls_hidden = 128;
  int num_classes = 2;
  double cls_dropout1 = 0.3;
  double cls_dropout2 = 0.2;
  FeatureExtractor extractor = FeatureExtractor::Base;
  bool semantic_hooks = false;      // bottleneck gating unit + conditional head norm
  bool semantic_attention = false;  // region attention modules on TC/ET heads
  int semantic_dim = 512;           // dimension of the fused semantic feature

  int levels() const { return static_cast<int>(encoder_channels.size()); }
  int base_channels() const { return encoder_channels.front(); }
  void validate() const;
};

struct ModelOutput {
  ad::Var main;                 // (3,D,H,W) region probabilities [WT,TC,ET]
  std::vector<ad::Var> aux;     // deep-supervision probabilities, fine to coarse
  ad::Var class_logits;         // (num_classes)
  ad::Var bottleneck_features;  // gated bottleneck feature map
  ad::Var decoder_features;     // full-resolution decoder feature map
};

// Attention-enhanced 3D U-Net with residual CBAM blocks, gated skip
// connections, deep supervision, and optional semantic modulation hooks.
class SegNet {
 public:
  SegNet(nn::ParamStore& ps, NetworkConfig cfg);

  // `semantic` may be null (pure visual path); `blend` ramps the semantic
  // modulation in, 0 = identity, 1 = fully active.
  ModelOutput forward(const ad::Var& x, const SemanticFeatures* semantic, double blend,
                      nn::Ctx ctx) const;
  ModelOutput forward(const Tensor& case_tensor, const SemanticFeatures* semantic, double blend,
                      nn::Ctx ctx) const;

  const NetworkConfig& config() const { return cfg_; }

 private:
  struct DownBlock {
    nn::Conv3d conv;
    nn::InstanceNorm norm;
    ad::Var operator()(const ad::Var& x) const { return ad::relu(norm(conv(x))); }
  };

  NetworkConfig cfg_;
  std::array<int, 3> kernel_{3, 3, 3};
  bool use_cbam_ = true;
  bool use_gates_ = true;

  std::vector<nn::ResidualBlock> enc_blocks_;
  std::vector<DownBlock> downs_;
  nn::ResidualBlock bottleneck_block_;
  std::vector<DownBlock> up_convs_;  // post-upsample refinements
  std::vector<nn::AttentionGate> gates_;
  std::vector<nn::ResidualBlock> dec_blocks_;
  std::vector<nn::Conv3d> aux_heads_;  // index k -> decoder level k+1

  nn::Conv3d head_conv_;
  nn::InstanceNorm head_norm_;
  nn::Conv3d head_out_;
  nn::Linear cls_fc1_, cls_fc2_;

  nn::Linear bottleneck_gate_;           // semantic gating unit
  nn::Linear cond_scale_, cond_shift_;   // conditional normalization generators
  SemanticSpatialAttention att_tc_, att_et_;
};

// Human-readable architecture summary with parameter counts per group.
std::string describe_network(const nn::ParamStore& ps, const NetworkConfig& cfg);

}  // namespace trifuse
