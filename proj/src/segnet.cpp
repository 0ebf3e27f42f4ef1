#include "trifuse/segnet.hpp"

#include <sstream>

namespace trifuse {

const char* feature_extractor_name(FeatureExtractor f) {
  switch (f) {
    case FeatureExtractor::Base: return "base";
    case FeatureExtractor::ResNet3d: return "3d_resnet";
    case FeatureExtractor::ResNet2d: return "2d_resnet";
    case FeatureExtractor::None: return "none";
  }
  return "?";
}

FeatureExtractor feature_extractor_from_name(const std::string& name) {
  for (FeatureExtractor f : {FeatureExtractor::Base, FeatureExtractor::ResNet3d,
                             FeatureExtractor::ResNet2d, FeatureExtractor::None})
    if (name == feature_extractor_name(f)) return f;
  throw ConfigError("unknown feature extractor '" + name + "'");
}

void NetworkConfig::validate() const {
  if (in_channels < 1) throw ConfigError("network: in_channels must be positive");
  if (encoder_channels.empty()) throw ConfigError("network: encoder_channels empty");
  for (std::size_t i = 0; i + 1 < encoder_channels.size(); ++i)
    if (encoder_channels[i] >= encoder_channels[i + 1])
      throw ConfigError("network: encoder channel list must be strictly increasing");
  if (bottleneck_channels <= encoder_channels.back())
    throw ConfigError("network: bottleneck channels must exceed the deepest encoder level");
  if (out_regions != 3) throw ConfigError("network: out_regions is fixed at 3 (WT,TC,ET)");
  if (deep_supervision_levels < 0 || deep_supervision_levels > levels() - 1)
    throw ConfigError("network: deep_supervision_levels must be in [0, levels-1]");
  if (bottleneck_dropout < 0.0 || bottleneck_dropout >= 1.0)
    throw ConfigError("network: bottleneck_dropout must be in [0,1)");
  if (semantic_attention && !semantic_hooks)
    throw ConfigError("network: semantic_attention requires semantic_hooks");
}

SegNet::SegNet(nn::ParamStore& ps, NetworkConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int L = cfg_.levels();
  const auto& enc = cfg_.encoder_channels;
  kernel_ = cfg_.extractor == FeatureExtractor::ResNet2d ? std::array<int, 3>{1, 3, 3}
                                                         : std::array<int, 3>{3, 3, 3};
  const std::array<int, 3> pad{kernel_[0] / 2, kernel_[1] / 2, kernel_[2] / 2};
  use_cbam_ = cfg_.extractor == FeatureExtractor::Base;
  use_gates_ = cfg_.extractor == FeatureExtractor::Base;

  if (cfg_.extractor != FeatureExtractor::None) {
    for (int i = 0; i < L; ++i) {
      const int cin = i == 0 ? cfg_.in_channels : enc[static_cast<std::size_t>(i)];
      enc_blocks_.emplace_back(ps, "encoder.block" + std::to_string(i), cin,
                               enc[static_cast<std::size_t>(i)], kernel_, use_cbam_,
                               cfg_.cbam_reduction, cfg_.spatial_attention_kernel);
      const int cout = i + 1 < L ? enc[static_cast<std::size_t>(i + 1)] : cfg_.bottleneck_channels;
      DownBlock down;
      down.conv = nn::Conv3d(ps, "encoder.down" + std::to_string(i) + ".conv",
                             enc[static_cast<std::size_t>(i)], cout, kernel_, {2, 2, 2}, pad,
                             nn::ParamGroup::EncoderDecoder);
      down.norm = nn::InstanceNorm(ps, "encoder.down" + std::to_string(i) + ".norm", cout,
                                   nn::ParamGroup::EncoderDecoder);
      downs_.push_back(std::move(down));
    }
    bottleneck_block_ =
        nn::ResidualBlock(ps, "bottleneck.block", cfg_.bottleneck_channels,
                          cfg_.bottleneck_channels, kernel_, use_cbam_, cfg_.cbam_reduction,
                          cfg_.spatial_attention_kernel);

    up_convs_.resize(static_cast<std::size_t>(L));
    dec_blocks_.resize(static_cast<std::size_t>(L));
    if (use_gates_) gates_.resize(static_cast<std::size_t>(L));
    for (int i = L - 1; i >= 0; --i) {
      const int above = i + 1 < L ? enc[static_cast<std::size_t>(i + 1)] : cfg_.bottleneck_channels;
      const int ci = enc[static_cast<std::size_t>(i)];
      DownBlock up;
      up.conv = nn::Conv3d(ps, "decoder.up" + std::to_string(i) + ".conv", above, ci, kernel_,
                           {1, 1, 1}, pad, nn::ParamGroup::EncoderDecoder);
      up.norm = nn::InstanceNorm(ps, "decoder.up" + std::to_string(i) + ".norm", ci,
                                 nn::ParamGroup::EncoderDecoder);
      up_convs_[static_cast<std::size_t>(i)] = std::move(up);
      if (use_gates_)
        gates_[static_cast<std::size_t>(i)] =
            nn::AttentionGate(ps, "decoder.gate" + std::to_string(i), ci, above,
                              std::max(1, ci / 2));
      dec_blocks_[static_cast<std::size_t>(i)] =
          nn::ResidualBlock(ps, "decoder.block" + std::to_string(i), 2 * ci, ci, kernel_,
                            use_cbam_, cfg_.cbam_reduction, cfg_.spatial_attention_kernel);
    }
  }

  for (int k = 1; k <= cfg_.deep_supervision_levels; ++k)
    aux_heads_.emplace_back(ps, "heads.aux" + std::to_string(k),
                            enc[static_cast<std::size_t>(k)], cfg_.out_regions,
                            std::array<int, 3>{1, 1, 1}, std::array<int, 3>{1, 1, 1},
                            std::array<int, 3>{0, 0, 0}, nn::ParamGroup::Head);

  head_conv_ = nn::Conv3d(ps, "heads.main.conv", cfg_.base_channels(), cfg_.head_channels,
                          kernel_, {1, 1, 1}, pad, nn::ParamGroup::Head);
  head_norm_ = nn::InstanceNorm(ps, "heads.main.norm", cfg_.head_channels, nn::ParamGroup::Head);
  head_out_ = nn::Conv3d(ps, "heads.main.out", cfg_.head_channels, cfg_.out_regions, {1, 1, 1},
                         {1, 1, 1}, {0, 0, 0}, nn::ParamGroup::Head);

  cls_fc1_ = nn::Linear(ps, "heads.cls.fc1", cfg_.bottleneck_channels, cfg_.cls_hidden,
                        nn::ParamGroup::Head);
  cls_fc2_ = nn::Linear(ps, "heads.cls.fc2", cfg_.cls_hidden, cfg_.num_classes,
                        nn::ParamGroup::Head);

  if (cfg_.semantic_hooks) {
    bottleneck_gate_ = nn::Linear(ps, "semantic_hooks.bottleneck_gate", cfg_.semantic_dim,
                                  cfg_.bottleneck_channels, nn::ParamGroup::Head);
    cond_scale_ = nn::Linear(ps, "semantic_hooks.cond_scale", cfg_.semantic_dim,
                             cfg_.head_channels, nn::ParamGroup::Head);
    cond_shift_ = nn::Linear(ps, "semantic_hooks.cond_shift", cfg_.semantic_dim,
                             cfg_.head_channels, nn::ParamGroup::Head);
  }
  if (cfg_.semantic_attention) {
    att_tc_ = SemanticSpatialAttention(ps, "semantic_hooks.att_tc", cfg_.base_channels(),
                                       cfg_.semantic_dim, 16);
    att_et_ = SemanticSpatialAttention(ps, "semantic_hooks.att_et", cfg_.base_channels(),
                                       cfg_.semantic_dim, 16);
  }
}

ModelOutput SegNet::forward(const Tensor& case_tensor, const SemanticFeatures* semantic,
                            double blend, nn::Ctx ctx) const {
  return forward(ad::Var::leaf(case_tensor), semantic, blend, ctx);
}

ModelOutput SegNet::forward(const ad::Var& x, const SemanticFeatures* semantic, double blend,
                            nn::Ctx ctx) const {
  const auto& s = x.shape();
  const int L = cfg_.levels();
  if (s.size() != 4 || s[0] != cfg_.in_channels)
    throw std::invalid_argument("forward: expected (" + std::to_string(cfg_.in_channels) +
                                ",D,H,W), got " + x.value().shape_string());
  const int div = 1 << L;
  if (s[1] % div || s[2] % div || s[3] % div)
    throw DataError("forward: spatial dims " + x.value().shape_string() +
                    " must be divisible by " + std::to_string(div) +
                    "; pad the volume to a multiple of " + std::to_string(div));
  if (blend < 0.0 || blend > 1.0) throw ConfigError("forward: blend must be in [0,1]");
  if (!semantic) blend = 0.0;

  const int D = s[1], H = s[2], W = s[3];
  std::vector<ad::Var> skips(static_cast<std::size_t>(L));
  std::vector<ad::Var> dec_feats(static_cast<std::size_t>(L));
  ad::Var h;

  if (cfg_.extractor != FeatureExtractor::None) {
    h = x;
    for (int i = 0; i < L; ++i) {
      h = enc_blocks_[static_cast<std::size_t>(i)](h);
      skips[static_cast<std::size_t>(i)] = h;
      h = downs_[static_cast<std::size_t>(i)](h);
    }
    h = bottleneck_block_(h);
    if (ctx.training && ctx.rng && cfg_.bottleneck_dropout > 0.0)
      h = ad::dropout(h, cfg_.bottleneck_dropout, *ctx.rng, true);
  } else {
    // No feature extractor: heads see a constant zero representation.
    h = ad::Var::leaf(Tensor({cfg_.bottleneck_channels, D / div, H / div, W / div}));
    for (int i = 0; i < L; ++i) {
      const int r = 1 << i;
      dec_feats[static_cast<std::size_t>(i)] = ad::Var::leaf(
          Tensor({cfg_.encoder_channels[static_cast<std::size_t>(i)], D / r, H / r, W / r}));
    }
  }

  // Semantic gating unit at the bottleneck.
  if (semantic && cfg_.semantic_hooks) {
    ad::Var gate = ad::sigmoid(bottleneck_gate_(semantic->f_fused));
    if (blend < 1.0) gate = ad::add_scalar(ad::scale(gate, blend), 1.0 - blend);
    h = ad::mul_channels(h, gate);
  }
  const ad::Var bottleneck = h;

  if (cfg_.extractor != FeatureExtractor::None) {
    for (int i = L - 1; i >= 0; --i) {
      const ad::Var gating = h;
      ad::Var up = up_convs_[static_cast<std::size_t>(i)](ad::upsample_trilinear2x(h));
      ad::Var skip = skips[static_cast<std::size_t>(i)];
      if (use_gates_) skip = gates_[static_cast<std::size_t>(i)](skip, gating);
      h = dec_blocks_[static_cast<std::size_t>(i)](ad::concat_channels({up, skip}));
      dec_feats[static_cast<std::size_t>(i)] = h;
    }
  }

  ModelOutput out;
  out.bottleneck_features = bottleneck;
  out.decoder_features = dec_feats[0];

  for (int k = 1; k <= cfg_.deep_supervision_levels; ++k)
    out.aux.push_back(
        ad::sigmoid(aux_heads_[static_cast<std::size_t>(k - 1)](dec_feats[static_cast<std::size_t>(k)])));

  // Main head with conditional normalization.
  ad::Var t = head_norm_(head_conv_(dec_feats[0]));
  if (semantic && cfg_.semantic_hooks) {
    ad::Var cs = ad::add_scalar(ad::scale(cond_scale_(semantic->f_fused), blend), 1.0 - blend);
    ad::Var ct = ad::scale(cond_shift_(semantic->f_fused), blend);
    t = ad::affine_channels(t, cs, ct);
  }
  ad::Var main = ad::sigmoid(head_out_(ad::relu(t)));

  if (semantic && cfg_.semantic_attention) {
    auto [wt, tc, et] = split_output(main);
    tc = att_tc_(tc, dec_feats[0], semantic->f_fused, blend);
    et = att_et_(et, dec_feats[0], semantic->f_fused, blend);
    main = assemble_output(wt, tc, et);
  }
  out.main = main;

  ad::Var cls = ad::global_avg_pool(bottleneck);
  if (ctx.training && ctx.rng) cls = ad::dropout(cls, cfg_.cls_dropout1, *ctx.rng, true);
  cls = ad::relu(cls_fc1_(cls));
  if (ctx.training && ctx.rng) cls = ad::dropout(cls, cfg_.cls_dropout2, *ctx.rng, true);
  out.class_logits = cls_fc2_(cls);
  return out;
}

std::string describe_network(const nn::ParamStore& ps, const NetworkConfig& cfg) {
  std::ostringstream os;
  os << "architecture: attention-enhanced 3D U-Net (" << feature_extractor_name(cfg.extractor)
     << " extractor)\n";
  os << "encoder channels:";
  for (int c : cfg.encoder_channels) os << " " << c;
  os << " | bottleneck " << cfg.bottleneck_channels << "\n";
  os << "regions: " << cfg.out_regions
     << " | deep supervision levels: " << cfg.deep_supervision_levels
     << " | semantic hooks: " << (cfg.semantic_hooks ? "on" : "off")
     << " | region attention: " << (cfg.semantic_attention ? "on" : "off") << "\n";
  os << "parameters: " << ps.total_params() << " total\n";
  for (nn::ParamGroup g : {nn::ParamGroup::EncoderDecoder, nn::ParamGroup::Attention,
                           nn::ParamGroup::ClipAdapter, nn::ParamGroup::Head})
    os << "  " << nn::param_group_name(g) << ": " << ps.group_params(g) << "\n";
  os << "tensors:\n";
  for (const auto& e : ps.entries())
    os << "  " << e.name << " " << e.var.value().shape_string() << " ["
       << nn::param_group_name(e.group) << "]\n";
  return os.str();
}

}  // namespace trifuse
