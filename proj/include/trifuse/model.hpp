#pragma once

#include <memory>
#include <optional>

#include "trifuse/segnet.hpp"

namespace trifuse {

// Subtractive ablation switches mirroring the experiment matrix. Guidance and
// attention flags only take effect while semantic fusion is on.
struct AblationSwitches {
  bool pixel_fusion = true;
  bool semantic_fusion = true;
  bool semantic_guidance = true;
  bool semantic_attention = true;
  FeatureExtractor feature_extractor = FeatureExtractor::Base;
  BridgeMode bridge = BridgeMode::Learned;

  AblationSwitches normalized() const {
    AblationSwitches s = *this;
    if (!s.semantic_fusion) {
      s.semantic_guidance = false;
      s.semantic_attention = false;
    }
    return s;
  }
};

struct ForwardResult {
  ModelOutput output;
  std::optional<SemanticFeatures> semantic;
};

// The composed three-layer model: segmentation backbone plus optional
// semantic pathway, wired per the ablation switches.
class FusionModel {
 public:
  FusionModel(NetworkConfig net_cfg, SemanticConfig sem_cfg, AblationSwitches switches,
              std::uint64_t seed);

  ForwardResult forward(const Tensor& case_tensor, const std::string& description, double blend,
                        nn::Ctx ctx) const;

  nn::ParamStore& params() { return *store_; }
  const nn::ParamStore& params() const { return *store_; }
  const SegNet& net() const { return *net_; }
  const AblationSwitches& switches() const { return switches_; }
  const NetworkConfig& net_config() const { return net_->config(); }
  bool has_semantic() const { return semantic_.has_value(); }
  const SemanticPath& semantic_path() const { return *semantic_; }

 private:
  AblationSwitches switches_;
  std::unique_ptr<nn::ParamStore> store_;
  std::unique_ptr<SegNet> net_;
  std::optional<SemanticPath> semantic_;
};

}  // namespace trifuse
