#include "trifuse/model.hpp"

namespace trifuse {

FusionModel::FusionModel(NetworkConfig net_cfg, SemanticConfig sem_cfg, AblationSwitches switches,
                         std::uint64_t seed)
    : switches_(switches.normalized()), store_(std::make_unique<nn::ParamStore>(seed)) {
  net_cfg.extractor = switches_.feature_extractor;
  net_cfg.semantic_hooks = switches_.semantic_fusion;
  net_cfg.semantic_attention = switches_.semantic_fusion && switches_.semantic_attention;
  net_cfg.semantic_dim = sem_cfg.shared_dim;
  sem_cfg.bridge = switches_.bridge;
  net_ = std::make_unique<SegNet>(*store_, net_cfg);
  if (switches_.semantic_fusion) semantic_.emplace(*store_, sem_cfg);
}

ForwardResult FusionModel::forward(const Tensor& case_tensor, const std::string& description,
                                   double blend, nn::Ctx ctx) const {
  ForwardResult r;
  if (semantic_) {
    r.semantic = semantic_->compute(case_tensor, description, switches_.semantic_guidance, ctx);
    r.output = net_->forward(case_tensor, &*r.semantic, blend, ctx);
  } else {
    r.output = net_->forward(case_tensor, nullptr, 0.0, ctx);
  }
  return r;
}

}  // namespace trifuse
