#include "trifuse/config.hpp"

#include <fstream>

namespace trifuse {

namespace {

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

std::set<Modality> modality_set(const nlohmann::json& j, const char* key,
                                std::set<Modality> fallback) {
  if (!j.contains(key)) return fallback;
  std::set<Modality> out;
  for (const auto& name : j.at(key)) out.insert(modality_from_name(name.get<std::string>()));
  return out;
}

nlohmann::json modality_set_json(const std::set<Modality>& s) {
  nlohmann::json arr = nlohmann::json::array();
  for (Modality m : s) arr.push_back(modality_name(m));
  return arr;
}

}  // namespace

nlohmann::json switches_to_json(const AblationSwitches& s) {
  nlohmann::json j;
  j["pixel_fusion"] = s.pixel_fusion;
  j["semantic_fusion"] = s.semantic_fusion;
  j["semantic_guidance"] = s.semantic_guidance;
  j["semantic_attention"] = s.semantic_attention;
  j["feature_extractor"] = feature_extractor_name(s.feature_extractor);
  j["bridge"] = s.bridge == BridgeMode::Learned ? "learned" : "traditional";
  return j;
}

AblationSwitches switches_from_json(const nlohmann::json& j) {
  AblationSwitches s;
  s.pixel_fusion = get_or(j, "pixel_fusion", s.pixel_fusion);
  s.semantic_fusion = get_or(j, "semantic_fusion", s.semantic_fusion);
  s.semantic_guidance = get_or(j, "semantic_guidance", s.semantic_guidance);
  s.semantic_attention = get_or(j, "semantic_attention", s.semantic_attention);
  s.feature_extractor =
      feature_extractor_from_name(get_or<std::string>(j, "feature_extractor", "base"));
  const std::string bridge = get_or<std::string>(j, "bridge", "learned");
  if (bridge == "learned")
    s.bridge = BridgeMode::Learned;
  else if (bridge == "traditional")
    s.bridge = BridgeMode::Traditional;
  else
    throw ConfigError("config: bridge must be 'learned' or 'traditional'");
  return s;
}

ArtifactConfig config_from_json(const nlohmann::json& j) {
  ArtifactConfig c;
  c.schema_version = get_or(j, "schema_version", c.schema_version);
  if (c.schema_version != 1) throw ConfigError("config: unsupported schema_version");
  c.seed = get_or(j, "seed", c.seed);

  if (j.contains("preprocess")) {
    const auto& p = j.at("preprocess");
    c.preprocess.zscore_modalities =
        modality_set(p, "zscore_modalities", c.preprocess.zscore_modalities);
    c.preprocess.minmax_modalities =
        modality_set(p, "minmax_modalities", c.preprocess.minmax_modalities);
    c.preprocess.clip_low = get_or(p, "clip_low", c.preprocess.clip_low);
    c.preprocess.clip_high = get_or(p, "clip_high", c.preprocess.clip_high);
    c.preprocess.t1ce_gamma = get_or(p, "t1ce_gamma", c.preprocess.t1ce_gamma);
    c.preprocess.et_contrast = get_or(p, "et_contrast", c.preprocess.et_contrast);
    c.preprocess.tc_contrast = get_or(p, "tc_contrast", c.preprocess.tc_contrast);
  }
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    c.augment_enabled = get_or(a, "enabled", c.augment_enabled);
    c.augment.flip_p = get_or(a, "flip_p", c.augment.flip_p);
    c.augment.rotate_p = get_or(a, "rotate_p", c.augment.rotate_p);
    c.augment.rotate_min_deg = get_or(a, "rotate_min_deg", c.augment.rotate_min_deg);
    c.augment.rotate_max_deg = get_or(a, "rotate_max_deg", c.augment.rotate_max_deg);
    c.augment.gamma_p = get_or(a, "gamma_p", c.augment.gamma_p);
    c.augment.gamma_min = get_or(a, "gamma_min", c.augment.gamma_min);
    c.augment.gamma_max = get_or(a, "gamma_max", c.augment.gamma_max);
    c.augment.region_contrast_p = get_or(a, "region_contrast_p", c.augment.region_contrast_p);
    c.augment.et_contrast = get_or(a, "et_contrast", c.augment.et_contrast);
    c.augment.tc_contrast = get_or(a, "tc_contrast", c.augment.tc_contrast);
    c.augment.tumor_crop = get_or(a, "tumor_crop", c.augment.tumor_crop);
    const auto crop = get_or<std::vector<int>>(a, "crop_shape", {0, 0, 0});
    if (crop.size() != 3) throw ConfigError("config: augment.crop_shape must have 3 entries");
    c.augment.crop_shape = {crop[0], crop[1], crop[2]};
  }
  if (j.contains("network")) {
    const auto& n = j.at("network");
    c.network.in_channels = get_or(n, "in_channels", c.network.in_channels);
    c.network.encoder_channels =
        get_or(n, "encoder_channels", c.network.encoder_channels);
    c.network.bottleneck_channels =
        get_or(n, "bottleneck_channels", c.network.bottleneck_channels);
    c.network.deep_supervision_levels =
        get_or(n, "deep_supervision_levels", c.network.deep_supervision_levels);
    c.network.bottleneck_dropout = get_or(n, "bottleneck_dropout", c.network.bottleneck_dropout);
    c.network.cbam_reduction = get_or(n, "cbam_reduction", c.network.cbam_reduction);
    c.network.spatial_attention_kernel =
        get_or(n, "spatial_attention_kernel", c.network.spatial_attention_kernel);
    c.network.head_channels = get_or(n, "head_channels", c.network.head_channels);
    c.network.cls_hidden = get_or(n, "cls_hidden", c.network.cls_hidden);
    c.network.cls_dropout1 = get_or(n, "cls_dropout1", c.network.cls_dropout1);
    c.network.cls_dropout2 = get_or(n, "cls_dropout2", c.network.cls_dropout2);
  }
  if (j.contains("semantic")) {
    const auto& s = j.at("semantic");
    c.semantic.embed_dim = get_or(s, "embed_dim", c.semantic.embed_dim);
    c.semantic.shared_dim = get_or(s, "shared_dim", c.semantic.shared_dim);
    c.semantic.attention_heads = get_or(s, "attention_heads", c.semantic.attention_heads);
    c.semantic.mapper_dropout = get_or(s, "mapper_dropout", c.semantic.mapper_dropout);
    c.semantic.slice_hidden = get_or(s, "slice_hidden", c.semantic.slice_hidden);
    const std::string kind = get_or<std::string>(s, "encoder", "toy");
    if (kind == "toy")
      c.semantic.encoder_kind = EncoderKind::Toy;
    else if (kind == "file")
      c.semantic.encoder_kind = EncoderKind::File;
    else
      throw ConfigError("config: semantic.encoder must be 'toy' or 'file'");
    c.semantic.encoder_seed = get_or(s, "encoder_seed", c.semantic.encoder_seed);
    c.semantic.encoder_checkpoint =
        get_or(s, "encoder_checkpoint", c.semantic.encoder_checkpoint);
    c.semantic.encoder_trainable = get_or(s, "encoder_trainable", c.semantic.encoder_trainable);
    c.template_bank = get_or(s, "template_bank", c.template_bank);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    c.train.base_lr = get_or(t, "base_lr", c.train.base_lr);
    c.train.weight_decay = get_or(t, "weight_decay", c.train.weight_decay);
    c.train.pct_start = get_or(t, "pct_start", c.train.pct_start);
    c.train.div_factor = get_or(t, "div_factor", c.train.div_factor);
    c.train.final_div_factor = get_or(t, "final_div_factor", c.train.final_div_factor);
    if (t.contains("group_multipliers")) {
      const auto& g = t.at("group_multipliers");
      c.train.mult_encoder_decoder = get_or(g, "encoder_decoder", c.train.mult_encoder_decoder);
      c.train.mult_clip_adapter = get_or(g, "clip_adapter", c.train.mult_clip_adapter);
      c.train.mult_attention = get_or(g, "attention", c.train.mult_attention);
      c.train.mult_head = get_or(g, "head", c.train.mult_head);
    }
    c.train.batch_size = get_or(t, "batch_size", c.train.batch_size);
    c.train.epochs = get_or(t, "epochs", c.train.epochs);
    c.train.seed = get_or(t, "seed", c.seed);
    c.train.semantic_activation_epoch =
        get_or(t, "semantic_activation_epoch", c.train.semantic_activation_epoch);
    c.train.semantic_ramp_epochs =
        get_or(t, "semantic_ramp_epochs", c.train.semantic_ramp_epochs);
    if (t.contains("loss_weights")) {
      const auto& w = t.at("loss_weights");
      c.train.w_dice = get_or(w, "dice", c.train.w_dice);
      c.train.w_bce = get_or(w, "bce", c.train.w_bce);
      c.train.w_aux = get_or(w, "aux", c.train.w_aux);
      c.train.w_cls = get_or(w, "classification", c.train.w_cls);
    }
    c.train.eval_threshold = get_or(t, "eval_threshold", c.train.eval_threshold);
    c.train.folds = get_or(t, "folds", c.train.folds);
  } else {
    c.train.seed = c.seed;
  }
  if (j.contains("switches")) c.switches = switches_from_json(j.at("switches"));
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    c.synth.count = get_or(s, "count", c.synth.count);
    const auto shape = get_or<std::vector<int>>(s, "shape", {32, 32, 32});
    if (shape.size() != 3) throw ConfigError("config: synth.shape must have 3 entries");
    c.synth.shape = {shape[0], shape[1], shape[2]};
    c.synth.seed = get_or(s, "seed", c.seed);
    c.synth.et_fraction_lo = get_or(s, "et_fraction_lo", c.synth.et_fraction_lo);
    c.synth.et_fraction_hi = get_or(s, "et_fraction_hi", c.synth.et_fraction_hi);
    c.synth.noise_sigma = get_or(s, "noise_sigma", c.synth.noise_sigma);
  } else {
    c.synth.seed = c.seed;
  }
  c.validate();
  return c;
}

void ArtifactConfig::validate() const {
  preprocess.validate();
  augment.validate();
  network.validate();
  semantic.validate();
  train.validate();
  synth.validate();
  if (template_bank.empty()) throw ConfigError("config: template_bank must not be empty");
}

TrainSetup ArtifactConfig::setup() const {
  TrainSetup s;
  s.network = network;
  s.semantic = semantic;
  s.preprocess = preprocess;
  s.augment = augment;
  s.augment_enabled = augment_enabled;
  s.train = train;
  return s;
}

nlohmann::json config_to_json(const ArtifactConfig& c) {
  nlohmann::json j;
  j["schema_version"] = c.schema_version;
  j["seed"] = c.seed;
  j["preprocess"] = {
      {"zscore_modalities", modality_set_json(c.preprocess.zscore_modalities)},
      {"minmax_modalities", modality_set_json(c.preprocess.minmax_modalities)},
      {"clip_low", c.preprocess.clip_low},
      {"clip_high", c.preprocess.clip_high},
      {"t1ce_gamma", c.preprocess.t1ce_gamma},
      {"et_contrast", c.preprocess.et_contrast},
      {"tc_contrast", c.preprocess.tc_contrast},
  };
  j["augment"] = {
      {"enabled", c.augment_enabled},
      {"flip_p", c.augment.flip_p},
      {"rotate_p", c.augment.rotate_p},
      {"rotate_min_deg", c.augment.rotate_min_deg},
      {"rotate_max_deg", c.augment.rotate_max_deg},
      {"gamma_p", c.augment.gamma_p},
      {"gamma_min", c.augment.gamma_min},
      {"gamma_max", c.augment.gamma_max},
      {"region_contrast_p", c.augment.region_contrast_p},
      {"et_contrast", c.augment.et_contrast},
      {"tc_contrast", c.augment.tc_contrast},
      {"tumor_crop", c.augment.tumor_crop},
      {"crop_shape", std::vector<int>{c.augment.crop_shape[0], c.augment.crop_shape[1],
                                      c.augment.crop_shape[2]}},
  };
  j["network"] = {
      {"in_channels", c.network.in_channels},
      {"encoder_channels", c.network.encoder_channels},
      {"bottleneck_channels", c.network.bottleneck_channels},
      {"deep_supervision_levels", c.network.deep_supervision_levels},
      {"bottleneck_dropout", c.network.bottleneck_dropout},
      {"cbam_reduction", c.network.cbam_reduction},
      {"spatial_attention_kernel", c.network.spatial_attention_kernel},
      {"head_channels", c.network.head_channels},
      {"cls_hidden", c.network.cls_hidden},
      {"cls_dropout1", c.network.cls_dropout1},
      {"cls_dropout2", c.network.cls_dropout2},
  };
  j["semantic"] = {
      {"embed_dim", c.semantic.embed_dim},
      {"shared_dim", c.semantic.shared_dim},
      {"attention_heads", c.semantic.attention_heads},
      {"mapper_dropout", c.semantic.mapper_dropout},
      {"slice_hidden", c.semantic.slice_hidden},
      {"encoder", c.semantic.encoder_kind == EncoderKind::Toy ? "toy" : "file"},
      {"encoder_seed", c.semantic.encoder_seed},
      {"encoder_checkpoint", c.semantic.encoder_checkpoint},
      {"encoder_trainable", c.semantic.encoder_trainable},
      {"template_bank", c.template_bank},
  };
  j["train"] = {
      {"base_lr", c.train.base_lr},
      {"weight_decay", c.train.weight_decay},
      {"pct_start", c.train.pct_start},
      {"div_factor", c.train.div_factor},
      {"final_div_factor", c.train.final_div_factor},
      {"group_multipliers",
       {{"encoder_decoder", c.train.mult_encoder_decoder},
        {"clip_adapter", c.train.mult_clip_adapter},
        {"attention", c.train.mult_attention},
        {"head", c.train.mult_head}}},
      {"batch_size", c.train.batch_size},
      {"epochs", c.train.epochs},
      {"seed", c.train.seed},
      {"semantic_activation_epoch", c.train.semantic_activation_epoch},
      {"semantic_ramp_epochs", c.train.semantic_ramp_epochs},
      {"loss_weights",
       {{"dice", c.train.w_dice},
        {"bce", c.train.w_bce},
        {"aux", c.train.w_aux},
        {"classification", c.train.w_cls}}},
      {"eval_threshold", c.train.eval_threshold},
      {"folds", c.train.folds},
  };
  j["switches"] = switches_to_json(c.switches);
  j["synth"] = {
      {"count", c.synth.count},
      {"shape", std::vector<int>{c.synth.shape[0], c.synth.shape[1], c.synth.shape[2]}},
      {"seed", c.synth.seed},
      {"et_fraction_lo", c.synth.et_fraction_lo},
      {"et_fraction_hi", c.synth.et_fraction_hi},
      {"noise_sigma", c.synth.noise_sigma},
  };
  return j;
}

ArtifactConfig load_config(const std::string& path) {
  if (path.empty()) {
    ArtifactConfig c;
    c.validate();
    return c;
  }
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "' parse error at byte " + std::to_string(e.byte) +
                      ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace trifuse
