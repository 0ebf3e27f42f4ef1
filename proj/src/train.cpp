#include "trifuse/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace trifuse {

namespace {
constexpr double kPi = 3.14159265358979323846;

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}
}  // namespace

void TrainConfig::validate() const {
  if (!(base_lr > 0.0) || !(weight_decay >= 0.0))
    throw ConfigError("train: base_lr must be > 0, weight_decay >= 0");
  if (!(pct_start > 0.0 && pct_start < 1.0)) throw ConfigError("train: pct_start must be in (0,1)");
  if (!(div_factor > 0.0) || !(final_div_factor > 0.0))
    throw ConfigError("train: div factors must be positive");
  for (double m : {mult_encoder_decoder, mult_clip_adapter, mult_attention, mult_head})
    if (!(m > 0.0)) throw ConfigError("train: group multipliers must be positive");
  if (batch_size != 1) throw ConfigError("train: batch_size is fixed at 1");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (semantic_ramp_epochs < 1) throw ConfigError("train: semantic_ramp_epochs must be >= 1");
  if (w_aux.empty()) throw ConfigError("train: aux weights empty");
  if (!(eval_threshold > 0.0 && eval_threshold < 1.0))
    throw ConfigError("train: eval_threshold must be in (0,1)");
  if (folds < 2) throw ConfigError("train: folds must be >= 2");
}

double TrainConfig::group_multiplier(nn::ParamGroup g) const {
  switch (g) {
    case nn::ParamGroup::EncoderDecoder: return mult_encoder_decoder;
    case nn::ParamGroup::ClipAdapter: return mult_clip_adapter;
    case nn::ParamGroup::Attention: return mult_attention;
    case nn::ParamGroup::Head: return mult_head;
  }
  return 1.0;
}

double TrainConfig::semantic_blend(int epoch) const {
  const double t =
      static_cast<double>(epoch - semantic_activation_epoch + 1) / semantic_ramp_epochs;
  return std::clamp(t, 0.0, 1.0);
}

// ---------- loss ----------

ad::Var soft_dice_loss(const ad::Var& probs, const Tensor& target, double eps) {
  check_same_shape(probs.value(), target, "soft_dice_loss");
  const double target_sum = target.array().sum();
  const ad::Var inter = ad::sum(ad::mul(probs, ad::Var::leaf(target)));
  const ad::Var num = ad::add_scalar(ad::scale(inter, 2.0), eps);
  const ad::Var den = ad::add_scalar(ad::sum(probs), target_sum + eps);
  return ad::add_scalar(ad::neg(ad::div(num, den)), 1.0);
}

Tensor region_targets(const LabelMap& label, int downsample_pow) {
  const RegionMasks r = derive_regions(label);
  const int f = 1 << downsample_pow;
  const auto& s = label.shape();
  if (s[0] % f || s[1] % f || s[2] % f)
    throw std::invalid_argument("region_targets: shape not divisible by downsample factor");
  const int D = s[0] / f, H = s[1] / f, W = s[2] / f;
  Tensor t({3, D, H, W});
  const Mask* masks[3] = {&r.wt, &r.tc, &r.et};
  for (int c = 0; c < 3; ++c)
    for (int z = 0; z < D; ++z)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          t(c, z, y, x) = (*masks[c])(z * f, y * f, x * f) ? 1.0 : 0.0;
  return t;
}

namespace {

void check_component_finite(double v, const std::string& component) {
  if (!std::isfinite(v))
    throw std::runtime_error("loss: non-finite value in component '" + component + "'");
}

// dice + bce summed over the three region channels
std::pair<ad::Var, std::pair<double, double>> region_loss(const ad::Var& probs,
                                                          const Tensor& target,
                                                          const TrainConfig& cfg) {
  ad::Var total;
  double dice_acc = 0.0, bce_acc = 0.0;
  const std::int64_t spatial = target.size() / 3;
  for (int c = 0; c < 3; ++c) {
    const ad::Var p = ad::slice_channels(probs, c, 1);
    Tensor t({1, target.shape()[1], target.shape()[2], target.shape()[3]});
    std::copy(target.data() + c * spatial, target.data() + (c + 1) * spatial, t.data());
    const ad::Var d = soft_dice_loss(p, t);
    const ad::Var b = ad::bce_mean(p, t);
    dice_acc += d.scalar();
    bce_acc += b.scalar();
    const ad::Var term = ad::add(ad::scale(d, cfg.w_dice), ad::scale(b, cfg.w_bce));
    total = total.defined() ? ad::add(total, term) : term;
  }
  return {total, {dice_acc, bce_acc}};
}

}  // namespace

LossBreakdown compute_loss(const ModelOutput& out, const LabelMap& label,
                           std::optional<int> grade, const TrainConfig& cfg) {
  LossBreakdown lb;
  const Tensor main_target = region_targets(label, 0);
  auto [main_loss, main_parts] = region_loss(out.main, main_target, cfg);
  lb.dice_main = main_parts.first;
  lb.bce_main = main_parts.second;
  check_component_finite(lb.dice_main, "dice");
  check_component_finite(lb.bce_main, "bce");
  ad::Var total = main_loss;

  for (std::size_t k = 0; k < out.aux.size(); ++k) {
    const double w = k < cfg.w_aux.size() ? cfg.w_aux[k] : cfg.w_aux.back();
    const Tensor aux_target = region_targets(label, static_cast<int>(k) + 1);
    auto [aux_loss, parts] = region_loss(out.aux[k], aux_target, cfg);
    lb.aux += w * (parts.first + parts.second);
    check_component_finite(lb.aux, "aux" + std::to_string(k + 1));
    total = ad::add(total, ad::scale(aux_loss, w));
  }

  if (grade && cfg.w_cls > 0.0) {
    const ad::Var ce = ad::cross_entropy_logits(out.class_logits, *grade);
    lb.cls = ce.scalar();
    check_component_finite(lb.cls, "classification");
    total = ad::add(total, ad::scale(ce, cfg.w_cls));
  }

  lb.total = total;
  check_component_finite(lb.total.scalar(), "total");
  return lb;
}

// ---------- schedule ----------

double GroupRates::of(nn::ParamGroup g) const {
  switch (g) {
    case nn::ParamGroup::EncoderDecoder: return encoder_decoder;
    case nn::ParamGroup::ClipAdapter: return clip_adapter;
    case nn::ParamGroup::Attention: return attention;
    case nn::ParamGroup::Head: return head;
  }
  return base;
}

GroupRates lr_at(int step, int total_steps, const TrainConfig& cfg) {
  cfg.validate();
  if (total_steps < 3) throw ConfigError("lr_at: total_steps must be >= 3");
  if (step < 0 || step >= total_steps)
    throw std::invalid_argument("lr_at: step " + std::to_string(step) + " outside [0," +
                                std::to_string(total_steps) + ")");
  const int warm = std::clamp(static_cast<int>(std::lround(cfg.pct_start * total_steps)), 1,
                              total_steps - 2);
  const double lo = cfg.base_lr / cfg.div_factor;
  const double hi = cfg.base_lr;
  const double fl = cfg.base_lr / cfg.final_div_factor;
  double lr;
  if (step <= warm) {
    const double t = static_cast<double>(step) / warm;
    lr = lo + (hi - lo) * 0.5 * (1.0 - std::cos(kPi * t));
  } else {
    const double t = static_cast<double>(step - warm) / (total_steps - 1 - warm);
    lr = fl + (hi - fl) * 0.5 * (1.0 + std::cos(kPi * t));
  }
  GroupRates r;
  r.base = lr;
  r.encoder_decoder = lr * cfg.mult_encoder_decoder;
  r.clip_adapter = lr * cfg.mult_clip_adapter;
  r.attention = lr * cfg.mult_attention;
  r.head = lr * cfg.mult_head;
  return r;
}

// ---------- optimizer ----------

AdamW::AdamW(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamW::step(nn::ParamStore& store, const GroupRates& rates, double weight_decay) {
  auto& entries = store.entries();
  if (m_.size() != entries.size()) {
    m_.assign(entries.size(), Tensor());
    v_.assign(entries.size(), Tensor());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      m_[i] = Tensor(entries[i].var.value().shape());
      v_[i] = Tensor(entries[i].var.value().shape());
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    const double lr = rates.of(e.group);
    Tensor& p = e.var.mutable_value();
    const Tensor& g = e.var.grad();
    auto& m = m_[i].array();
    auto& v = v_[i].array();
    m = beta1_ * m + (1.0 - beta1_) * g.array();
    v = beta2_ * v + (1.0 - beta2_) * g.array().square();
    p.array() -=
        lr * ((m / bc1) / ((v / bc2).sqrt() + eps_) + weight_decay * p.array());
  }
}

// ---------- fold driver ----------

std::string curves_csv(const std::vector<CurveRow>& rows) {
  std::ostringstream os;
  os << "epoch,split,wt_dice,tc_dice,et_dice,wt_hd95,tc_hd95,et_hd95,loss\n";
  for (const auto& r : rows) {
    os << r.epoch << "," << r.split;
    for (const auto& m : r.metrics) os << "," << (m ? fmt(*m) : "");
    os << "," << fmt(r.loss) << "\n";
  }
  return os.str();
}

Case preprocess_for_switches(const Case& raw, const PreprocessConfig& cfg, bool pixel_fusion) {
  return pixel_fusion ? preprocess_case(raw, cfg) : preprocess_case_minimal(raw);
}

Tensor predict_case(const FusionModel& model, const Case& preprocessed, double blend) {
  ad::NoGradGuard ng;
  const ForwardResult r =
      model.forward(case_tensor(preprocessed), preprocessed.description, blend, {});
  return r.output.main.value();
}

namespace {

std::vector<CaseReport> evaluate_cases(const FusionModel& model,
                                       const std::vector<const Case*>& cases, double blend,
                                       double threshold) {
  std::vector<CaseReport> reports;
  reports.reserve(cases.size());
  for (const Case* c : cases) {
    const Tensor probs = predict_case(model, *c, blend);
    reports.push_back(evaluate_case(probs, *c->label, threshold, c->spacing(), c->case_id));
  }
  return reports;
}

CurveRow metrics_row(int epoch, const std::string& split, const AggregateReport& agg,
                     double loss) {
  CurveRow row;
  row.epoch = epoch;
  row.split = split;
  const char* keys[6] = {"wt_dice", "tc_dice", "et_dice", "wt_hd95", "tc_hd95", "et_hd95"};
  for (int i = 0; i < 6; ++i)
    if (agg.defined(keys[i]))
      row.metrics[static_cast<std::size_t>(i)] = agg.mean(keys[i]);
  row.loss = loss;
  return row;
}

std::vector<Tensor> snapshot_params(const nn::ParamStore& store) {
  std::vector<Tensor> snap;
  snap.reserve(store.entries().size());
  for (const auto& e : store.entries()) snap.push_back(e.var.value());
  return snap;
}

void restore_params(nn::ParamStore& store, const std::vector<Tensor>& snap) {
  for (std::size_t i = 0; i < snap.size(); ++i)
    store.entries()[i].var.mutable_value() = snap[i];
}

}  // namespace

TrainResult train_fold(FusionModel& model, const std::vector<const Case*>& train,
                       const std::vector<const Case*>& val, const TrainConfig& cfg,
                       const AugmentConfig* aug) {
  cfg.validate();
  if (train.empty()) throw DataError("train_fold: empty training fold");
  for (const Case* c : train)
    if (!c->label) throw DataError("train_fold: case " + c->case_id + " has no label");

  TrainResult result;
  const int total_steps = cfg.epochs * static_cast<int>(train.size());
  if (total_steps < 3) throw ConfigError("train_fold: schedule needs at least 3 total steps");
  AdamW opt;
  std::vector<Tensor> best;
  int step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double blend = model.has_semantic() ? cfg.semantic_blend(epoch) : 0.0;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    rng_t shuffle_rng = make_rng(cfg.seed, "epoch_shuffle." + std::to_string(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    for (std::size_t idx : order) {
      const Case* c = train[idx];
      rng_t step_rng =
          make_rng(cfg.seed, "step." + std::to_string(epoch) + "." + c->case_id);
      Case aug_case;
      const Case* use = c;
      if (aug) {
        aug_case = augment(*c, *aug, step_rng);
        use = &aug_case;
      }
      nn::Ctx ctx{true, &step_rng};
      const ForwardResult fr = model.forward(case_tensor(*use), use->description, blend, ctx);
      LossBreakdown lb;
      try {
        lb = compute_loss(fr.output, *use->label, use->grade, cfg);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                                 ", step " + std::to_string(step) + ", case " + use->case_id +
                                 ")");
      }
      model.params().zero_grad();
      lb.total.backward();
      opt.step(model.params(), lr_at(step, total_steps, cfg), cfg.weight_decay);
      epoch_loss += lb.value();
      ++step;
    }
    epoch_loss /= static_cast<double>(train.size());
    result.final_train_loss = epoch_loss;

    CurveRow train_row;
    train_row.epoch = epoch;
    train_row.split = "train";
    train_row.loss = epoch_loss;
    result.curves.push_back(train_row);

    if (!val.empty()) {
      const auto reports = evaluate_cases(model, val, blend, cfg.eval_threshold);
      const AggregateReport agg = aggregate(reports);
      double val_loss = 0.0;
      {
        ad::NoGradGuard ng;
        for (const Case* c : val) {
          const ForwardResult fr = model.forward(case_tensor(*c), c->description, blend, {});
          val_loss += compute_loss(fr.output, *c->label, c->grade, cfg).value();
        }
        val_loss /= static_cast<double>(val.size());
      }
      result.curves.push_back(metrics_row(epoch, "val", agg, val_loss));
      const double mean_dice =
          (agg.mean("wt_dice") + agg.mean("tc_dice") + agg.mean("et_dice")) / 3.0;
      if (mean_dice > result.best_val_mean_dice) {
        result.best_val_mean_dice = mean_dice;
        result.best_epoch = epoch;
        result.best_val_reports = reports;
        best = snapshot_params(model.params());
      }
    }
  }
  result.steps_run = step;
  if (!best.empty()) restore_params(model.params(), best);
  return result;
}

std::vector<int> fold_assignment(const std::vector<std::string>& case_ids, int folds,
                                 std::uint64_t seed) {
  if (static_cast<int>(case_ids.size()) < folds)
    throw DataError("fold_assignment: need at least " + std::to_string(folds) + " cases, got " +
                    std::to_string(case_ids.size()));
  std::vector<std::size_t> order(case_ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::uint64_t> keys(case_ids.size());
  for (std::size_t i = 0; i < case_ids.size(); ++i)
    keys[i] = mix_seed(seed, fnv1a64(case_ids[i]));
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return keys[a] != keys[b] ? keys[a] < keys[b] : case_ids[a] < case_ids[b];
  });
  std::vector<int> assign(case_ids.size());
  for (std::size_t r = 0; r < order.size(); ++r)
    assign[order[r]] = static_cast<int>(r % static_cast<std::size_t>(folds));
  return assign;
}

CrossValResult cross_validate(
    const std::vector<Case>& raw_cases, const AblationSwitches& switches, const TrainSetup& setup,
    int only_fold, const std::function<void(const FoldOutcome&, FusionModel&)>& on_fold) {
  const AblationSwitches sw = switches.normalized();
  if (static_cast<int>(raw_cases.size()) < setup.train.folds)
    throw DataError("cross_validate: need at least " + std::to_string(setup.train.folds) +
                    " cases");
  std::vector<std::string> ids;
  ids.reserve(raw_cases.size());
  for (const Case& c : raw_cases) ids.push_back(c.case_id);
  const std::vector<int> assign = fold_assignment(ids, setup.train.folds, setup.train.seed);

  std::vector<Case> prepped;
  prepped.reserve(raw_cases.size());
  for (const Case& c : raw_cases)
    prepped.push_back(preprocess_for_switches(c, setup.preprocess, sw.pixel_fusion));

  CrossValResult cv;
  for (int fold = 0; fold < setup.train.folds; ++fold) {
    if (only_fold >= 0 && fold != only_fold) continue;
    std::vector<const Case*> train, val;
    FoldOutcome out;
    out.fold = fold;
    for (std::size_t i = 0; i < prepped.size(); ++i) {
      if (assign[i] == fold) {
        val.push_back(&prepped[i]);
        out.val_case_ids.push_back(prepped[i].case_id);
      } else {
        train.push_back(&prepped[i]);
      }
    }
    FusionModel model(setup.network, setup.semantic, sw, setup.train.seed + fold);
    out.result = train_fold(model, train, val, setup.train,
                            setup.augment_enabled ? &setup.augment : nullptr);
    out.aggregate = aggregate(out.result.best_val_reports);
    for (const auto& r : out.result.best_val_reports) cv.pooled_reports.push_back(r);
    if (on_fold) on_fold(out, model);
    cv.folds.push_back(std::move(out));
  }
  if (cv.pooled_reports.empty()) throw DataError("cross_validate: no validation reports");
  cv.pooled = aggregate(cv.pooled_reports);
  return cv;
}

// ---------- ablation matrix ----------

namespace {

AblationSwitches base_switches() { return AblationSwitches{}; }

std::string switches_signature(const AblationSwitches& s) {
  const AblationSwitches n = s.normalized();
  std::ostringstream os;
  os << n.pixel_fusion << n.semantic_fusion << n.semantic_guidance << n.semantic_attention
     << feature_extractor_name(n.feature_extractor) << (n.bridge == BridgeMode::Learned);
  return os.str();
}

std::string table_cell(const std::optional<double>& v) {
  if (!v || !std::isfinite(*v)) return "-";
  std::ostringstream os;
  os.precision(4);
  os << std::fixed << *v;
  return os.str();
}

}  // namespace

std::vector<AblationPreset> ablation_matrix() {
  std::vector<AblationPreset> m;
  AblationSwitches s;

  m.push_back({"fusion_layers", "Base", base_switches()});
  s = base_switches();
  s.pixel_fusion = false;
  m.push_back({"fusion_layers", "-Pixel Fusion Layer", s});
  s = base_switches();
  s.feature_extractor = FeatureExtractor::None;
  m.push_back({"fusion_layers", "-Feature Fusion Layer", s});
  s = base_switches();
  s.semantic_fusion = false;
  m.push_back({"fusion_layers", "-Semantic Fusion Layer", s});
  s = base_switches();
  s.pixel_fusion = false;
  s.semantic_fusion = false;
  s.feature_extractor = FeatureExtractor::ResNet3d;
  m.push_back({"fusion_layers", "Traditional 3D-UNet", s});

  m.push_back({"feature_extraction", "Base", base_switches()});
  s = base_switches();
  s.feature_extractor = FeatureExtractor::ResNet3d;
  m.push_back({"feature_extraction", "3D ResNet", s});
  s = base_switches();
  s.feature_extractor = FeatureExtractor::ResNet2d;
  m.push_back({"feature_extraction", "2D ResNet50", s});
  s = base_switches();
  s.feature_extractor = FeatureExtractor::None;
  m.push_back({"feature_extraction", "No Feature Extractor", s});

  m.push_back({"semantic_mechanisms", "Base", base_switches()});
  s = base_switches();
  s.bridge = BridgeMode::Traditional;
  m.push_back({"semantic_mechanisms", "Traditional 3D-2D", s});
  s = base_switches();
  s.semantic_guidance = false;
  m.push_back({"semantic_mechanisms", "-Semantic Guidance", s});
  s = base_switches();
  s.semantic_attention = false;
  m.push_back({"semantic_mechanisms", "-Semantic Attention", s});
  return m;
}

AblationTables run_ablation_matrix(const std::vector<Case>& raw_cases, const TrainSetup& setup,
                                   const std::string& only_table) {
  AblationTables tables;
  std::map<std::string, AggregateReport> cache;
  const auto matrix = ablation_matrix();

  std::map<std::string, std::ostringstream> region_csv;
  for (const char* t : {"fusion_layers", "feature_extraction", "semantic_mechanisms"})
    region_csv[t] << "Model,Avg_Dice,Avg_HD95,WT_Dice,TC_Dice,ET_Dice,WT_HD95,TC_HD95,ET_HD95\n";
  std::ostringstream tissue_csv;
  tissue_csv << "Model,NCR_NET_Dice,ED_Dice,ET_Dice\n";

  for (const auto& preset : matrix) {
    if (!only_table.empty() && preset.table != only_table) continue;
    const std::string sig = switches_signature(preset.switches);
    if (!cache.count(sig)) {
      // One fold per configuration keeps the matrix desk-scale.
      const CrossValResult cv = cross_validate(raw_cases, preset.switches, setup, 0);
      cache[sig] = cv.pooled;
    }
    const AggregateReport& agg = cache[sig];
    tables.row_reports[preset.table + "/" + preset.name] = agg;

    auto& os = region_csv[preset.table];
    os << preset.name;
    const double avg_dice = agg.avg_dice();
    os << "," << table_cell(avg_dice) << "," << table_cell(agg.avg_hd95());
    for (const char* k : {"wt_dice", "tc_dice", "et_dice"}) os << "," << table_cell(agg.mean(k));
    for (const char* k : {"wt_hd95", "tc_hd95", "et_hd95"})
      os << ","
         << table_cell(agg.defined(k) ? std::optional<double>(agg.mean(k)) : std::nullopt);
    os << "\n";

    if (preset.table == "semantic_mechanisms") {
      tissue_csv << preset.name;
      for (const char* k : {"ncr_net_dice", "ed_dice", "et_tissue_dice"})
        tissue_csv << "," << table_cell(agg.mean(k));
      tissue_csv << "\n";
    }
  }
  for (auto& [name, os] : region_csv)
    if (only_table.empty() || name == only_table) tables.csv[name] = os.str();
  if (only_table.empty() || only_table == "semantic_mechanisms")
    tables.csv["region_specific"] = tissue_csv.str();
  return tables;
}

}  // namespace trifuse
