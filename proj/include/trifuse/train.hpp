#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "trifuse/dataio.hpp"
#include "trifuse/metrics.hpp"
#include "trifuse/model.hpp"
#include "trifuse/preprocess.hpp"

namespace trifuse {

struct TrainConfig {
  double base_lr = 5e-5;
  double weight_decay = 1e-4;
  double pct_start = 0.2;
  double div_factor = 20.0;
  double final_div_factor = 100.0;
  double mult_encoder_decoder = 2.0;
  double mult_clip_adapter = 0.1;
  double mult_attention = 3.0;
  double mult_head = 1.0;
  int batch_size = 1;
  int epochs = 12;
  std::uint64_t seed = 1234;
  int semantic_activation_epoch = 8;
  int semantic_ramp_epochs = 2;
  double w_dice = 1.0;
  double w_bce = 1.0;
  std::vector<double> w_aux{0.5, 0.25, 0.125};
  double w_cls = 0.1;
  double eval_threshold = 0.5;
  int folds = 5;

  void validate() const;
  double group_multiplier(nn::ParamGroup g) const;
  // Semantic blend factor for an epoch: 0 before activation, linear ramp to 1.
  double semantic_blend(int epoch) const;
};

struct LossBreakdown {
  ad::Var total;
  double dice_main = 0.0;
  double bce_main = 0.0;
  double aux = 0.0;
  double cls = 0.0;
  double value() const { return total.scalar(); }
};

// Soft-Dice per region channel; bounded to [0,1] and exactly 0 on a perfect
// match.
ad::Var soft_dice_loss(const ad::Var& probs, const Tensor& target, double eps = 1e-5);

// Region target tensor (3,D,H,W) from a label map, optionally
// nearest-neighbor downsampled by 2^k for deep-supervision heads.
Tensor region_targets(const LabelMap& label, int downsample_pow = 0);

LossBreakdown compute_loss(const ModelOutput& out, const LabelMap& label,
                           std::optional<int> grade, const TrainConfig& cfg);

// One-cycle cosine schedule with exact anchors: base_lr/div_factor at step 0,
// base_lr at step pct_start*total, base_lr/final_div_factor at the last step.
struct GroupRates {
  double base = 0.0;
  double encoder_decoder = 0.0, clip_adapter = 0.0, attention = 0.0, head = 0.0;
  double of(nn::ParamGroup g) const;
};
GroupRates lr_at(int step, int total_steps, const TrainConfig& cfg);

class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(nn::ParamStore& store, const GroupRates& rates, double weight_decay);

 private:
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

// ---------- fold driver ----------

struct CurveRow {
  int epoch = 0;
  std::string split;
  std::array<std::optional<double>, 6> metrics;  // wt/tc/et dice, wt/tc/et hd95
  double loss = 0.0;
};
std::string curves_csv(const std::vector<CurveRow>& rows);

struct TrainResult {
  std::vector<CurveRow> curves;
  std::vector<CaseReport> best_val_reports;
  int best_epoch = -1;
  double best_val_mean_dice = -1.0;
  double final_train_loss = 0.0;
  int steps_run = 0;
};

// Trains the model on `train` cases (already preprocessed), validating each
// epoch on `val`; restores the best-validation parameters before returning.
// `aug` null disables augmentation.
TrainResult train_fold(FusionModel& model, const std::vector<const Case*>& train,
                       const std::vector<const Case*>& val, const TrainConfig& cfg,
                       const AugmentConfig* aug);

// Deterministic hash-seeded fold assignment; every fold nonempty for n>=folds.
std::vector<int> fold_assignment(const std::vector<std::string>& case_ids, int folds,
                                 std::uint64_t seed);

Tensor predict_case(const FusionModel& model, const Case& preprocessed, double blend = 1.0);

struct TrainSetup {
  NetworkConfig network;
  SemanticConfig semantic;
  PreprocessConfig preprocess;
  AugmentConfig augment;
  bool augment_enabled = false;
  TrainConfig train;
};

Case preprocess_for_switches(const Case& raw, const PreprocessConfig& cfg, bool pixel_fusion);

struct FoldOutcome {
  int fold = 0;
  std::vector<std::string> val_case_ids;
  TrainResult result;
  AggregateReport aggregate;
};

struct CrossValResult {
  std::vector<FoldOutcome> folds;
  AggregateReport pooled;  // every case validated exactly once
  std::vector<CaseReport> pooled_reports;
};

// `on_fold` runs after each fold with the trained (best-restored) model, so
// callers can persist checkpoints and curves.
CrossValResult cross_validate(
    const std::vector<Case>& raw_cases, const AblationSwitches& switches, const TrainSetup& setup,
    int only_fold = -1,
    const std::function<void(const FoldOutcome&, FusionModel&)>& on_fold = {});

// ---------- ablation matrix ----------

struct AblationPreset {
  std::string table;  // fusion_layers | feature_extraction | semantic_mechanisms
  std::string name;   // row label as printed in the CSV
  AblationSwitches switches;
};
std::vector<AblationPreset> ablation_matrix();

struct AblationTables {
  // table id -> CSV text (paper-style columns, "-" for undefined entries)
  std::map<std::string, std::string> csv;
  std::map<std::string, AggregateReport> row_reports;  // "table/name" -> aggregate
};
// `only_table` empty runs the full matrix.
AblationTables run_ablation_matrix(const std::vector<Case>& raw_cases, const TrainSetup& setup,
                                   const std::string& only_table = "");

}  // namespace trifuse
