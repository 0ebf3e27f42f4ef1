#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "trifuse/volume.hpp"

namespace trifuse {

struct RegionScore {
  double dice = 0.0;
  std::optional<double> hd95;  // mm; empty = UNDEFINED (exactly one mask empty)
};

struct CaseReport {
  std::string case_id;
  RegionScore wt, tc, et;
  double ncr_net_dice = 0.0;
  double ed_dice = 0.0;
  double et_tissue_dice = 0.0;
};

// Column order of the per-case CSV; hd95 fields may be UNDEFINED.
constexpr std::array<const char*, 9> kReportMetrics{
    "wt_dice", "tc_dice", "et_dice", "wt_hd95", "tc_hd95",
    "et_hd95", "ncr_net_dice", "ed_dice", "et_tissue_dice"};

struct AggregateReport {
  int case_count = 0;
  // Means computed over defined values only; defined_count records how many
  // cases contributed to each metric.
  std::vector<double> means;        // indexed like kReportMetrics; NaN when no case defined
  std::vector<int> defined_counts;  // same indexing
  std::string policy = "mean-over-defined";

  double mean(const std::string& metric) const;
  int defined(const std::string& metric) const;
  double avg_dice() const;              // mean of wt/tc/et dice means
  std::optional<double> avg_hd95() const;  // empty if any region hd95 has no defined case
};

double dice(const Mask& pred, const Mask& gt);

// 95% symmetric surface distance. Surface voxels are mask voxels with at
// least one six-connected background neighbor (the volume boundary counts as
// background). Both masks empty -> 0; exactly one empty -> UNDEFINED.
std::optional<double> hd95(const Mask& pred, const Mask& gt,
                           const std::array<double, 3>& spacing);

Mask threshold_channel(const Tensor& probs, int channel, double threshold);

CaseReport evaluate_case(const Tensor& pred_probs, const LabelMap& label, double threshold,
                         const std::array<double, 3>& spacing,
                         const std::string& case_id = "");

AggregateReport aggregate(const std::vector<CaseReport>& reports);

std::string case_reports_csv(const std::vector<CaseReport>& reports);
std::string case_reports_json(const std::vector<CaseReport>& reports);
std::string aggregate_json(const AggregateReport& agg);

// Surface voxel coordinates (z,y,x) used by hd95; exposed for tests.
std::vector<std::array<int, 3>> surface_voxels(const Mask& m);

// Nearest-rank percentile: element ceil(q*n) of the ascending order statistics.
double percentile_nearest_rank(std::vector<double> values, double q);

}  // namespace trifuse
