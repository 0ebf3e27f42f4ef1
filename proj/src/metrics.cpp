#include "trifuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace trifuse {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas (Felzenszwalb/Huttenlocher), generalized to
// arbitrary sample positions so anisotropic spacing stays exact.
// d[i] = min_j ( (pos[i]-pos[j])^2 + f[j] )
void dt_1d(const std::vector<double>& f, const std::vector<double>& pos, std::vector<double>& d,
           std::vector<int>& v, std::vector<double>& z, int n) {
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    double s;
    while (true) {
      if (k < 0) {
        s = -kInf;
        break;
      }
      const int p = v[k];
      s = ((f[q] + pos[q] * pos[q]) - (f[p] + pos[p] * pos[p])) / (2.0 * (pos[q] - pos[p]));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
  }
  if (k < 0) {  // no finite sources along this line
    std::fill(d.begin(), d.begin() + n, kInf);
    return;
  }
  z[k + 1] = kInf;
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < pos[q]) ++j;
    const double dp = pos[q] - pos[v[j]];
    d[q] = dp * dp + f[v[j]];
  }
}

// Squared anisotropic Euclidean distance to the nearest seed voxel.
Tensor edt_sq(const std::vector<std::array<int, 3>>& seeds, const std::vector<int>& shape,
              const std::array<double, 3>& spacing) {
  const int D = shape[0], H = shape[1], W = shape[2];
  Tensor g({D, H, W}, kInf);
  for (const auto& s : seeds) g(s[0], s[1], s[2]) = 0.0;

  const int maxdim = std::max({D, H, W});
  std::vector<double> f(maxdim), d(maxdim), pos(maxdim), z(maxdim + 1);
  std::vector<int> v(maxdim);

  // pass along W
  for (int i = 0; i < W; ++i) pos[i] = i * spacing[2];
  for (int zi = 0; zi < D; ++zi)
    for (int yi = 0; yi < H; ++yi) {
      for (int xi = 0; xi < W; ++xi) f[xi] = g(zi, yi, xi);
      dt_1d(f, pos, d, v, z, W);
      for (int xi = 0; xi < W; ++xi) g(zi, yi, xi) = d[xi];
    }
  // pass along H
  for (int i = 0; i < H; ++i) pos[i] = i * spacing[1];
  for (int zi = 0; zi < D; ++zi)
    for (int xi = 0; xi < W; ++xi) {
      for (int yi = 0; yi < H; ++yi) f[yi] = g(zi, yi, xi);
      dt_1d(f, pos, d, v, z, H);
      for (int yi = 0; yi < H; ++yi) g(zi, yi, xi) = d[yi];
    }
  // pass along D
  for (int i = 0; i < D; ++i) pos[i] = i * spacing[0];
  for (int yi = 0; yi < H; ++yi)
    for (int xi = 0; xi < W; ++xi) {
      for (int zi = 0; zi < D; ++zi) f[zi] = g(zi, yi, xi);
      dt_1d(f, pos, d, v, z, D);
      for (int zi = 0; zi < D; ++zi) g(zi, yi, xi) = d[zi];
    }
  return g;
}

double directed_p95(const std::vector<std::array<int, 3>>& from, const Tensor& edt_to) {
  std::vector<double> dists;
  dists.reserve(from.size());
  for (const auto& p : from) dists.push_back(std::sqrt(edt_to(p[0], p[1], p[2])));
  return percentile_nearest_rank(std::move(dists), 0.95);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

int metric_index(const std::string& metric) {
  for (std::size_t i = 0; i < kReportMetrics.size(); ++i)
    if (metric == kReportMetrics[i]) return static_cast<int>(i);
  throw std::invalid_argument("unknown metric '" + metric + "'");
}

std::array<std::optional<double>, 9> report_values(const CaseReport& r) {
  return {r.wt.dice, r.tc.dice,       r.et.dice, r.wt.hd95,        r.tc.hd95,
          r.et.hd95, r.ncr_net_dice,  r.ed_dice, r.et_tissue_dice};
}

}  // namespace

std::vector<std::array<int, 3>> surface_voxels(const Mask& m) {
  const int D = m.dim(0), H = m.dim(1), W = m.dim(2);
  std::vector<std::array<int, 3>> out;
  auto bg = [&](int z, int y, int x) {
    if (z < 0 || z >= D || y < 0 || y >= H || x < 0 || x >= W) return true;
    return m(z, y, x) == 0;
  };
  for (int z = 0; z < D; ++z)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        if (!m(z, y, x)) continue;
        if (bg(z - 1, y, x) || bg(z + 1, y, x) || bg(z, y - 1, x) || bg(z, y + 1, x) ||
            bg(z, y, x - 1) || bg(z, y, x + 1))
          out.push_back({z, y, x});
      }
  return out;
}

double percentile_nearest_rank(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of empty set");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(q * n));
  rank = std::min(std::max<std::size_t>(rank, 1), values.size());
  return values[rank - 1];
}

double dice(const Mask& pred, const Mask& gt) {
  check_same_shape(pred, gt, "dice");
  std::int64_t inter = 0, a = 0, b = 0;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    inter += p && g;
    a += p;
    b += g;
  }
  if (a + b == 0) return 1.0;  // both empty, by convention
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

std::optional<double> hd95(const Mask& pred, const Mask& gt, const std::array<double, 3>& spacing) {
  check_same_shape(pred, gt, "hd95");
  const auto sp = surface_voxels(pred);
  const auto sg = surface_voxels(gt);
  if (sp.empty() && sg.empty()) return 0.0;
  if (sp.empty() || sg.empty()) return std::nullopt;
  const Tensor edt_pred = edt_sq(sp, pred.shape(), spacing);
  const Tensor edt_gt = edt_sq(sg, gt.shape(), spacing);
  return std::max(directed_p95(sp, edt_gt), directed_p95(sg, edt_pred));
}

Mask threshold_channel(const Tensor& probs, int channel, double threshold) {
  if (probs.rank() != 4) throw std::invalid_argument("threshold_channel: expected (C,D,H,W)");
  Mask m({probs.dim(1), probs.dim(2), probs.dim(3)});
  const std::int64_t n = m.size();
  const double* src = probs.data() + channel * n;
  for (std::int64_t i = 0; i < n; ++i) m[i] = src[i] >= threshold;
  return m;
}

CaseReport evaluate_case(const Tensor& pred_probs, const LabelMap& label, double threshold,
                         const std::array<double, 3>& spacing, const std::string& case_id) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ConfigError("evaluate_case: threshold must be in (0,1)");
  if (pred_probs.rank() != 4 || pred_probs.dim(0) != 3)
    throw std::invalid_argument("evaluate_case: prediction must be (3,D,H,W)");
  if (std::vector<int>{pred_probs.dim(1), pred_probs.dim(2), pred_probs.dim(3)} != label.shape())
    throw std::invalid_argument("evaluate_case: prediction/label shape mismatch");

  const Mask wt_p = threshold_channel(pred_probs, 0, threshold);
  const Mask tc_p = threshold_channel(pred_probs, 1, threshold);
  const Mask et_p = threshold_channel(pred_probs, 2, threshold);
  const RegionMasks gt = derive_regions(label);
  const TissueMasks tis = tissue_masks(label);

  CaseReport r;
  r.case_id = case_id;
  r.wt = {dice(wt_p, gt.wt), hd95(wt_p, gt.wt, spacing)};
  r.tc = {dice(tc_p, gt.tc), hd95(tc_p, gt.tc, spacing)};
  r.et = {dice(et_p, gt.et), hd95(et_p, gt.et, spacing)};

  // Thresholded regions decompose into tissues: ET channel -> ET tissue,
  // TC \ ET -> NCR/NET, WT \ TC -> ED.
  Mask ncr_p(wt_p.shape()), ed_p(wt_p.shape());
  for (std::int64_t i = 0; i < wt_p.size(); ++i) {
    ncr_p[i] = tc_p[i] && !et_p[i];
    ed_p[i] = wt_p[i] && !tc_p[i];
  }
  r.et_tissue_dice = dice(et_p, tis.et);
  r.ncr_net_dice = dice(ncr_p, tis.ncr_net);
  r.ed_dice = dice(ed_p, tis.ed);
  return r;
}

double AggregateReport::mean(const std::string& metric) const {
  return means[static_cast<std::size_t>(metric_index(metric))];
}

int AggregateReport::defined(const std::string& metric) const {
  return defined_counts[static_cast<std::size_t>(metric_index(metric))];
}

double AggregateReport::avg_dice() const {
  return (mean("wt_dice") + mean("tc_dice") + mean("et_dice")) / 3.0;
}

std::optional<double> AggregateReport::avg_hd95() const {
  if (!defined("wt_hd95") || !defined("tc_hd95") || !defined("et_hd95")) return std::nullopt;
  return (mean("wt_hd95") + mean("tc_hd95") + mean("et_hd95")) / 3.0;
}

AggregateReport aggregate(const std::vector<CaseReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate: empty report list");
  AggregateReport agg;
  agg.case_count = static_cast<int>(reports.size());
  agg.means.assign(kReportMetrics.size(), 0.0);
  agg.defined_counts.assign(kReportMetrics.size(), 0);
  for (const CaseReport& r : reports) {
    const auto vals = report_values(r);
    for (std::size_t i = 0; i < vals.size(); ++i)
      if (vals[i]) {
        agg.means[i] += *vals[i];
        agg.defined_counts[i] += 1;
      }
  }
  for (std::size_t i = 0; i < agg.means.size(); ++i)
    agg.means[i] = agg.defined_counts[i] ? agg.means[i] / agg.defined_counts[i]
                                         : std::numeric_limits<double>::quiet_NaN();
  return agg;
}

std::string case_reports_csv(const std::vector<CaseReport>& reports) {
  std::ostringstream os;
  os << "case_id";
  for (const char* m : kReportMetrics) os << "," << m;
  os << "\n";
  for (const CaseReport& r : reports) {
    os << r.case_id;
    for (const auto& v : report_values(r)) os << "," << (v ? fmt(*v) : "");
    os << "\n";
  }
  return os.str();
}

std::string case_reports_json(const std::vector<CaseReport>& reports) {
  nlohmann::json arr = nlohmann::json::array();
  for (const CaseReport& r : reports) {
    nlohmann::json j;
    j["case_id"] = r.case_id;
    const auto vals = report_values(r);
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (vals[i])
        j[kReportMetrics[i]] = *vals[i];
      else
        j[kReportMetrics[i]] = nullptr;
    }
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

std::string aggregate_json(const AggregateReport& agg) {
  nlohmann::json j;
  j["case_count"] = agg.case_count;
  j["policy"] = agg.policy;
  for (std::size_t i = 0; i < kReportMetrics.size(); ++i) {
    if (agg.defined_counts[i])
      j["means"][kReportMetrics[i]] = agg.means[i];
    else
      j["means"][kReportMetrics[i]] = nullptr;
    j["defined_counts"][kReportMetrics[i]] = agg.defined_counts[i];
  }
  j["means"]["avg_dice"] = agg.avg_dice();
  const auto ah = agg.avg_hd95();
  j["means"]["avg_hd95"] = ah ? nlohmann::json(*ah) : nlohmann::json(nullptr);
  return j.dump(2);
}

}  // namespace trifuse
