#include "trifuse/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace trifuse {

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_mask_shape(const Volume& v, const Mask& m, const char* what) {
  if (m.shape() != v.data.shape())
    throw std::invalid_argument(std::string(what) + ": mask shape " + m.shape_string() +
                                " does not match volume " + v.data.shape_string());
}

std::pair<double, double> masked_moments(const Volume& v, const Mask& m) {
  double sum = 0.0, sum2 = 0.0;
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < v.data.size(); ++i)
    if (m[i]) {
      sum += v.data[i];
      sum2 += v.data[i] * v.data[i];
      ++n;
    }
  if (n == 0) return {0.0, -1.0};
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sum2 / static_cast<double>(n) - mean * mean);
  return {mean, var};
}

}  // namespace

void PreprocessConfig::validate() const {
  if (!(clip_low < clip_high)) throw ConfigError("preprocess: clip_low must be < clip_high");
  if (!(t1ce_gamma > 0.0)) throw ConfigError("preprocess: t1ce_gamma must be > 0");
  if (et_contrast < 1.0 || tc_contrast < 1.0)
    throw ConfigError("preprocess: contrast factors must be >= 1");
  for (Modality m : kModalityOrder) {
    const bool z = zscore_modalities.count(m) != 0;
    const bool mm = minmax_modalities.count(m) != 0;
    if (z == mm)
      throw ConfigError(std::string("preprocess: modality ") + modality_name(m) +
                        " must be in exactly one normalization set");
  }
}

void AugmentConfig::validate() const {
  for (double p : {flip_p, rotate_p, gamma_p, region_contrast_p})
    if (p < 0.0 || p > 1.0) throw ConfigError("augment: probabilities must be in [0,1]");
  if (!(gamma_min > 0.0) || gamma_max < gamma_min)
    throw ConfigError("augment: gamma range must be positive and ordered");
  if (rotate_max_deg < rotate_min_deg) throw ConfigError("augment: rotation range reversed");
  if (et_contrast < 1.0 || tc_contrast < 1.0)
    throw ConfigError("augment: contrast factors must be >= 1");
}

Volume zscore_normalize(const Volume& v, const Mask& brain, const std::string& what) {
  check_mask_shape(v, brain, "zscore_normalize");
  const auto [mean, var] = masked_moments(v, brain);
  if (var < 0.0) throw DataError("zscore_normalize: empty brain mask for " + what);
  if (var < 1e-24) throw DataError("zscore_normalize: zero variance inside mask for " + what);
  const double inv_std = 1.0 / std::sqrt(var);
  Volume out(v.depth(), v.height(), v.width(), v.spacing);
  for (std::int64_t i = 0; i < v.data.size(); ++i)
    out.data[i] = brain[i] ? (v.data[i] - mean) * inv_std : 0.0;
  out.validate_finite(what);
  return out;
}

Volume minmax_normalize(const Volume& v, const std::string& what) {
  const double lo = v.data.array().minCoeff();
  const double hi = v.data.array().maxCoeff();
  if (!(hi > lo)) throw DataError("minmax_normalize: constant volume for " + what);
  Volume out(v.depth(), v.height(), v.width(), v.spacing);
  out.data.array() = (v.data.array() - lo) / (hi - lo);
  out.validate_finite(what);
  return out;
}

Volume clip(const Volume& v, double lo, double hi) {
  Volume out = v;
  out.data.array() = out.data.array().max(lo).min(hi);
  return out;
}

Volume t1ce_boost(const Volume& v, const PreprocessConfig& cfg) {
  cfg.validate();
  Volume out = clip(v, cfg.clip_low, cfg.clip_high);
  const double shift = -cfg.clip_low;
  out.data.array() = (out.data.array() + shift).pow(cfg.t1ce_gamma) - shift;
  out.validate_finite("t1ce_boost");
  return out;
}

Volume enhance_region_contrast(const Volume& v, const Mask& region, double factor) {
  check_mask_shape(v, region, "enhance_region_contrast");
  if (factor < 1.0) throw ConfigError("enhance_region_contrast: factor must be >= 1");
  const auto [mean, var] = masked_moments(v, region);
  if (var < 0.0) return v;  // empty region: documented no-op
  Volume out = v;
  for (std::int64_t i = 0; i < v.data.size(); ++i)
    if (region[i]) out.data[i] = mean + factor * (v.data[i] - mean);
  out.validate_finite("enhance_region_contrast");
  return out;
}

Case preprocess_case(const Case& c, const PreprocessConfig& cfg) {
  cfg.validate();
  c.validate();
  const Mask brain = brain_mask(c);
  Case out = c;
  for (Modality m : kModalityOrder) {
    const std::string what = "case " + c.case_id + " modality " + modality_name(m);
    Volume v = c.modality(m);
    if (cfg.zscore_modalities.count(m))
      v = clip(zscore_normalize(v, brain, what), cfg.clip_low, cfg.clip_high);
    else
      v = clip(minmax_normalize(v, what), cfg.clip_low, cfg.clip_high);
    if (m == Modality::T1ce) v = t1ce_boost(v, cfg);
    // background stays 0 through the pipeline
    for (std::int64_t i = 0; i < v.data.size(); ++i)
      if (!brain[i]) v.data[i] = 0.0;
    out.modalities[m] = std::move(v);
  }
  if (c.label) {
    const RegionMasks regions = derive_regions(*c.label);
    for (Modality m : kModalityOrder) {
      Volume v = enhance_region_contrast(out.modality(m), regions.tc, cfg.tc_contrast);
      v = enhance_region_contrast(v, regions.et, cfg.et_contrast);
      out.modalities[m] = std::move(v);
    }
  }
  return out;
}

Case preprocess_case_minimal(const Case& c) {
  c.validate();
  const Mask brain = brain_mask(c);
  Case out = c;
  for (Modality m : kModalityOrder) {
    const std::string what = "case " + c.case_id + " modality " + modality_name(m);
    out.modalities[m] = zscore_normalize(c.modality(m), brain, what);
  }
  return out;
}

namespace {

template <typename T>
TensorT<T> flip_axis(const TensorT<T>& t, int axis) {
  const int D = t.dim(0), H = t.dim(1), W = t.dim(2);
  TensorT<T> out(t.shape());
  for (int z = 0; z < D; ++z)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const int sz = axis == 0 ? D - 1 - z : z;
        const int sy = axis == 1 ? H - 1 - y : y;
        const int sx = axis == 2 ? W - 1 - x : x;
        out(z, y, x) = t(sz, sy, sx);
      }
  return out;
}

// In-plane (H,W) rotation about the volume center; zero fill outside.
Tensor rotate_axial_linear(const Tensor& t, double rad) {
  const int D = t.dim(0), H = t.dim(1), W = t.dim(2);
  const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
  const double c = std::cos(rad), s = std::sin(rad);
  Tensor out(t.shape());
  for (int z = 0; z < D; ++z)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double dy = y - cy, dx = x - cx;
        const double sy = cy + c * dy - s * dx;
        const double sx = cx + s * dy + c * dx;
        const int y0 = static_cast<int>(std::floor(sy));
        const int x0 = static_cast<int>(std::floor(sx));
        const double fy = sy - y0, fx = sx - x0;
        double acc = 0.0;
        for (int oy = 0; oy <= 1; ++oy)
          for (int ox = 0; ox <= 1; ++ox) {
            const int yy = y0 + oy, xx = x0 + ox;
            if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
            const double w = (oy ? fy : 1.0 - fy) * (ox ? fx : 1.0 - fx);
            acc += w * t(z, yy, xx);
          }
        out(z, y, x) = acc;
      }
  return out;
}

TensorT<std::uint8_t> rotate_axial_nearest(const TensorT<std::uint8_t>& t, double rad) {
  const int D = t.dim(0), H = t.dim(1), W = t.dim(2);
  const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
  const double c = std::cos(rad), s = std::sin(rad);
  TensorT<std::uint8_t> out(t.shape());
  for (int z = 0; z < D; ++z)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double dy = y - cy, dx = x - cx;
        const int sy = static_cast<int>(std::lround(cy + c * dy - s * dx));
        const int sx = static_cast<int>(std::lround(cx + s * dy + c * dx));
        out(z, y, x) = (sy >= 0 && sy < H && sx >= 0 && sx < W) ? t(z, sy, sx) : 0;
      }
  return out;
}

Tensor gamma_correct(const Tensor& t, double gamma) {
  const double lo = t.array().minCoeff();
  const double hi = t.array().maxCoeff();
  if (!(hi > lo)) return t;
  Tensor out(t.shape());
  out.array() = ((t.array() - lo) / (hi - lo)).pow(gamma) * (hi - lo) + lo;
  return out;
}

template <typename T>
TensorT<T> crop_tensor(const TensorT<T>& t, const std::array<int, 3>& origin,
                       const std::array<int, 3>& shape) {
  TensorT<T> out({shape[0], shape[1], shape[2]});
  for (int z = 0; z < shape[0]; ++z)
    for (int y = 0; y < shape[1]; ++y)
      for (int x = 0; x < shape[2]; ++x)
        out(z, y, x) = t(origin[0] + z, origin[1] + y, origin[2] + x);
  return out;
}

}  // namespace

Case augment(const Case& c, const AugmentConfig& cfg, rng_t& rng) {
  cfg.validate();
  c.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Case out = c;

  for (int axis = 0; axis < 3; ++axis) {
    if (unit(rng) < cfg.flip_p) {
      for (Modality m : kModalityOrder) out.modalities[m].data = flip_axis(out.modality(m).data, axis);
      if (out.label) out.label->labels = flip_axis(out.label->labels, axis);
    }
  }

  if (unit(rng) < cfg.rotate_p) {
    std::uniform_real_distribution<double> deg(cfg.rotate_min_deg, cfg.rotate_max_deg);
    const double rad = deg(rng) * kPi / 180.0;
    for (Modality m : kModalityOrder)
      out.modalities[m].data = rotate_axial_linear(out.modality(m).data, rad);
    if (out.label) out.label->labels = rotate_axial_nearest(out.label->labels, rad);
  }

  if (unit(rng) < cfg.gamma_p) {
    std::uniform_real_distribution<double> gdist(cfg.gamma_min, cfg.gamma_max);
    const double g = gdist(rng);
    for (Modality m : kModalityOrder)
      out.modalities[m].data = gamma_correct(out.modality(m).data, g);
  }

  if (out.label && unit(rng) < cfg.region_contrast_p) {
    const RegionMasks regions = derive_regions(*out.label);
    for (Modality m : kModalityOrder) {
      Volume v = enhance_region_contrast(out.modality(m), regions.tc, cfg.tc_contrast);
      out.modalities[m] = enhance_region_contrast(v, regions.et, cfg.et_contrast);
    }
  }

  const bool crop_enabled = cfg.crop_shape[0] > 0 || cfg.crop_shape[1] > 0 || cfg.crop_shape[2] > 0;
  if (crop_enabled) {
    const auto& s = out.shape();
    for (int i = 0; i < 3; ++i)
      if (cfg.crop_shape[i] < 1 || cfg.crop_shape[i] > s[i])
        throw DataError("augment: crop shape exceeds volume shape");
    std::array<int, 3> origin{};
    std::array<int, 3> center{};
    bool have_center = false;
    if (cfg.tumor_crop && out.label) {
      std::vector<std::int64_t> wt;
      const auto& lab = out.label->labels;
      for (std::int64_t i = 0; i < lab.size(); ++i)
        if (lab[i] != 0) wt.push_back(i);
      if (!wt.empty()) {
        std::uniform_int_distribution<std::int64_t> pick(0, static_cast<std::int64_t>(wt.size()) - 1);
        const std::int64_t flat = wt[pick(rng)];
        center = {static_cast<int>(flat / (s[1] * s[2])),
                  static_cast<int>((flat / s[2]) % s[1]),
                  static_cast<int>(flat % s[2])};
        have_center = true;
      }
    }
    for (int i = 0; i < 3; ++i) {
      const int span = s[i] - cfg.crop_shape[i];
      if (have_center) {
        origin[i] = std::clamp(center[i] - cfg.crop_shape[i] / 2, 0, span);
      } else {
        std::uniform_int_distribution<int> pos(0, span);
        origin[i] = pos(rng);
      }
    }
    for (Modality m : kModalityOrder)
      out.modalities[m] =
          Volume(crop_tensor(out.modality(m).data, origin, cfg.crop_shape), out.modality(m).spacing);
    if (out.label) out.label = LabelMap(crop_tensor(out.label->labels, origin, cfg.crop_shape));
  }

  for (Modality m : kModalityOrder)
    out.modality(m).validate_finite("augment case " + c.case_id + " " + modality_name(m));
  return out;
}

}  // namespace trifuse
