#pragma once

#include <set>
#include <utility>

#include "trifuse/common.hpp"
#include "trifuse/volume.hpp"

namespace trifuse {

struct PreprocessConfig {
  std::set<Modality> zscore_modalities{Modality::T1, Modality::T1ce};
  std::set<Modality> minmax_modalities{Modality::T2, Modality::Flair};
  double clip_low = -5.0;
  double clip_high = 5.0;
  double t1ce_gamma = 0.9;
  double et_contrast = 1.25;
  double tc_contrast = 1.2;

  void validate() const;
};

struct AugmentConfig {
  double flip_p = 0.5;           // per spatial axis
  double rotate_p = 0.3;         // in-plane rotation about the axial axis
  double rotate_min_deg = -15.0;
  double rotate_max_deg = 15.0;
  double gamma_p = 0.3;
  double gamma_min = 0.8;
  double gamma_max = 1.2;
  double region_contrast_p = 0.5;
  double et_contrast = 1.25;
  double tc_contrast = 1.2;
  bool tumor_crop = true;        // center crops on a random WT voxel when labeled
  std::array<int, 3> crop_shape{0, 0, 0};  // all zero = cropping disabled

  void validate() const;
};

// Masked z-score: mean 0, population std 1 over the mask; outside set to 0.
Volume zscore_normalize(const Volume& v, const Mask& brain, const std::string& what = "volume");

// Affine rescale of the full intensity range to [0,1].
Volume minmax_normalize(const Volume& v, const std::string& what = "volume");

Volume clip(const Volume& v, double lo, double hi);

// Contrast boost for already-normalized T1ce: clip, shift into the
// nonnegative domain by -clip_low, exponentiate, shift back. Monotone for
// any gamma > 0.
Volume t1ce_boost(const Volume& v, const PreprocessConfig& cfg);

// Affine stretch about the region mean: x -> mu + factor*(x - mu) inside the
// region. Empty region is a no-op.
Volume enhance_region_contrast(const Volume& v, const Mask& region, double factor);

// Full pixel-level fusion: modality-specific normalization, clipping, T1ce
// boost, and (when labeled) ET/TC region contrast enhancement.
Case preprocess_case(const Case& c, const PreprocessConfig& cfg);

// Fallback ingest used by the -Pixel Fusion ablation: plain masked z-score
// for every modality, no clipping, boost, or region enhancement.
Case preprocess_case_minimal(const Case& c);

// Seeded augmentation: flips/rotation shared across modalities and label,
// gamma jitter on intensities, optional region-contrast jitter, optional
// (tumor-focused) crop. Pure function of (input, config, seed).
Case augment(const Case& c, const AugmentConfig& cfg, rng_t& rng);

}  // namespace trifuse
