#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "trifuse/volume.hpp"

namespace trifuse {

// Native on-disk format: raw little-endian payload (float32 for intensities
// and predictions, uint8 for labels) plus a JSON sidecar at <path>.json with
// shape, spacing, and dtype.
void save_volume(const std::string& path, const Volume& v, const std::string& modality);
Volume load_volume(const std::string& path);

void save_label(const std::string& path, const LabelMap& l, const std::array<double, 3>& spacing);
LabelMap load_label(const std::string& path);

void save_prediction(const std::string& path, const Tensor& probs,
                     const std::array<double, 3>& spacing);
Tensor load_prediction(const std::string& path);

struct ManifestEntry {
  std::string case_id;
  std::map<Modality, std::string> volume_paths;  // relative to manifest root
  std::string label_path;                        // empty = unlabeled
  std::string description_path;                  // empty = none
  std::optional<int> grade;
};

struct DatasetManifest {
  std::string root;  // absolute directory paths are resolved against
  std::vector<ManifestEntry> entries;

  std::string resolve(const std::string& rel) const;
};

// Validates referenced files exist and case ids are unique.
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const DatasetManifest& m);

Case load_case(const DatasetManifest& m, const ManifestEntry& e);
// Writes all case files under <dir>/<case_id>/ and returns the entry.
ManifestEntry save_case(const std::string& dir, const Case& c);

// ---------- description templates ----------

std::vector<std::string> default_template_bank();
// Deterministic template fill from tumor grade and the regions present in a
// label map; template choice is keyed by case id.
std::string generate_description(const std::string& case_id, std::optional<int> grade,
                                 bool has_ncr, bool has_ed, bool has_et,
                                 const std::vector<std::string>& bank);

// ---------- synthetic dataset ----------

struct SynthConfig {
  int count = 10;
  std::array<int, 3> shape{32, 32, 32};
  std::uint64_t seed = 42;
  double et_fraction_lo = 0.002;  // accepted ET voxel fraction band
  double et_fraction_hi = 0.08;
  double noise_sigma = 0.04;      // relative intensity noise

  void validate() const;
};

// Nested-ellipsoid phantoms with BraTS-style modality contrasts (T1ce bright
// in ET, FLAIR/T2 bright in edema). Labels are exact by construction.
Case synth_case(const SynthConfig& cfg, const std::string& case_id, rng_t& rng,
                const std::vector<std::string>& template_bank);
DatasetManifest synth_generate(const SynthConfig& cfg, const std::string& out_dir,
                               const std::vector<std::string>& template_bank);

}  // namespace trifuse
