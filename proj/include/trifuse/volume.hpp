#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "trifuse/tensor.hpp"

namespace trifuse {

// One modality's scalar grid with physical voxel spacing in mm.
template <typename Scalar>
struct VolumeT {
  TensorT<Scalar> data;                     // shape (D,H,W)
  std::array<double, 3> spacing{1.0, 1.0, 1.0};

  VolumeT() = default;
  VolumeT(int d, int h, int w, std::array<double, 3> sp = {1.0, 1.0, 1.0})
      : data(std::vector<int>{d, h, w}), spacing(sp) {
    validate_geometry();
  }
  VolumeT(TensorT<Scalar> t, std::array<double, 3> sp) : data(std::move(t)), spacing(sp) {
    if (data.rank() != 3) throw DataError("volume: expected rank-3 data, got " + data.shape_string());
    validate_geometry();
  }

  int depth() const { return data.dim(0); }
  int height() const { return data.dim(1); }
  int width() const { return data.dim(2); }
  std::int64_t voxels() const { return data.size(); }

  void validate_geometry() const {
    for (int i = 0; i < 3; ++i) {
      if (data.dim(i) < 1) throw DataError("volume: shape components must be >= 1");
      if (!(spacing[static_cast<std::size_t>(i)] > 0.0))
        throw DataError("volume: spacing components must be > 0");
    }
  }
  void validate_finite(const std::string& what) const {
    if (!data.all_finite()) throw DataError(what + ": non-finite voxel values");
  }
};

using Volume = VolumeT<double>;
using Mask = TensorT<std::uint8_t>;  // binary 3D array, values {0,1}

// Raw annotation grid; legal values are the BraTS codes
// 1 = NCR/NET, 2 = ED, 4 = ET, 0 = background.
struct LabelMap {
  TensorT<std::uint8_t> labels;  // shape (D,H,W)

  LabelMap() = default;
  explicit LabelMap(TensorT<std::uint8_t> l) : labels(std::move(l)) {
    if (labels.rank() != 3)
      throw DataError("label map: expected rank-3 data, got " + labels.shape_string());
  }

  const std::vector<int>& shape() const { return labels.shape(); }
  void validate_values() const;
};

// Nested evaluation regions: et <= tc <= wt voxelwise.
struct RegionMasks {
  Mask wt, tc, et;
};

// Disjoint tissue classes backing the region decomposition.
struct TissueMasks {
  Mask ncr_net, ed, et;
};

enum class Modality { T1, T1ce, T2, Flair };
constexpr std::array<Modality, 4> kModalityOrder{Modality::T1, Modality::T1ce, Modality::T2,
                                                 Modality::Flair};
const char* modality_name(Modality m);
Modality modality_from_name(const std::string& name);

// Four co-registered modalities plus optional annotation and text.
struct Case {
  std::string case_id;
  std::map<Modality, Volume> modalities;
  std::optional<LabelMap> label;
  std::string description;
  std::optional<int> grade;  // tumor type (0 = LGG, 1 = HGG) when known

  const Volume& modality(Modality m) const { return modalities.at(m); }
  const std::vector<int>& shape() const { return modalities.at(Modality::T1).data.shape(); }
  std::array<double, 3> spacing() const { return modalities.at(Modality::T1).spacing; }
  void validate() const;
};

RegionMasks derive_regions(const LabelMap& label);
TissueMasks tissue_masks(const LabelMap& label);

// Voxels with nonzero raw intensity in any modality.
Mask brain_mask(const Case& c);

std::int64_t mask_count(const Mask& m);
bool mask_subset(const Mask& inner, const Mask& outer);

// Stacks the four modalities in fixed order (T1, T1ce, T2, FLAIR) into a
// (4,D,H,W) tensor.
Tensor case_tensor(const Case& c);

}  // namespace trifuse
