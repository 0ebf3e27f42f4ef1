#include "trifuse/volume.hpp"

#include <sstream>

namespace trifuse {

namespace {

bool legal_label(std::uint8_t v) { return v == 0 || v == 1 || v == 2 || v == 4; }

[[noreturn]] void reject_label(std::uint8_t v, std::int64_t flat, const std::vector<int>& shape) {
  const std::int64_t hw = static_cast<std::int64_t>(shape[1]) * shape[2];
  std::ostringstream os;
  os << "label map: illegal value " << static_cast<int>(v) << " at voxel (" << flat / hw << ","
     << (flat % hw) / shape[2] << "," << flat % shape[2] << "); legal values are {0,1,2,4}";
  throw DataError(os.str());
}

}  // namespace

void LabelMap::validate_values() const {
  for (std::int64_t i = 0; i < labels.size(); ++i)
    if (!legal_label(labels[i])) reject_label(labels[i], i, labels.shape());
}

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::T1: return "t1";
    case Modality::T1ce: return "t1ce";
    case Modality::T2: return "t2";
    case Modality::Flair: return "flair";
  }
  return "?";
}

Modality modality_from_name(const std::string& name) {
  for (Modality m : kModalityOrder)
    if (name == modality_name(m)) return m;
  throw DataError("unknown modality name '" + name + "'");
}

void Case::validate() const {
  for (Modality m : kModalityOrder)
    if (!modalities.count(m))
      throw DataError("case " + case_id + ": missing modality " + modality_name(m));
  const Volume& ref = modalities.at(Modality::T1);
  for (Modality m : kModalityOrder) {
    const Volume& v = modalities.at(m);
    if (v.data.shape() != ref.data.shape() || v.spacing != ref.spacing)
      throw DataError("case " + case_id + ": modality " + modality_name(m) +
                      " shape/spacing differs from t1");
    v.validate_geometry();
    v.validate_finite("case " + case_id + " modality " + modality_name(m));
  }
  if (label) {
    if (label->shape() != ref.data.shape())
      throw DataError("case " + case_id + ": label shape " +
                      Tensor::shape_string(label->shape()) + " does not match volumes " +
                      ref.data.shape_string());
    label->validate_values();
  }
}

RegionMasks derive_regions(const LabelMap& label) {
  label.validate_values();
  RegionMasks r;
  r.wt = Mask(label.shape());
  r.tc = Mask(label.shape());
  r.et = Mask(label.shape());
  for (std::int64_t i = 0; i < label.labels.size(); ++i) {
    const std::uint8_t v = label.labels[i];
    r.wt[i] = v != 0;
    r.tc[i] = (v == 1 || v == 4);
    r.et[i] = v == 4;
  }
  return r;
}

TissueMasks tissue_masks(const LabelMap& label) {
  label.validate_values();
  TissueMasks t;
  t.ncr_net = Mask(label.shape());
  t.ed = Mask(label.shape());
  t.et = Mask(label.shape());
  for (std::int64_t i = 0; i < label.labels.size(); ++i) {
    const std::uint8_t v = label.labels[i];
    t.ncr_net[i] = v == 1;
    t.ed[i] = v == 2;
    t.et[i] = v == 4;
  }
  return t;
}

Mask brain_mask(const Case& c) {
  Mask m(c.shape());
  for (Modality mod : kModalityOrder) {
    const Tensor& v = c.modality(mod).data;
    for (std::int64_t i = 0; i < v.size(); ++i)
      if (v[i] != 0.0) m[i] = 1;
  }
  return m;
}

std::int64_t mask_count(const Mask& m) {
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < m.size(); ++i) n += m[i] != 0;
  return n;
}

bool mask_subset(const Mask& inner, const Mask& outer) {
  check_same_shape(inner, outer, "mask_subset");
  for (std::int64_t i = 0; i < inner.size(); ++i)
    if (inner[i] && !outer[i]) return false;
  return true;
}

Tensor case_tensor(const Case& c) {
  const auto& s = c.shape();
  Tensor t({4, s[0], s[1], s[2]});
  std::int64_t off = 0;
  const std::int64_t n = Tensor::count(s);
  for (Modality m : kModalityOrder) {
    const Tensor& v = c.modality(m).data;
    std::copy(v.data(), v.data() + n, t.data() + off);
    off += n;
  }
  return t;
}

}  // namespace trifuse
