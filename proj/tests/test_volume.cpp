#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "test_support.hpp"
#include "trifuse/volume.hpp"

using namespace trifuse;

namespace {

LabelMap labels_1x1x4(std::initializer_list<int> vals) {
  TensorT<std::uint8_t> t({1, 1, 4});
  int i = 0;
  for (int v : vals) t[i++] = static_cast<std::uint8_t>(v);
  return LabelMap(std::move(t));
}

}  // namespace

TEST_CASE("derive_regions maps BraTS label codes to nested regions") {
  const RegionMasks r = derive_regions(labels_1x1x4({0, 1, 2, 4}));
  CHECK(std::vector<int>{r.wt[0], r.wt[1], r.wt[2], r.wt[3]} == std::vector<int>{0, 1, 1, 1});
  CHECK(std::vector<int>{r.tc[0], r.tc[1], r.tc[2], r.tc[3]} == std::vector<int>{0, 1, 0, 1});
  CHECK(std::vector<int>{r.et[0], r.et[1], r.et[2], r.et[3]} == std::vector<int>{0, 0, 0, 1});
}

TEST_CASE("derive_regions on all-zero labels gives empty masks") {
  const RegionMasks r = derive_regions(labels_1x1x4({0, 0, 0, 0}));
  CHECK(mask_count(r.wt) == 0);
  CHECK(mask_count(r.tc) == 0);
  CHECK(mask_count(r.et) == 0);
}

TEST_CASE("derive_regions on all-ET labels gives full masks") {
  const RegionMasks r = derive_regions(labels_1x1x4({4, 4, 4, 4}));
  CHECK(mask_count(r.wt) == 4);
  CHECK(mask_count(r.tc) == 4);
  CHECK(mask_count(r.et) == 4);
}

TEST_CASE("derive_regions rejects illegal label values naming voxel and value") {
  TensorT<std::uint8_t> t({2, 2, 2});
  t(1, 0, 1) = 3;
  const LabelMap bad(std::move(t));
  CHECK_THROWS_WITH_AS(derive_regions(bad),
                       doctest::Contains("illegal value 3 at voxel (1,0,1)"), DataError);
}

TEST_CASE("tissue_masks selects exactly one voxel per class") {
  TensorT<std::uint8_t> t({1, 1, 3});
  t[0] = 1;
  t[1] = 2;
  t[2] = 4;
  const TissueMasks m = tissue_masks(LabelMap(std::move(t)));
  CHECK(mask_count(m.ncr_net) == 1);
  CHECK(mask_count(m.ed) == 1);
  CHECK(mask_count(m.et) == 1);
  CHECK(m.ncr_net[0] == 1);
  CHECK(m.ed[1] == 1);
  CHECK(m.et[2] == 1);
}

TEST_CASE("tissue_masks on background labels gives empty masks") {
  const TissueMasks m = tissue_masks(labels_1x1x4({0, 0, 0, 0}));
  CHECK(mask_count(m.ncr_net) == 0);
  CHECK(mask_count(m.ed) == 0);
  CHECK(mask_count(m.et) == 0);
}

TEST_CASE("region nesting and tissue decomposition hold for random label maps") {
  rng_t rng(101);
  const std::uint8_t codes[4] = {0, 1, 2, 4};
  std::uniform_int_distribution<int> pick(0, 3);
  for (int trial = 0; trial < 100; ++trial) {
    TensorT<std::uint8_t> t({4, 5, 6});
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = codes[pick(rng)];
    const LabelMap label(std::move(t));
    const RegionMasks r = derive_regions(label);
    const TissueMasks m = tissue_masks(label);
    CHECK(mask_subset(r.et, r.tc));
    CHECK(mask_subset(r.tc, r.wt));
    for (std::int64_t i = 0; i < label.labels.size(); ++i) {
      // tissues pairwise disjoint, union = wt
      CHECK(m.ncr_net[i] + m.ed[i] + m.et[i] == (r.wt[i] ? 1 : 0));
      CHECK(m.ncr_net[i] * m.ed[i] == 0);
      CHECK(m.ncr_net[i] * m.et[i] == 0);
      CHECK(m.ed[i] * m.et[i] == 0);
    }
  }
}

TEST_CASE("derive_regions is pure: identical outputs on repeated calls") {
  const LabelMap label = labels_1x1x4({0, 1, 2, 4});
  const RegionMasks a = derive_regions(label);
  const RegionMasks b = derive_regions(label);
  for (std::int64_t i = 0; i < a.wt.size(); ++i) {
    CHECK(a.wt[i] == b.wt[i]);
    CHECK(a.tc[i] == b.tc[i]);
    CHECK(a.et[i] == b.et[i]);
  }
}

TEST_CASE("case validation enforces modality shape agreement") {
  Case c = testsup::tiny_case(16, 5);
  CHECK_NOTHROW(c.validate());
  c.modalities[Modality::T2] = Volume(16, 16, 8);
  CHECK_THROWS_AS(c.validate(), DataError);
}

TEST_CASE("case_tensor stacks modalities in fixed order") {
  const Case c = testsup::tiny_case(16, 6);
  const Tensor t = case_tensor(c);
  CHECK(t.shape() == std::vector<int>{4, 16, 16, 16});
  CHECK(t(0, 8, 8, 8) == c.modality(Modality::T1).data(8, 8, 8));
  CHECK(t(1, 8, 8, 8) == c.modality(Modality::T1ce).data(8, 8, 8));
  CHECK(t(3, 8, 8, 8) == c.modality(Modality::Flair).data(8, 8, 8));
}

TEST_CASE("volume invariants reject bad geometry") {
  CHECK_THROWS_AS(Volume(0, 4, 4), DataError);
  CHECK_THROWS_AS(Volume(4, 4, 4, {1.0, 0.0, 1.0}), DataError);
}
