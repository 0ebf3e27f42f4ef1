// Acceptance suite: runs every release criterion at its stated tolerance and
// prints one pass/fail line per criterion. Exit code 0 iff all pass.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "test_support.hpp"
#include "trifuse/config.hpp"
#include "trifuse/train.hpp"

using namespace trifuse;
using ad::Var;

namespace {

using Clock = std::chrono::steady_clock;

struct Check {
  bool ok = true;
  std::string detail;

  void expect(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
};

Var weighted_sum(const Var& v, unsigned seed = 7) {
  rng_t rng(seed);
  Tensor w(v.shape());
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (std::int64_t i = 0; i < w.size(); ++i) w[i] = d(rng);
  return ad::sum(ad::mul(v, Var::leaf(w)));
}

// ---- 1. metric oracle equivalence ------------------------------------------

Check metric_oracle_equivalence() {
  Check c;
  rng_t rng(515);
  for (int trial = 0; trial < 200; ++trial) {
    const double p = 0.03 + 0.45 * (trial % 7) / 7.0;
    const Mask a = testsup::random_mask({8, 8, 8}, p, rng);
    const Mask b = testsup::random_mask({8, 8, 8}, p, rng);
    const std::array<double, 3> sp{1.0, 0.8, 1.25};
    c.expect(dice(a, b) == oracles::dice(a, b), "dice mismatch at trial " + std::to_string(trial));
    const auto fast = hd95(a, b, sp);
    const auto slow = oracles::hd95(a, b, sp);
    c.expect(fast.has_value() == slow.has_value(),
             "hd95 definedness mismatch at trial " + std::to_string(trial));
    if (fast && slow)
      c.expect(std::abs(*fast - *slow) < 1e-9,
               "hd95 differs by " + std::to_string(std::abs(*fast - *slow)) + " mm at trial " +
                   std::to_string(trial));
  }
  c.detail = c.ok ? "200 random 8^3 pairs, dice exact, hd95 within 1e-9 mm" : c.detail;
  return c;
}

// ---- 2. equation invariants --------------------------------------------------

Check equation_invariants() {
  Check c;
  rng_t rng(616);

  for (int trial = 0; trial < 100; ++trial) {  // text-gated convex combination
    const Tensor fv = testsup::randn({16}, rng, 2.0);
    const Tensor ft = testsup::randn({16}, rng, 2.0);
    auto [g, comb] = gated_fuse(Var::leaf(fv), Var::leaf(ft));
    for (int i = 0; i < 16; ++i) {
      c.expect(g.value()[i] > 0.0 && g.value()[i] < 1.0, "gate escaped (0,1)");
      const double lo = std::min(fv[i], ft[i]), hi = std::max(fv[i], ft[i]);
      c.expect(comb.value()[i] >= lo - 1e-12 && comb.value()[i] <= hi + 1e-12,
               "combined left the [vision,text] interval");
    }
  }

  for (int trial = 0; trial < 100; ++trial) {  // multi-view averaging
    const Var a = Var::leaf(testsup::randn({16}, rng));
    const Var b = Var::leaf(testsup::randn({16}, rng));
    const Var d = Var::leaf(testsup::randn({16}, rng));
    const Var f1 = fuse_views(a, b, d);
    const Var f2 = fuse_views(d, a, b);
    const double k = 3.5;
    const Var f3 = fuse_views(ad::scale(a, k), ad::scale(b, k), ad::scale(d, k));
    for (int i = 0; i < 16; ++i) {
      c.expect(std::abs(f1.value()[i] - f2.value()[i]) < 1e-13, "view order changed the fusion");
      c.expect(std::abs(f3.value()[i] - k * f1.value()[i]) < 1e-12, "fusion is not linear");
    }
  }

  nn::ParamStore ps(617);  // region attention damping
  SemanticSpatialAttention att(ps, "att", 3, 8, 4);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor probs({1, 4, 4, 4});
    for (std::int64_t i = 0; i < probs.size(); ++i) probs[i] = unit(rng);
    const Var y = Var::leaf(probs);
    const Var dec = Var::leaf(testsup::randn({3, 4, 4, 4}, rng));
    const Var fused = Var::leaf(testsup::randn({8}, rng));
    const Var out = att(y, dec, fused, 1.0);
    for (std::int64_t i = 0; i < out.value().size(); ++i)
      c.expect(out.value()[i] <= y.value()[i] && out.value()[i] >= 0.0,
               "enhanced prediction exceeded the base");
  }

  for (int trial = 0; trial < 100; ++trial) {  // output assembly round-trip
    const Var wt = Var::leaf(testsup::randn({1, 3, 2, 2}, rng));
    const Var tc = Var::leaf(testsup::randn({1, 3, 2, 2}, rng));
    const Var et = Var::leaf(testsup::randn({1, 3, 2, 2}, rng));
    const Var y = assemble_output(wt, tc, et);
    c.expect(y.shape() == std::vector<int>{3, 3, 2, 2}, "assembled channel count != 3");
    const auto parts = split_output(y);
    const Var* in[3] = {&wt, &tc, &et};
    for (int ch = 0; ch < 3; ++ch)
      for (std::int64_t i = 0; i < 12; ++i)
        c.expect(parts[static_cast<std::size_t>(ch)].value()[i] == in[ch]->value()[i],
                 "assemble/split round-trip broke");
  }

  c.detail = c.ok ? "gating convexity, view averaging, attention damping, assembly round-trip "
                    "(100 random inputs each)"
                  : c.detail;
  return c;
}

// ---- 3. gradient checks -------------------------------------------------------

Check gradient_checks() {
  Check c;
  const double tol = 1e-3;
  auto report = [&](const char* what, double err) {
    c.expect(err < tol, std::string(what) + " rel err " + std::to_string(err));
  };

  {  // residual CBAM block
    nn::ParamStore ps(5);
    nn::ResidualBlock block(ps, "blk", 2, 3, {3, 3, 3}, true, 2, 3);
    rng_t rng(501);
    Var x = Var::leaf(testsup::randn({2, 4, 4, 4}, rng), true);
    std::vector<Var> wrt{x};
    for (auto& e : ps.entries()) wrt.push_back(e.var);
    report("residual_cbam_block", testsup::gradcheck([&] { return weighted_sum(block(x)); }, wrt, 10));
  }
  {  // attention gate
    nn::ParamStore ps(16);
    nn::AttentionGate gate(ps, "gate", 3, 4, 2);
    rng_t rng(7);
    Var skip = Var::leaf(testsup::randn({3, 4, 4, 4}, rng), true);
    Var gating = Var::leaf(testsup::randn({4, 2, 2, 2}, rng), true);
    std::vector<Var> wrt{skip, gating};
    for (auto& e : ps.entries()) wrt.push_back(e.var);
    report("attention_gate",
           testsup::gradcheck([&] { return weighted_sum(gate(skip, gating)); }, wrt, 10));
  }
  {  // 2D slice network
    nn::ParamStore ps(14);
    SemanticConfig cfg;
    cfg.embed_dim = 32;
    cfg.shared_dim = 32;
    cfg.attention_heads = 4;
    cfg.slice_hidden = 6;
    SemanticPath path(ps, cfg);
    rng_t rng(15);
    const Tensor slice = testsup::randn({4, 8, 8}, rng);
    std::vector<Var> wrt;
    for (auto& e : ps.entries())
      if (e.name.find("slice_net") != std::string::npos) wrt.push_back(e.var);
    report("slice_network",
           testsup::gradcheck([&] { return weighted_sum(path.slice_to_image(slice, {})); }, wrt, 8));
  }
  {  // shared-space mappers
    nn::ParamStore ps(16);
    FeatureMapper vision(ps, "vm", 24, 16, 0.1), text(ps, "tm", 24, 16, 0.1);
    rng_t rng(17);
    Var fv = Var::leaf(testsup::randn({24}, rng), true);
    Var ft = Var::leaf(testsup::randn({24}, rng), true);
    std::vector<Var> wrt{fv, ft};
    for (auto& e : ps.entries()) wrt.push_back(e.var);
    report("mappers", testsup::gradcheck(
                          [&] {
                            auto [g, comb] = gated_fuse(vision(fv, {}), text(ft, {}));
                            return weighted_sum(comb);
                          },
                          wrt, 10));
  }
  {  // attention refinement
    nn::ParamStore ps(6);
    AttentionRefiner refiner(ps, "ref", 32, 4);
    rng_t rng(7);
    Var x = Var::leaf(testsup::randn({32}, rng, 2.0), true);
    std::vector<Var> wrt{x};
    for (auto& e : ps.entries()) wrt.push_back(e.var);
    report("attention_refine",
           testsup::gradcheck([&] { return weighted_sum(refiner(x)); }, wrt, 10));
  }
  {  // semantic spatial attention
    nn::ParamStore ps(10);
    SemanticSpatialAttention att(ps, "att", 3, 8, 4);
    rng_t rng(11);
    Tensor probs({1, 4, 4, 4});
    std::uniform_real_distribution<double> unit(0.1, 0.9);
    for (std::int64_t i = 0; i < probs.size(); ++i) probs[i] = unit(rng);
    Var y = Var::leaf(probs, true);
    Var dec = Var::leaf(testsup::randn({3, 4, 4, 4}, rng), true);
    Var fused = Var::leaf(testsup::randn({8}, rng), true);
    std::vector<Var> wrt{y, dec, fused};
    for (auto& e : ps.entries()) wrt.push_back(e.var);
    report("semantic_spatial_attention",
           testsup::gradcheck([&] { return weighted_sum(att(y, dec, fused, 1.0)); }, wrt, 10));
  }
  {  // full composite loss on a 4^3 case
    NetworkConfig net;
    net.encoder_channels = {6};
    net.bottleneck_channels = 12;
    net.deep_supervision_levels = 0;
    net.head_channels = 4;
    net.cls_hidden = 8;
    net.semantic_dim = 16;
    SemanticConfig sem;
    sem.embed_dim = 16;
    sem.shared_dim = 16;
    sem.attention_heads = 4;
    sem.slice_hidden = 4;
    FusionModel model(net, sem, AblationSwitches{}, 31);
    const Case raw = testsup::tiny_case(8, 4);
    AugmentConfig crop;
    crop.flip_p = crop.rotate_p = crop.gamma_p = crop.region_contrast_p = 0.0;
    crop.crop_shape = {4, 4, 4};
    rng_t crng(1);
    const Case c4 = augment(preprocess_case(raw, PreprocessConfig{}), crop, crng);
    const Tensor x = case_tensor(c4);
    TrainConfig tc;
    auto fwd = [&] {
      const ForwardResult fr = model.forward(x, c4.description, 1.0, {});
      return compute_loss(fr.output, *c4.label, c4.grade, tc).total;
    };
    std::vector<Var> wrt;
    for (auto& e : model.params().entries()) wrt.push_back(e.var);
    report("loss", testsup::gradcheck(fwd, wrt, 6));
  }
  c.detail = c.ok ? "residual CBAM, attention gate, slice network, mappers, attention refine, "
                    "region attention, loss — all < 1e-3"
                  : c.detail;
  return c;
}

// ---- 4. preprocessing contracts ---------------------------------------------

Check preprocessing_contracts() {
  Check c;
  for (std::uint64_t seed = 800; seed < 805; ++seed) {
    const Case raw = testsup::tiny_case(16, seed);
    const Mask brain = brain_mask(raw);

    const Volume z = zscore_normalize(raw.modality(Modality::T1), brain);
    double sum = 0, sum2 = 0;
    std::int64_t n = 0;
    for (std::int64_t i = 0; i < z.data.size(); ++i)
      if (brain[i]) {
        sum += z.data[i];
        sum2 += z.data[i] * z.data[i];
        ++n;
      }
    c.expect(std::abs(sum / n) < 1e-4, "z-score masked mean off by " + std::to_string(sum / n));
    c.expect(std::abs(std::sqrt(sum2 / n) - 1.0) < 1e-4, "z-score masked std off");

    const Volume mm = minmax_normalize(raw.modality(Modality::T2));
    c.expect(mm.data.array().minCoeff() == 0.0 && mm.data.array().maxCoeff() == 1.0,
             "min-max range is not exactly [0,1]");

    PreprocessConfig pcfg;
    const Volume boosted = t1ce_boost(z, pcfg);
    const Volume clipped = clip(z, pcfg.clip_low, pcfg.clip_high);
    for (std::int64_t i = 1; i < boosted.data.size(); ++i) {
      if (clipped.data[i - 1] < clipped.data[i])
        c.expect(boosted.data[i - 1] < boosted.data[i], "t1ce boost broke monotonicity");
    }

    AugmentConfig acfg;
    acfg.crop_shape = {12, 12, 12};
    rng_t r1(seed), r2(seed);
    const Case a = augment(raw, acfg, r1);
    const Case b = augment(raw, acfg, r2);
    for (Modality m : kModalityOrder)
      for (std::int64_t i = 0; i < a.modality(m).data.size(); ++i)
        c.expect(a.modality(m).data[i] == b.modality(m).data[i],
                 "augmentation not deterministic under seed");
  }
  c.detail = c.ok ? "z-score (0,1) within 1e-4, min-max exactly [0,1], boost monotone, "
                    "seeded augmentation bit-identical"
                  : c.detail;
  return c;
}

// ---- 5. synthetic overfit -----------------------------------------------------

std::vector<Case> overfit_cases() {
  SynthConfig scfg;
  scfg.shape = {16, 16, 16};
  scfg.count = 2;
  scfg.seed = 77;
  scfg.et_fraction_lo = 0.004;
  scfg.et_fraction_hi = 0.15;
  std::vector<Case> cases;
  for (int i = 0; i < 2; ++i) {
    rng_t rng = make_rng(scfg.seed, "case" + std::to_string(i));
    cases.push_back(preprocess_case(
        synth_case(scfg, "overfit_" + std::to_string(i), rng, default_template_bank()),
        PreprocessConfig{}));
  }
  return cases;
}

double train_steps(FusionModel& model, const std::vector<Case>& cases, const TrainConfig& tc,
                   int max_steps, double target_min_dice, int eval_every, int* steps_used) {
  AdamW opt;
  int step = 0;
  double best_min_dice = 0.0;
  const int total = max_steps;
  for (int epoch = 0; step < max_steps; ++epoch) {
    const double blend = model.has_semantic() ? tc.semantic_blend(epoch) : 0.0;
    for (const Case& c : cases) {
      if (step >= max_steps) break;
      rng_t rng = make_rng(tc.seed, "step." + std::to_string(step));
      nn::Ctx ctx{true, &rng};
      const ForwardResult fr = model.forward(case_tensor(c), c.description, blend, ctx);
      const LossBreakdown lb = compute_loss(fr.output, *c.label, c.grade, tc);
      model.params().zero_grad();
      lb.total.backward();
      opt.step(model.params(), lr_at(step, total, tc), tc.weight_decay);
      ++step;
      if (step % eval_every == 0 || step == max_steps) {
        double dmin = 1.0;
        for (const Case& cc : cases) {
          const Tensor probs = predict_case(model, cc, blend);
          const CaseReport r = evaluate_case(probs, *cc.label, 0.5, cc.spacing(), cc.case_id);
          dmin = std::min({dmin, r.wt.dice, r.tc.dice, r.et.dice});
        }
        best_min_dice = std::max(best_min_dice, dmin);
        if (best_min_dice > target_min_dice) {
          *steps_used = step;
          return best_min_dice;
        }
      }
    }
  }
  *steps_used = step;
  return best_min_dice;
}

Check synthetic_overfit() {
  Check c;
  const std::vector<Case> cases = overfit_cases();

  TrainConfig tc;
  tc.epochs = 250;
  FusionModel base(NetworkConfig{}, SemanticConfig{}, AblationSwitches{}, 11);
  int steps = 0;
  const double dmin = train_steps(base, cases, tc, 500, 0.95, 25, &steps);
  c.expect(dmin > 0.95, "base config min region dice " + std::to_string(dmin) +
                            " after 500 steps");
  std::string detail = "base reached min region dice " + std::to_string(dmin) + " at step " +
                       std::to_string(steps);

  AblationSwitches none;
  none.feature_extractor = FeatureExtractor::None;
  FusionModel degen(NetworkConfig{}, SemanticConfig{}, none, 11);
  int dsteps = 0;
  train_steps(degen, cases, tc, 100, 2.0 /* unreachable */, 100, &dsteps);
  for (const Case& cc : cases) {
    const Tensor probs = predict_case(degen, cc, 1.0);
    const CaseReport r = evaluate_case(probs, *cc.label, 0.5, cc.spacing(), cc.case_id);
    c.expect(r.wt.dice == 0.0 && r.tc.dice == 0.0 && r.et.dice == 0.0,
             "no-extractor run did not collapse to background");
    c.expect(!r.wt.hd95 && !r.tc.hd95 && !r.et.hd95,
             "no-extractor run should leave hd95 undefined");
  }
  if (c.ok) c.detail = detail + "; no-extractor run is all-background";
  return c;
}

// ---- 6. ablation machinery ----------------------------------------------------

Check ablation_machinery() {
  Check c;
  SynthConfig scfg;
  scfg.shape = {16, 16, 16};
  scfg.count = 5;
  scfg.seed = 900;
  std::vector<Case> cases;
  for (int i = 0; i < scfg.count; ++i) {
    rng_t rng = make_rng(scfg.seed, "case" + std::to_string(i));
    cases.push_back(synth_case(scfg, "ab_" + std::to_string(i), rng, default_template_bank()));
  }

  TrainSetup setup;
  setup.network.encoder_channels = {8, 16};
  setup.network.bottleneck_channels = 32;
  setup.network.deep_supervision_levels = 1;
  setup.network.head_channels = 4;
  setup.network.cls_hidden = 8;
  setup.semantic.embed_dim = 32;
  setup.semantic.shared_dim = 32;
  setup.semantic.attention_heads = 4;
  setup.semantic.slice_hidden = 4;
  setup.augment_enabled = false;
  setup.train.epochs = 10;
  setup.train.base_lr = 5e-4;
  setup.train.w_aux = {0.5};
  setup.train.semantic_activation_epoch = 2;

  const AblationTables tables = run_ablation_matrix(cases, setup);

  auto head_of = [](const std::string& csv) { return csv.substr(0, csv.find('\n')); };
  auto rows_of = [](const std::string& csv) {
    std::vector<std::string> rows;
    std::size_t pos = csv.find('\n') + 1;
    while (pos < csv.size()) {
      const std::size_t end = csv.find('\n', pos);
      rows.push_back(csv.substr(pos, csv.find(',', pos) - pos));
      pos = end + 1;
    }
    return rows;
  };

  const std::string region_header =
      "Model,Avg_Dice,Avg_HD95,WT_Dice,TC_Dice,ET_Dice,WT_HD95,TC_HD95,ET_HD95";
  c.expect(tables.csv.count("fusion_layers") == 1, "missing fusion-layer table");
  c.expect(tables.csv.count("feature_extraction") == 1, "missing feature-extraction table");
  c.expect(tables.csv.count("semantic_mechanisms") == 1, "missing semantic-mechanism table");
  c.expect(tables.csv.count("region_specific") == 1, "missing region-specific table");
  for (const char* t : {"fusion_layers", "feature_extraction", "semantic_mechanisms"})
    c.expect(head_of(tables.csv.at(t)) == region_header,
             std::string("bad header in table ") + t);
  c.expect(head_of(tables.csv.at("region_specific")) == "Model,NCR_NET_Dice,ED_Dice,ET_Dice",
           "bad header in region-specific table");

  c.expect(rows_of(tables.csv.at("fusion_layers")) ==
               std::vector<std::string>{"Base", "-Pixel Fusion Layer", "-Feature Fusion Layer",
                                        "-Semantic Fusion Layer", "Traditional 3D-UNet"},
           "fusion-layer rows do not match the experiment matrix");
  c.expect(rows_of(tables.csv.at("feature_extraction")) ==
               std::vector<std::string>{"Base", "3D ResNet", "2D ResNet50",
                                        "No Feature Extractor"},
           "feature-extraction rows do not match");
  c.expect(rows_of(tables.csv.at("semantic_mechanisms")) ==
               std::vector<std::string>{"Base", "Traditional 3D-2D", "-Semantic Guidance",
                                        "-Semantic Attention"},
           "semantic-mechanism rows do not match");

  const AggregateReport& base = tables.row_reports.at("feature_extraction/Base");
  const AggregateReport& none = tables.row_reports.at("feature_extraction/No Feature Extractor");
  c.expect(base.avg_dice() > none.avg_dice(),
           "base (" + std::to_string(base.avg_dice()) + ") does not dominate no-extractor (" +
               std::to_string(none.avg_dice()) + ")");
  if (c.ok)
    c.detail = "tables match the experiment matrix; base avg dice " +
               std::to_string(base.avg_dice()) + " > no-extractor " +
               std::to_string(none.avg_dice());
  return c;
}

// ---- 7. schedule anchors ------------------------------------------------------

Check schedule_anchors() {
  Check c;
  TrainConfig tc;
  const int total = 1000;
  const double start = lr_at(0, total, tc).base;
  const double peak = lr_at(200, total, tc).encoder_decoder;
  const double floor_ = lr_at(total - 1, total, tc).base;
  c.expect(std::abs(start - 2.5e-6) / 2.5e-6 < 1e-12,
           "start rate " + std::to_string(start) + " != 2.5e-6");
  c.expect(std::abs(peak - 1e-4) / 1e-4 < 1e-12,
           "encoder peak " + std::to_string(peak) + " != 1e-4");
  c.expect(std::abs(floor_ - 5e-7) / 5e-7 < 1e-12,
           "floor " + std::to_string(floor_) + " != 5e-7");
  c.detail = c.ok ? "2.5e-6 start, 1e-4 encoder peak, 5e-7 floor (rel err < 1e-12)" : c.detail;
  return c;
}

// ---- 8. shape contracts -------------------------------------------------------

Check shape_contracts() {
  Check c;
  nn::ParamStore ps(1);
  SegNet net(ps, NetworkConfig{});
  rng_t rng(2);
  const Tensor x = testsup::randn({4, 32, 32, 32}, rng);
  ad::NoGradGuard ng;
  const ModelOutput out = net.forward(x, nullptr, 0.0, {});
  c.expect(out.main.shape() == std::vector<int>{3, 32, 32, 32}, "main head shape wrong");
  c.expect(out.aux.size() == 3, "deep supervision head count wrong");
  if (out.aux.size() == 3) {
    c.expect(out.aux[0].shape() == std::vector<int>{3, 16, 16, 16}, "aux[0] shape wrong");
    c.expect(out.aux[1].shape() == std::vector<int>{3, 8, 8, 8}, "aux[1] shape wrong");
    c.expect(out.aux[2].shape() == std::vector<int>{3, 4, 4, 4}, "aux[2] shape wrong");
  }

  // slice-plane shapes against the permutation oracle on non-cubic volumes
  for (const auto& dims : {std::array<int, 3>{4, 6, 8}, std::array<int, 3>{10, 6, 12}}) {
    const Tensor vol({4, dims[0], dims[1], dims[2]});
    const auto slices = extract_canonical_slices(vol);
    for (std::size_t p = 0; p < kPlanePermutations.size(); ++p) {
      const auto& axes = kPlanePermutations[p].axes;
      const std::vector<int> expect{4, dims[static_cast<std::size_t>(axes[0])],
                                    dims[static_cast<std::size_t>(axes[1])]};
      c.expect(slices[p].shape() == expect,
               std::string("slice shape wrong for plane ") + kPlanePermutations[p].name);
    }
  }
  c.detail = c.ok ? "4x32^3 -> 3x32^3 + aux [16^3, 8^3, 4^3]; slice planes match the "
                    "permutation oracle"
                  : c.detail;
  return c;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Check()> run;
  };
  const std::vector<Criterion> criteria{
      {"metric oracle equivalence", metric_oracle_equivalence},
      {"equation invariants", equation_invariants},
      {"gradient checks", gradient_checks},
      {"preprocessing contracts", preprocessing_contracts},
      {"synthetic overfit", synthetic_overfit},
      {"ablation machinery", ablation_machinery},
      {"schedule anchors", schedule_anchors},
      {"shape contracts", shape_contracts},
  };

  bool all_ok = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = Clock::now();
    Check c;
    try {
      c = criteria[i].run();
    } catch (const std::exception& e) {
      c.ok = false;
      c.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    std::printf("[%s] %zu. %s — %s (%.1fs)\n", c.ok ? "PASS" : "FAIL", i + 1, criteria[i].name,
                c.detail.c_str(), secs);
    std::fflush(stdout);
    all_ok = all_ok && c.ok;
  }
  return all_ok ? 0 : 1;
}
