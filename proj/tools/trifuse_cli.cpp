// trifuse: three-layer fusion brain-tumor segmentation toolkit.
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "trifuse/checkpoint.hpp"
#include "trifuse/config.hpp"

namespace fs = std::filesystem;
using namespace trifuse;

namespace {

void write_text(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path().empty()
                             ? "."
                             : fs::path(path).parent_path().string());
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << text;
}

AblationSwitches switches_from_arg(const std::string& arg) {
  if (arg.empty() || arg == "base") return AblationSwitches{};
  if (fs::exists(arg)) {
    std::ifstream in(arg);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("switches file '" + arg + "': " + e.what());
    }
    return switches_from_json(j);
  }
  AblationSwitches s;
  if (arg == "no-pixel") {
    s.pixel_fusion = false;
  } else if (arg == "no-feature" || arg == "no-extractor") {
    s.feature_extractor = FeatureExtractor::None;
  } else if (arg == "no-semantic") {
    s.semantic_fusion = false;
  } else if (arg == "no-guidance") {
    s.semantic_guidance = false;
  } else if (arg == "no-attention") {
    s.semantic_attention = false;
  } else if (arg == "3d-resnet") {
    s.feature_extractor = FeatureExtractor::ResNet3d;
  } else if (arg == "2d-resnet50") {
    s.feature_extractor = FeatureExtractor::ResNet2d;
  } else if (arg == "traditional-3d-2d") {
    s.bridge = BridgeMode::Traditional;
  } else if (arg == "traditional-3d-unet") {
    s.pixel_fusion = false;
    s.semantic_fusion = false;
    s.feature_extractor = FeatureExtractor::ResNet3d;
  } else {
    throw ConfigError("unknown switches preset '" + arg +
                      "' (expected a JSON file or one of: base, no-pixel, no-feature, "
                      "no-semantic, no-guidance, no-attention, 3d-resnet, 2d-resnet50, "
                      "traditional-3d-2d, traditional-3d-unet)");
  }
  return s;
}

std::vector<Case> load_cases(const DatasetManifest& m) {
  std::vector<Case> cases;
  cases.reserve(m.entries.size());
  for (const auto& e : m.entries) cases.push_back(load_case(m, e));
  return cases;
}

DatasetManifest manifest_or_synth(const std::string& manifest_path, const ArtifactConfig& cfg,
                                  const std::string& out_dir) {
  if (!manifest_path.empty()) return load_manifest(manifest_path);
  const std::string synth_dir = (fs::path(out_dir) / "synth_data").string();
  std::cout << "no manifest given; generating " << cfg.synth.count
            << " synthetic cases under " << synth_dir << "\n";
  return synth_generate(cfg.synth, synth_dir, cfg.template_bank);
}

nlohmann::json checkpoint_config(const ArtifactConfig& cfg, const AblationSwitches& sw) {
  nlohmann::json j;
  j["artifact"] = config_to_json(cfg);
  j["switches"] = switches_to_json(sw);
  return j;
}

int cmd_synth(const std::string& config_path, const std::string& out_dir, int n,
              std::int64_t seed) {
  ArtifactConfig cfg = load_config(config_path);
  if (n > 0) cfg.synth.count = n;
  if (seed >= 0) cfg.synth.seed = static_cast<std::uint64_t>(seed);
  const DatasetManifest m = synth_generate(cfg.synth, out_dir, cfg.template_bank);
  std::cout << "wrote " << m.entries.size() << " cases to " << out_dir << "/manifest.json\n";
  return 0;
}

int cmd_preprocess(const std::string& manifest_path, const std::string& config_path,
                   const std::string& out_dir) {
  const ArtifactConfig cfg = load_config(config_path);
  const DatasetManifest m = load_manifest(manifest_path);
  fs::create_directories(out_dir);
  DatasetManifest out_m;
  out_m.root = fs::absolute(out_dir).string();
  for (const auto& e : m.entries) {
    const Case c = preprocess_case(load_case(m, e), cfg.preprocess);
    out_m.entries.push_back(save_case(out_dir, c));
  }
  save_manifest((fs::path(out_dir) / "manifest.json").string(), out_m);
  std::cout << "preprocessed " << out_m.entries.size() << " cases into " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& config_path,
              const std::string& switches_arg, const std::string& out_dir, int only_fold,
              std::int64_t seed) {
  ArtifactConfig cfg = load_config(config_path);
  if (seed >= 0) {
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.train.seed = cfg.seed;
    cfg.synth.seed = cfg.seed;
  }
  AblationSwitches sw = switches_arg.empty() ? cfg.switches : switches_from_arg(switches_arg);
  sw = sw.normalized();
  fs::create_directories(out_dir);
  const DatasetManifest m = manifest_or_synth(manifest_path, cfg, out_dir);
  const std::vector<Case> cases = load_cases(m);

  nlohmann::json folds_json;
  folds_json["folds"] = nlohmann::json::array();
  const CrossValResult cv = cross_validate(
      cases, sw, cfg.setup(), only_fold, [&](const FoldOutcome& fo, FusionModel& model) {
        const std::string tag = std::to_string(fo.fold);
        write_text((fs::path(out_dir) / ("curves_fold" + tag + ".csv")).string(),
                   curves_csv(fo.result.curves));
        save_params((fs::path(out_dir) / ("checkpoint_fold" + tag + ".ckpt")).string(),
                    model.params(), checkpoint_config(cfg, sw));
        std::cout << "fold " << fo.fold << ": best epoch " << fo.result.best_epoch
                  << ", val mean dice " << fo.result.best_val_mean_dice << "\n";
      });

  for (const auto& fo : cv.folds) {
    nlohmann::json fj;
    fj["fold"] = fo.fold;
    fj["val_cases"] = fo.val_case_ids;
    fj["best_epoch"] = fo.result.best_epoch;
    folds_json["folds"].push_back(std::move(fj));
  }
  write_text((fs::path(out_dir) / "folds.json").string(), folds_json.dump(2) + "\n");
  write_text((fs::path(out_dir) / "report.csv").string(), case_reports_csv(cv.pooled_reports));
  write_text((fs::path(out_dir) / "report.json").string(), case_reports_json(cv.pooled_reports));
  write_text((fs::path(out_dir) / "aggregate.json").string(), aggregate_json(cv.pooled) + "\n");
  std::cout << "pooled val mean dice: "
            << (cv.pooled.mean("wt_dice") + cv.pooled.mean("tc_dice") +
                cv.pooled.mean("et_dice")) /
                   3.0
            << " over " << cv.pooled.case_count << " cases\n";
  return 0;
}

int cmd_evaluate(const std::string& pred_dir, const std::string& manifest_path,
                 const std::string& out_path, double threshold) {
  const DatasetManifest m = load_manifest(manifest_path);
  std::vector<CaseReport> reports;
  for (const auto& e : m.entries) {
    if (e.label_path.empty())
      throw DataError("evaluate: case " + e.case_id + " has no label in manifest");
    const LabelMap label = load_label(m.resolve(e.label_path));
    const std::string pred_path = (fs::path(pred_dir) / (e.case_id + "_pred.bin")).string();
    if (!fs::exists(pred_path)) throw DataError("evaluate: missing prediction '" + pred_path + "'");
    const Tensor probs = load_prediction(pred_path);
    const Volume ref = load_volume(m.resolve(e.volume_paths.at(Modality::T1)));
    reports.push_back(evaluate_case(probs, label, threshold, ref.spacing, e.case_id));
  }
  write_text(out_path, case_reports_csv(reports));
  const std::string json_path = (fs::path(out_path).parent_path() /
                                 (fs::path(out_path).stem().string() + ".json"))
                                    .string();
  write_text(json_path, case_reports_json(reports) + "\n");
  const std::string agg_path = (fs::path(out_path).parent_path() /
                                (fs::path(out_path).stem().string() + "_aggregate.json"))
                                   .string();
  write_text(agg_path, aggregate_json(aggregate(reports)) + "\n");
  std::cout << "evaluated " << reports.size() << " cases -> " << out_path << "\n";
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& manifest_path,
               const std::string& out_dir, const std::string& matrix, std::int64_t seed) {
  ArtifactConfig cfg = load_config(config_path);
  if (seed >= 0) {
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.train.seed = cfg.seed;
    cfg.synth.seed = cfg.seed;
  }
  const std::string only = matrix == "tables" ? "" : matrix;
  if (!only.empty()) {
    bool known = false;
    for (const auto& p : ablation_matrix()) known = known || p.table == only;
    if (!known)
      throw ConfigError("ablate: --matrix must be 'tables' or one of fusion_layers, "
                        "feature_extraction, semantic_mechanisms");
  }
  fs::create_directories(out_dir);
  const DatasetManifest m = manifest_or_synth(manifest_path, cfg, out_dir);
  const std::vector<Case> cases = load_cases(m);
  const AblationTables tables = run_ablation_matrix(cases, cfg.setup(), only);
  for (const auto& [name, csv] : tables.csv) {
    const std::string path = (fs::path(out_dir) / ("ablation_" + name + ".csv")).string();
    write_text(path, csv);
    std::cout << "wrote " << path << "\n";
  }
  return 0;
}

int cmd_describe(const std::string& checkpoint_path) {
  const Checkpoint ck = read_checkpoint(checkpoint_path);
  std::cout << "checkpoint: " << checkpoint_path << "\n";
  if (ck.config.contains("artifact") && ck.config["artifact"].contains("network")) {
    const ArtifactConfig cfg = config_from_json(ck.config["artifact"]);
    const AblationSwitches sw = ck.config.contains("switches")
                                    ? switches_from_json(ck.config["switches"])
                                    : AblationSwitches{};
    FusionModel model(cfg.network, cfg.semantic, sw, cfg.seed);
    std::cout << describe_network(model.params(), model.net_config());
  } else {
    std::cout << "tensors: " << ck.tensors.size() << ", total params " << ck.total_params()
              << "\n";
    for (const auto& t : ck.tensors)
      std::cout << "  " << t.name << " " << Tensor::shape_string(t.shape) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"three-layer fusion brain-tumor segmentation toolkit"};
  app.require_subcommand(1);

  std::string config_path, manifest_path, out_path, switches_arg, pred_dir, checkpoint_path;
  std::int64_t seed = -1;
  int n = 0, fold = -1;
  double threshold = 0.5;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--out", out_path, "output directory")->required();
  synth->add_option("--config", config_path, "config JSON");
  synth->add_option("--n", n, "number of cases");
  synth->add_option("--seed", seed, "override seed");

  auto* prep = app.add_subcommand("preprocess", "apply pixel-level fusion to a dataset");
  prep->add_option("--manifest", manifest_path, "dataset manifest")->required();
  prep->add_option("--config", config_path, "config JSON");
  prep->add_option("--out", out_path, "output directory")->required();

  auto* train = app.add_subcommand("train", "train with cross-validation");
  train->add_option("--manifest", manifest_path, "dataset manifest (default: synthetic)");
  train->add_option("--config", config_path, "config JSON");
  train->add_option("--switches", switches_arg, "ablation switches (preset name or JSON file)");
  train->add_option("--out", out_path, "output directory")->required();
  train->add_option("--fold", fold, "train a single fold");
  train->add_option("--seed", seed, "override seed");

  auto* eval = app.add_subcommand("evaluate", "score saved predictions against labels");
  eval->add_option("--pred", pred_dir, "predictions directory")->required();
  eval->add_option("--manifest", manifest_path, "dataset manifest")->required();
  eval->add_option("--out", out_path, "report CSV path")->required();
  eval->add_option("--threshold", threshold, "probability threshold");

  auto* predict = app.add_subcommand("predict", "run inference from a checkpoint");
  predict->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  predict->add_option("--manifest", manifest_path, "dataset manifest")->required();
  predict->add_option("--out", out_path, "output directory")->required();

  std::string matrix = "tables";
  auto* ablate = app.add_subcommand("ablate", "run the ablation switch matrix");
  ablate->add_option("--config", config_path, "config JSON");
  ablate->add_option("--manifest", manifest_path, "dataset manifest (default: synthetic)");
  ablate->add_option("--out", out_path, "output directory")->required();
  ablate->add_option("--matrix", matrix, "'tables' (all) or a single table id");
  ablate->add_option("--seed", seed, "override seed");

  auto* describe = app.add_subcommand("describe", "print architecture/parameter summary");
  describe->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return cmd_synth(config_path, out_path, n, seed);
    if (prep->parsed()) return cmd_preprocess(manifest_path, config_path, out_path);
    if (train->parsed())
      return cmd_train(manifest_path, config_path, switches_arg, out_path, fold, seed);
    if (eval->parsed()) return cmd_evaluate(pred_dir, manifest_path, out_path, threshold);
    if (predict->parsed()) {
      const Checkpoint ck = read_checkpoint(checkpoint_path);
      if (!ck.config.contains("artifact"))
        throw DataError("predict: checkpoint has no embedded config");
      const ArtifactConfig cfg = config_from_json(ck.config["artifact"]);
      const AblationSwitches sw = switches_from_json(ck.config.value("switches", nlohmann::json::object()));
      FusionModel model(cfg.network, cfg.semantic, sw, cfg.seed);
      load_params(checkpoint_path, model.params());
      const DatasetManifest m = load_manifest(manifest_path);
      fs::create_directories(out_path);
      for (const auto& e : m.entries) {
        const Case c = preprocess_for_switches(load_case(m, e), cfg.preprocess, sw.pixel_fusion);
        const Tensor probs = predict_case(model, c);
        save_prediction((fs::path(out_path) / (e.case_id + "_pred.bin")).string(), probs,
                        c.spacing());
      }
      std::cout << "wrote predictions for " << m.entries.size() << " cases to " << out_path
                << "\n";
      return 0;
    }
    if (ablate->parsed()) return cmd_ablate(config_path, manifest_path, out_path, matrix, seed);
    if (describe->parsed()) return cmd_describe(checkpoint_path);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return 0;  // --help
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
