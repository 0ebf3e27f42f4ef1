#include "trifuse/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"

namespace fs = std::filesystem;

namespace trifuse {

namespace {

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("corrupt header '" + path + "' at byte offset " + std::to_string(e.byte) +
                    ": " + e.what());
  }
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << j.dump(2) << "\n";
}

void write_payload(const std::string& path, const char* data, std::size_t bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.write(data, static_cast<std::streamsize>(bytes));
  if (!out) throw DataError("write failed for '" + path + "'");
}

std::vector<char> read_payload(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot open '" + path + "'");
  const std::streamsize n = in.tellg();
  in.seekg(0);
  std::vector<char> buf(static_cast<std::size_t>(n));
  in.read(buf.data(), n);
  if (!in) throw DataError("read failed for '" + path + "'");
  return buf;
}

struct Sidecar {
  std::vector<int> shape;
  std::array<double, 3> spacing;
  std::string dtype;
  std::string modality;
};

Sidecar read_sidecar(const std::string& payload_path) {
  const nlohmann::json j = read_json_file(payload_path + ".json");
  Sidecar s;
  try {
    s.shape = j.at("shape").get<std::vector<int>>();
    const auto sp = j.at("spacing").get<std::vector<double>>();
    if (sp.size() != 3) throw DataError("sidecar spacing must have 3 entries");
    s.spacing = {sp[0], sp[1], sp[2]};
    s.dtype = j.at("dtype").get<std::string>();
    s.modality = j.value("modality", "");
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad sidecar '" + payload_path + ".json': " + e.what());
  }
  return s;
}

void write_sidecar(const std::string& payload_path, const std::vector<int>& shape,
                   const std::array<double, 3>& spacing, const std::string& dtype,
                   const std::string& modality) {
  nlohmann::json j;
  j["shape"] = shape;
  j["spacing"] = std::vector<double>{spacing[0], spacing[1], spacing[2]};
  j["dtype"] = dtype;
  if (!modality.empty()) j["modality"] = modality;
  write_json_file(payload_path + ".json", j);
}

void check_payload_count(const std::string& path, std::size_t actual_elems,
                         std::int64_t expected_elems) {
  if (static_cast<std::int64_t>(actual_elems) != expected_elems)
    throw DataError("'" + path + "': payload has " + std::to_string(actual_elems) +
                    " elements, sidecar shape expects " + std::to_string(expected_elems));
}

}  // namespace

void save_volume(const std::string& path, const Volume& v, const std::string& modality) {
  std::vector<float> buf(static_cast<std::size_t>(v.data.size()));
  for (std::int64_t i = 0; i < v.data.size(); ++i)
    buf[static_cast<std::size_t>(i)] = static_cast<float>(v.data[i]);
  write_payload(path, reinterpret_cast<const char*>(buf.data()), buf.size() * sizeof(float));
  write_sidecar(path, v.data.shape(), v.spacing, "float32", modality);
}

Volume load_volume(const std::string& path) {
  const Sidecar s = read_sidecar(path);
  if (s.dtype != "float32") throw DataError("'" + path + "': expected dtype float32");
  if (s.shape.size() != 3) throw DataError("'" + path + "': volume sidecar must be rank 3");
  const auto buf = read_payload(path);
  check_payload_count(path, buf.size() / sizeof(float), Tensor::count(s.shape));
  Tensor t(s.shape);
  const float* f = reinterpret_cast<const float*>(buf.data());
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(f[i]);
  Volume v(std::move(t), s.spacing);
  v.validate_finite(path);
  return v;
}

void save_label(const std::string& path, const LabelMap& l, const std::array<double, 3>& spacing) {
  write_payload(path, reinterpret_cast<const char*>(l.labels.data()),
                static_cast<std::size_t>(l.labels.size()));
  write_sidecar(path, l.labels.shape(), spacing, "uint8", "label");
}

LabelMap load_label(const std::string& path) {
  const Sidecar s = read_sidecar(path);
  if (s.dtype != "uint8") throw DataError("'" + path + "': expected dtype uint8");
  if (s.shape.size() != 3) throw DataError("'" + path + "': label sidecar must be rank 3");
  const auto buf = read_payload(path);
  check_payload_count(path, buf.size(), Tensor::count(s.shape));
  TensorT<std::uint8_t> t(s.shape);
  std::copy(buf.begin(), buf.end(), reinterpret_cast<char*>(t.data()));
  LabelMap l(std::move(t));
  l.validate_values();
  return l;
}

void save_prediction(const std::string& path, const Tensor& probs,
                     const std::array<double, 3>& spacing) {
  if (probs.rank() != 4 || probs.dim(0) != 3)
    throw std::invalid_argument("save_prediction: expected (3,D,H,W)");
  std::vector<float> buf(static_cast<std::size_t>(probs.size()));
  for (std::int64_t i = 0; i < probs.size(); ++i)
    buf[static_cast<std::size_t>(i)] = static_cast<float>(probs[i]);
  write_payload(path, reinterpret_cast<const char*>(buf.data()), buf.size() * sizeof(float));
  write_sidecar(path, probs.shape(), spacing, "float32", "prediction");
}

Tensor load_prediction(const std::string& path) {
  const Sidecar s = read_sidecar(path);
  if (s.dtype != "float32") throw DataError("'" + path + "': expected dtype float32");
  if (s.shape.size() != 4 || s.shape[0] != 3)
    throw DataError("'" + path + "': prediction sidecar must be (3,D,H,W)");
  const auto buf = read_payload(path);
  check_payload_count(path, buf.size() / sizeof(float), Tensor::count(s.shape));
  Tensor t(s.shape);
  const float* f = reinterpret_cast<const float*>(buf.data());
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(f[i]);
  return t;
}

std::string DatasetManifest::resolve(const std::string& rel) const {
  return (fs::path(root) / rel).string();
}

DatasetManifest load_manifest(const std::string& path) {
  const nlohmann::json j = read_json_file(path);
  DatasetManifest m;
  m.root = j.value("root", ".");
  if (fs::path(m.root).is_relative())
    m.root = (fs::absolute(fs::path(path)).parent_path() / m.root).lexically_normal().string();
  std::set<std::string> ids;
  try {
    for (const auto& e : j.at("cases")) {
      ManifestEntry me;
      me.case_id = e.at("case_id").get<std::string>();
      if (!ids.insert(me.case_id).second)
        throw DataError("manifest: duplicate case_id '" + me.case_id + "'");
      for (const auto& [name, p] : e.at("volumes").items())
        me.volume_paths[modality_from_name(name)] = p.get<std::string>();
      me.label_path = e.value("label", "");
      me.description_path = e.value("description", "");
      if (e.contains("grade") && !e.at("grade").is_null()) me.grade = e.at("grade").get<int>();
      m.entries.push_back(std::move(me));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw DataError("manifest '" + path + "': " + ex.what());
  }
  for (const auto& e : m.entries) {
    for (Modality mod : kModalityOrder) {
      if (!e.volume_paths.count(mod))
        throw DataError("manifest: case " + e.case_id + " missing modality " +
                        modality_name(mod));
      const std::string p = m.resolve(e.volume_paths.at(mod));
      if (!fs::exists(p)) throw DataError("manifest: missing file '" + p + "'");
    }
    if (!e.label_path.empty() && !fs::exists(m.resolve(e.label_path)))
      throw DataError("manifest: missing label file '" + m.resolve(e.label_path) + "'");
    if (!e.description_path.empty() && !fs::exists(m.resolve(e.description_path)))
      throw DataError("manifest: missing description file '" +
                      m.resolve(e.description_path) + "'");
  }
  return m;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
  nlohmann::json j;
  j["format"] = "trifuse-dataset-v1";
  j["root"] = ".";
  j["cases"] = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json c;
    c["case_id"] = e.case_id;
    for (const auto& [mod, p] : e.volume_paths) c["volumes"][modality_name(mod)] = p;
    if (!e.label_path.empty()) c["label"] = e.label_path;
    if (!e.description_path.empty()) c["description"] = e.description_path;
    if (e.grade) c["grade"] = *e.grade;
    j["cases"].push_back(std::move(c));
  }
  write_json_file(path, j);
}

Case load_case(const DatasetManifest& m, const ManifestEntry& e) {
  Case c;
  c.case_id = e.case_id;
  c.grade = e.grade;
  for (Modality mod : kModalityOrder)
    c.modalities[mod] = load_volume(m.resolve(e.volume_paths.at(mod)));
  const Volume& ref = c.modality(Modality::T1);
  for (Modality mod : kModalityOrder) {
    const Volume& v = c.modality(mod);
    if (v.data.shape() != ref.data.shape())
      throw DataError("case " + e.case_id + ": '" + e.volume_paths.at(mod) + "' shape " +
                      v.data.shape_string() + " does not match '" +
                      e.volume_paths.at(Modality::T1) + "' " + ref.data.shape_string());
  }
  if (!e.label_path.empty()) c.label = load_label(m.resolve(e.label_path));
  if (!e.description_path.empty()) {
    const nlohmann::json j = read_json_file(m.resolve(e.description_path));
    c.description = j.value("description", "");
  }
  c.validate();
  return c;
}

ManifestEntry save_case(const std::string& dir, const Case& c) {
  const fs::path case_dir = fs::path(dir) / c.case_id;
  fs::create_directories(case_dir);
  ManifestEntry e;
  e.case_id = c.case_id;
  e.grade = c.grade;
  for (Modality mod : kModalityOrder) {
    const std::string rel = c.case_id + "/" + modality_name(mod) + ".bin";
    save_volume((fs::path(dir) / rel).string(), c.modality(mod), modality_name(mod));
    e.volume_paths[mod] = rel;
  }
  if (c.label) {
    e.label_path = c.case_id + "/label.bin";
    save_label((fs::path(dir) / e.label_path).string(), *c.label, c.spacing());
  }
  if (!c.description.empty()) {
    e.description_path = c.case_id + "/description.json";
    nlohmann::json j;
    j["case_id"] = c.case_id;
    j["description"] = c.description;
    write_json_file((fs::path(dir) / e.description_path).string(), j);
  }
  return e;
}

// ---------- description templates ----------

std::vector<std::string> default_template_bank() {
  return {
      "MRI of a {grade} glioma with {regions}.",
      "Multisequence brain MRI showing a {grade} glioma; visible components: {regions}.",
      "{grade} glioma on MRI with {regions} in the lesion.",
  };
}

std::string generate_description(const std::string& case_id, std::optional<int> grade,
                                 bool has_ncr, bool has_ed, bool has_et,
                                 const std::vector<std::string>& bank) {
  if (bank.empty()) return "";
  const std::string tpl = bank[fnv1a64(case_id) % bank.size()];
  std::string grade_str = "untyped";
  if (grade) grade_str = *grade == 1 ? "high-grade" : "low-grade";
  std::vector<std::string> parts;
  if (has_et) parts.push_back("enhancing tumor");
  if (has_ncr) parts.push_back("necrotic core");
  if (has_ed) parts.push_back("peritumoral edema");
  std::string regions = parts.empty() ? "no focal lesion" : parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i)
    regions += (i + 1 == parts.size() ? " and " : ", ") + parts[i];

  std::string out = tpl;
  auto replace_all = [&out](const std::string& key, const std::string& value) {
    for (std::size_t pos = out.find(key); pos != std::string::npos; pos = out.find(key))
      out.replace(pos, key.size(), value);
  };
  replace_all("{grade}", grade_str);
  replace_all("{regions}", regions);
  return out;
}

// ---------- synthetic dataset ----------

void SynthConfig::validate() const {
  if (count < 1) throw ConfigError("synth: count must be >= 1");
  for (int d : shape)
    if (d < 8) throw ConfigError("synth: shape components must be >= 8");
  if (!(et_fraction_lo > 0.0) || et_fraction_hi <= et_fraction_lo)
    throw ConfigError("synth: ET fraction band must satisfy 0 < lo < hi");
  if (noise_sigma < 0.0) throw ConfigError("synth: noise_sigma must be >= 0");
}

namespace {

struct Ellipsoid {
  std::array<double, 3> center;
  std::array<double, 3> semi;

  bool contains(int z, int y, int x) const {
    const double dz = (z - center[0]) / semi[0];
    const double dy = (y - center[1]) / semi[1];
    const double dx = (x - center[2]) / semi[2];
    return dz * dz + dy * dy + dx * dx <= 1.0;
  }
};

}  // namespace

Case synth_case(const SynthConfig& cfg, const std::string& case_id, rng_t& rng,
                const std::vector<std::string>& template_bank) {
  cfg.validate();
  const int D = cfg.shape[0], H = cfg.shape[1], W = cfg.shape[2];
  const double min_dim = static_cast<double>(std::min({D, H, W}));
  const std::int64_t total = static_cast<std::int64_t>(D) * H * W;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> grade_pick(0, 1);
  const int grade = grade_pick(rng);

  const Ellipsoid brain{{(D - 1) / 2.0, (H - 1) / 2.0, (W - 1) / 2.0},
                        {0.47 * D, 0.47 * H, 0.47 * W}};

  // Resample tumor geometry until the ET voxel fraction lands in the
  // configured band.
  Ellipsoid wt{}, tc{}, et{};
  TensorT<std::uint8_t> labels({D, H, W});
  bool ok = false;
  for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
    const double r_wt = (0.20 + 0.12 * unit(rng)) * min_dim;
    std::array<double, 3> center{}, semi{};
    for (int i = 0; i < 3; ++i) {
      const double dim = static_cast<double>(cfg.shape[static_cast<std::size_t>(i)]);
      center[static_cast<std::size_t>(i)] = dim / 2.0 + (unit(rng) - 0.5) * 0.25 * dim;
      semi[static_cast<std::size_t>(i)] = r_wt * (0.85 + 0.3 * unit(rng));
    }
    wt = {center, semi};
    const double tc_scale = 0.62 + 0.1 * unit(rng);
    const double et_scale = grade == 1 ? 0.50 + 0.1 * unit(rng) : 0.36 + 0.1 * unit(rng);
    tc = {center, {semi[0] * tc_scale, semi[1] * tc_scale, semi[2] * tc_scale}};
    et = {center, {semi[0] * et_scale, semi[1] * et_scale, semi[2] * et_scale}};

    labels.set_zero();
    std::int64_t n_et = 0;
    bool any_ncr = false, any_ed = false;
    for (int z = 0; z < D; ++z)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          if (!wt.contains(z, y, x) || !brain.contains(z, y, x)) continue;
          if (et.contains(z, y, x)) {
            labels(z, y, x) = 4;
            ++n_et;
          } else if (tc.contains(z, y, x)) {
            labels(z, y, x) = 1;
            any_ncr = true;
          } else {
            labels(z, y, x) = 2;
            any_ed = true;
          }
        }
    const double frac = static_cast<double>(n_et) / static_cast<double>(total);
    ok = frac >= cfg.et_fraction_lo && frac <= cfg.et_fraction_hi && any_ncr && any_ed;
  }
  if (!ok)
    throw DataError("synth: could not satisfy ET fraction band " +
                    std::to_string(cfg.et_fraction_lo) + ".." +
                    std::to_string(cfg.et_fraction_hi) + " for shape " +
                    Tensor::shape_string({D, H, W}));

  // Modality contrasts: baseline brain intensity, edema bright on FLAIR/T2,
  // necrosis dark on T1, enhancing rim bright on T1ce.
  struct Contrast {
    double base, ed, ncr, et;
  };
  const std::map<Modality, Contrast> table{
      {Modality::T1, {100.0, -10.0, -35.0, 10.0}},
      {Modality::T1ce, {110.0, -5.0, -15.0, 85.0}},
      {Modality::T2, {80.0, 45.0, 25.0, 10.0}},
      {Modality::Flair, {90.0, 60.0, 15.0, 12.0}},
  };

  Case c;
  c.case_id = case_id;
  c.grade = grade;
  std::normal_distribution<double> noise(0.0, 1.0);
  for (Modality m : kModalityOrder) {
    const Contrast& ct = table.at(m);
    Volume v(D, H, W);
    for (int z = 0; z < D; ++z)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          if (!brain.contains(z, y, x)) continue;
          double val = ct.base;
          switch (labels(z, y, x)) {
            case 2: val += ct.ed; break;
            case 1: val += ct.ncr; break;
            case 4: val += ct.et; break;
            default: break;
          }
          val *= 1.0 + cfg.noise_sigma * noise(rng);
          v.data(z, y, x) = std::max(val, 1.0);  // keep brain strictly nonzero
        }
    c.modalities[m] = std::move(v);
  }
  c.label = LabelMap(std::move(labels));
  c.description = generate_description(case_id, grade, true, true, true, template_bank);
  c.validate();
  return c;
}

DatasetManifest synth_generate(const SynthConfig& cfg, const std::string& out_dir,
                               const std::vector<std::string>& template_bank) {
  cfg.validate();
  fs::create_directories(out_dir);
  DatasetManifest m;
  m.root = fs::absolute(out_dir).string();
  for (int i = 0; i < cfg.count; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "synth_%03d", i);
    rng_t rng = make_rng(cfg.seed, std::string("synth_case.") + buf);
    const Case c = synth_case(cfg, buf, rng, template_bank);
    m.entries.push_back(save_case(out_dir, c));
  }
  save_manifest((fs::path(out_dir) / "manifest.json").string(), m);
  return m;
}

}  // namespace trifuse
