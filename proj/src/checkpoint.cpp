#include "trifuse/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>

namespace trifuse {

const TensorBlob* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::int64_t Checkpoint::total_params() const {
  std::int64_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::int64_t>(t.data.size());
  return n;
}

void write_checkpoint(const std::string& path, const std::vector<TensorBlob>& tensors,
                      const nlohmann::json& config) {
  nlohmann::json header;
  header["version"] = 1;
  header["config"] = config;
  header["tensors"] = nlohmann::json::array();
  std::int64_t offset = 0;
  for (const auto& t : tensors) {
    nlohmann::json rec;
    rec["name"] = t.name;
    rec["shape"] = t.shape;
    rec["dtype"] = "float32";
    rec["offset"] = offset;
    header["tensors"].push_back(std::move(rec));
    offset += static_cast<std::int64_t>(t.data.size() * sizeof(float));
  }
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot open '" + path + "' for writing");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint32_t len = static_cast<std::uint32_t>(hs.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& t : tensors)
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (!out) throw DataError("checkpoint: write failed for '" + path + "'");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw DataError("checkpoint: bad magic in '" + path + "' (byte offset 0)");
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in) throw DataError("checkpoint: truncated header length (byte offset 8)");
  std::string hs(len, '\0');
  in.read(hs.data(), len);
  if (!in) throw DataError("checkpoint: truncated header (byte offset 12)");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("checkpoint: corrupt header at byte offset " +
                    std::to_string(12 + e.byte) + ": " + e.what());
  }
  if (header.value("version", 0) != 1)
    throw DataError("checkpoint: unsupported version in '" + path + "'");

  Checkpoint ck;
  ck.config = header.value("config", nlohmann::json::object());
  for (const auto& rec : header.at("tensors")) {
    TensorBlob t;
    t.name = rec.at("name").get<std::string>();
    t.shape = rec.at("shape").get<std::vector<int>>();
    const std::int64_t count = Tensor::count(t.shape);
    t.data.resize(static_cast<std::size_t>(count));
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (!in)
      throw DataError("checkpoint: truncated payload for tensor '" + t.name + "' in '" + path +
                      "'");
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

void save_params(const std::string& path, const nn::ParamStore& store,
                 const nlohmann::json& config) {
  std::vector<TensorBlob> blobs;
  blobs.reserve(store.entries().size());
  for (const auto& e : store.entries()) {
    TensorBlob t;
    t.name = e.name;
    t.shape = e.var.value().shape();
    t.data.resize(static_cast<std::size_t>(e.var.value().size()));
    for (std::int64_t i = 0; i < e.var.value().size(); ++i)
      t.data[static_cast<std::size_t>(i)] = static_cast<float>(e.var.value()[i]);
    blobs.push_back(std::move(t));
  }
  write_checkpoint(path, blobs, config);
}

nlohmann::json load_params(const std::string& path, nn::ParamStore& store) {
  Checkpoint ck = read_checkpoint(path);
  std::set<std::string> consumed;
  for (auto& e : store.entries()) {
    const TensorBlob* t = ck.find(e.name);
    if (!t) throw DataError("checkpoint: missing tensor '" + e.name + "' in '" + path + "'");
    if (t->shape != e.var.value().shape())
      throw DataError("checkpoint: shape mismatch for '" + e.name + "': file " +
                      Tensor::shape_string(t->shape) + " vs model " +
                      e.var.value().shape_string());
    for (std::int64_t i = 0; i < e.var.mutable_value().size(); ++i)
      e.var.mutable_value()[i] = static_cast<double>(t->data[static_cast<std::size_t>(i)]);
    consumed.insert(e.name);
  }
  for (const auto& t : ck.tensors)
    if (!consumed.count(t.name))
      throw DataError("checkpoint: unexpected tensor '" + t.name + "' in '" + path + "'");
  return ck.config;
}

}  // namespace trifuse
