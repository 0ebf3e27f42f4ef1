#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "trifuse/nn.hpp"

namespace trifuse {

// Single-file parameter checkpoint: 8-byte magic, little-endian uint32 header
// length, JSON header (version, echoed config, tensor directory), then a
// contiguous little-endian float32 payload.
constexpr char kCheckpointMagic[8] = {'T', 'R', 'I', 'F', 'C', 'K', 'P', '1'};

struct TensorBlob {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

struct Checkpoint {
  nlohmann::json config;
  std::vector<TensorBlob> tensors;

  const TensorBlob* find(const std::string& name) const;
  std::int64_t total_params() const;
};

void write_checkpoint(const std::string& path, const std::vector<TensorBlob>& tensors,
                      const nlohmann::json& config);
Checkpoint read_checkpoint(const std::string& path);

void save_params(const std::string& path, const nn::ParamStore& store,
                 const nlohmann::json& config);

// Loads by name with strict shape checking; every store parameter must be
// present and every file tensor consumed.
nlohmann::json load_params(const std::string& path, nn::ParamStore& store);

}  // namespace trifuse
