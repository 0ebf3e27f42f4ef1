#pragma once

#include <array>
#include <memory>
#include <string>
#include <utility>

#include "trifuse/nn.hpp"

namespace trifuse {

// Axis-index triplets used to rearrange a volume before slicing: the first
// two entries are the in-plane axes, the third is the slicing axis.
struct PlanePermutation {
  const char* name;
  std::array<int, 3> axes;
};
constexpr std::array<PlanePermutation, 3> kPlanePermutations{{
    {"axial", {0, 1, 2}},
    {"coronal", {0, 2, 1}},
    {"sagittal", {1, 2, 0}},
}};

// Center slice along each anatomical plane of a (C,D,H,W) tensor; each
// result has shape (C, dim[axes[0]], dim[axes[1]]).
std::array<Tensor, 3> extract_canonical_slices(const Tensor& case_tensor);

// Frozen or pluggable encoder pair mapping images and text into a shared
// embedding space. Outputs are unit-norm and deterministic per instance.
struct EncoderInterface {
  virtual ~EncoderInterface() = default;
  virtual int dim() const = 0;
  virtual ad::Var encode_image(const ad::Var& image) const = 0;  // (3,224,224) -> (E)
  virtual ad::Var encode_text(const std::string& text) const = 0;  // -> (E)
};

// Deterministic seeded random projection over a block-pooled image and a
// hashed bag-of-tokens; the test stand-in for a pretrained encoder.
std::unique_ptr<EncoderInterface> make_toy_encoder(std::uint64_t seed, int dim = 512);

// Encoder whose projection weights come from a named-tensor checkpoint
// ("vision_projection", "text_projection"). When a store is given the
// weights are registered as trainable clip-adapter parameters.
std::unique_ptr<EncoderInterface> make_file_encoder(const std::string& checkpoint_path,
                                                    nn::ParamStore* trainable_store);

// Multi-view averaging into one volume-level feature.
ad::Var fuse_views(const ad::Var& a, const ad::Var& b, const ad::Var& c);

// Text-gated convex fusion: g = sigmoid(text), out = vision*g + text*(1-g).
// Returns (g_text, f_combined).
std::pair<ad::Var, ad::Var> gated_fuse(const ad::Var& vision_mapped, const ad::Var& text_mapped);

// Fixed [WT, TC, ET] channel stacking of three single-channel volumes.
ad::Var assemble_output(const ad::Var& wt, const ad::Var& tc, const ad::Var& et);
std::array<ad::Var, 3> split_output(const ad::Var& y);

struct SemanticFeatures {
  ad::Var f_3d;            // (E) multi-view volume feature
  ad::Var f_vision_mapped; // (S)
  ad::Var f_text_mapped;   // (S); undefined when guidance is off
  ad::Var g_text;          // (S) in (0,1); undefined when guidance is off
  ad::Var f_combined;      // (S)
  ad::Var f_fused;         // (S) final fused feature
};

enum class BridgeMode { Learned, Traditional };
enum class EncoderKind { Toy, File };

struct SemanticConfig {
  int embed_dim = 512;   // encoder output dim E
  int shared_dim = 512;  // shared space dim S
  int attention_heads = 8;
  double mapper_dropout = 0.1;
  int slice_hidden = 8;  // channels in the 2D enhancement net
  int image_size = 224;
  EncoderKind encoder_kind = EncoderKind::Toy;
  std::uint64_t encoder_seed = 7;
  std::string encoder_checkpoint;
  bool encoder_trainable = false;
  BridgeMode bridge = BridgeMode::Learned;

  void validate() const;
};

// Shared-space mapper: linear, nonlinearity, dropout.
struct FeatureMapper {
  nn::Linear map;
  double drop = 0.1;

  FeatureMapper() = default;
  FeatureMapper(nn::ParamStore& ps, const std::string& prefix, int in, int out, double dropout);
  ad::Var operator()(const ad::Var& x, nn::Ctx ctx) const;
};

// Residual multi-head self-attention over the fused feature treated as a
// single token, followed by layer normalization.
struct AttentionRefiner {
  nn::MultiHeadSelfAttention mha;
  ad::Var ln_gamma, ln_beta;

  AttentionRefiner() = default;
  AttentionRefiner(nn::ParamStore& ps, const std::string& prefix, int dim, int heads);
  ad::Var operator()(const ad::Var& f_combined) const;
};

// Spatial attention map from decoder features and the broadcast fused
// feature; multiplies (and therefore never raises) a base prediction.
// The first reduction is the pointwise convolution over
// [decoder || broadcast(f_fused)], computed in factored form: a pointwise
// conv on the decoder plus a broadcast linear map of f_fused (identical
// algebra, no materialized broadcast of the full semantic vector).
struct SemanticSpatialAttention {
  nn::Conv3d reduce;
  nn::Linear context;
  nn::Conv3d conv;

  SemanticSpatialAttention() = default;
  SemanticSpatialAttention(nn::ParamStore& ps, const std::string& prefix, int decoder_channels,
                           int semantic_dim, int hidden);
  ad::Var attention_map(const ad::Var& decoder_features, const ad::Var& f_fused) const;
  ad::Var operator()(const ad::Var& y_base, const ad::Var& decoder_features,
                     const ad::Var& f_fused, double blend) const;
};

// The full semantic pathway: slice extraction, learned 2D enhancement,
// encoder, shared-space mapping, text gating, attention refinement.
class SemanticPath {
 public:
  SemanticPath(nn::ParamStore& ps, SemanticConfig cfg);

  // (C,h,w) slice -> (3,image_size,image_size) encoder input
  ad::Var slice_to_image(const Tensor& slice, nn::Ctx ctx) const;

  SemanticFeatures compute(const Tensor& case_tensor, const std::string& description,
                           bool guidance, nn::Ctx ctx) const;

  const SemanticConfig& config() const { return cfg_; }
  const EncoderInterface& encoder() const { return *encoder_; }

 private:
  SemanticConfig cfg_;
  nn::Conv3d slice_conv1_, slice_conv2_;
  FeatureMapper vision_mapper_, text_mapper_;
  AttentionRefiner refiner_;
  std::shared_ptr<EncoderInterface> encoder_;
};

}  // namespace trifuse
