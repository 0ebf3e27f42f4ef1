#include "trifuse/semantic.hpp"

#include <cctype>
#include <cmath>

#include "trifuse/checkpoint.hpp"

namespace trifuse {

std::array<Tensor, 3> extract_canonical_slices(const Tensor& case_tensor) {
  if (case_tensor.rank() != 4)
    throw std::invalid_argument("extract_canonical_slices: expected (C,D,H,W)");
  const int C = case_tensor.dim(0);
  const std::array<int, 3> dims{case_tensor.dim(1), case_tensor.dim(2), case_tensor.dim(3)};
  std::array<Tensor, 3> out;
  for (std::size_t p = 0; p < kPlanePermutations.size(); ++p) {
    const auto& axes = kPlanePermutations[p].axes;
    const int a0 = dims[static_cast<std::size_t>(axes[0])];
    const int a1 = dims[static_cast<std::size_t>(axes[1])];
    const int mid = dims[static_cast<std::size_t>(axes[2])] / 2;
    Tensor slice({C, a0, a1});
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < a0; ++i)
        for (int j = 0; j < a1; ++j) {
          std::array<int, 3> coord{};
          coord[static_cast<std::size_t>(axes[0])] = i;
          coord[static_cast<std::size_t>(axes[1])] = j;
          coord[static_cast<std::size_t>(axes[2])] = mid;
          slice(c, i, j) = case_tensor(c, coord[0], coord[1], coord[2]);
        }
    out[p] = std::move(slice);
  }
  return out;
}

// ---------- encoders ----------

namespace {

constexpr int kPool = 8;         // image_size / kPool per side feeds the projection
constexpr int kTextBuckets = 4096;

std::vector<std::pair<int, int>> hash_token_counts(const std::string& text) {
  std::vector<int> counts(kTextBuckets, 0);
  std::string token;
  auto flush = [&] {
    if (!token.empty()) {
      counts[static_cast<std::size_t>(fnv1a64(token) % kTextBuckets)] += 1;
      token.clear();
    }
  };
  for (char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch)))
      token.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    else
      flush();
  }
  flush();
  std::vector<std::pair<int, int>> nz;
  for (int b = 0; b < kTextBuckets; ++b)
    if (counts[static_cast<std::size_t>(b)]) nz.push_back({b, counts[static_cast<std::size_t>(b)]});
  return nz;
}

// Shared implementation: pooled-image projection for vision, hashed
// bag-of-tokens projection for text, both L2-normalized.
class ProjectionEncoder : public EncoderInterface {
 public:
  ProjectionEncoder(ad::Var vision_w, ad::Var text_w, int dim, int image_size)
      : vision_w_(std::move(vision_w)), text_w_(std::move(text_w)), dim_(dim),
        image_size_(image_size) {
    zero_bias_ = ad::Var::leaf(Tensor({dim_}));
  }

  int dim() const override { return dim_; }

  ad::Var encode_image(const ad::Var& image) const override {
    if (image.shape() != std::vector<int>{3, image_size_, image_size_})
      throw std::invalid_argument("encode_image: expected (3," + std::to_string(image_size_) +
                                  "," + std::to_string(image_size_) + "), got " +
                                  image.value().shape_string());
    const int side = image_size_ / kPool;
    ad::Var pooled = ad::avg_pool2d(image, kPool);
    pooled = ad::reshape(pooled, {3 * side * side});
    return ad::l2_normalize(ad::linear(pooled, vision_w_, zero_bias_));
  }

  ad::Var encode_text(const std::string& text) const override {
    Tensor counts({kTextBuckets});
    for (const auto& [b, c] : hash_token_counts(text)) counts[b] = static_cast<double>(c);
    const ad::Var x = ad::Var::leaf(std::move(counts));
    return ad::l2_normalize(ad::linear(x, text_w_, zero_bias_));
  }

 private:
  ad::Var vision_w_, text_w_, zero_bias_;
  int dim_;
  int image_size_;
};

Tensor seeded_gaussian(std::uint64_t seed, const std::string& salt, std::vector<int> shape) {
  Tensor t(std::move(shape));
  rng_t rng = make_rng(seed, salt);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace

std::unique_ptr<EncoderInterface> make_toy_encoder(std::uint64_t seed, int dim) {
  const int side = 224 / kPool;
  ad::Var vw = ad::Var::leaf(seeded_gaussian(seed, "toy_encoder.vision", {dim, 3 * side * side}));
  ad::Var tw = ad::Var::leaf(seeded_gaussian(seed, "toy_encoder.text", {dim, kTextBuckets}));
  return std::make_unique<ProjectionEncoder>(std::move(vw), std::move(tw), dim, 224);
}

std::unique_ptr<EncoderInterface> make_file_encoder(const std::string& checkpoint_path,
                                                    nn::ParamStore* trainable_store) {
  Checkpoint ck = read_checkpoint(checkpoint_path);
  const TensorBlob* vt = ck.find("vision_projection");
  const TensorBlob* tt = ck.find("text_projection");
  if (!vt || !tt)
    throw DataError("encoder checkpoint '" + checkpoint_path +
                    "' must contain vision_projection and text_projection");
  const int dim = vt->shape.at(0);
  const int side = 224 / kPool;
  if (vt->shape != std::vector<int>{dim, 3 * side * side} ||
      tt->shape != std::vector<int>{dim, kTextBuckets})
    throw DataError("encoder checkpoint: unexpected projection shapes");

  auto to_var = [&](const TensorBlob& blob, const std::string& name) {
    Tensor t(blob.shape);
    for (std::int64_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<double>(blob.data[static_cast<std::size_t>(i)]);
    if (trainable_store) {
      ad::Var v = trainable_store->create(name, blob.shape, nn::ParamGroup::ClipAdapter,
                                          nn::Init::zero());
      v.mutable_value() = std::move(t);
      return v;
    }
    return ad::Var::leaf(std::move(t));
  };
  ad::Var vw = to_var(*vt, "encoder.vision_projection");
  ad::Var tw = to_var(*tt, "encoder.text_projection");
  return std::make_unique<ProjectionEncoder>(std::move(vw), std::move(tw), dim, 224);
}

// ---------- fusion ops ----------

ad::Var fuse_views(const ad::Var& a, const ad::Var& b, const ad::Var& c) {
  if (a.shape() != b.shape() || a.shape() != c.shape())
    throw std::invalid_argument("fuse_views: view feature dimensions differ");
  return ad::scale(ad::add(ad::add(a, b), c), 1.0 / 3.0);
}

std::pair<ad::Var, ad::Var> gated_fuse(const ad::Var& vision_mapped, const ad::Var& text_mapped) {
  if (vision_mapped.shape() != text_mapped.shape())
    throw std::invalid_argument("gated_fuse: dimension mismatch");
  const ad::Var g = ad::sigmoid(text_mapped);
  const ad::Var ones = ad::Var::leaf(Tensor(g.shape(), 1.0));
  const ad::Var combined =
      ad::add(ad::mul(vision_mapped, g), ad::mul(text_mapped, ad::sub(ones, g)));
  return {g, combined};
}

ad::Var assemble_output(const ad::Var& wt, const ad::Var& tc, const ad::Var& et) {
  for (const ad::Var* v : {&wt, &tc, &et})
    if (v->shape().size() != 4 || v->shape()[0] != 1)
      throw std::invalid_argument("assemble_output: expected (1,D,H,W) channels");
  return ad::concat_channels({wt, tc, et});
}

std::array<ad::Var, 3> split_output(const ad::Var& y) {
  if (y.shape().size() != 4 || y.shape()[0] != 3)
    throw std::invalid_argument("split_output: expected (3,D,H,W)");
  return {ad::slice_channels(y, 0, 1), ad::slice_channels(y, 1, 1), ad::slice_channels(y, 2, 1)};
}

// ---------- modules ----------

void SemanticConfig::validate() const {
  if (embed_dim < 1 || shared_dim < 1) throw ConfigError("semantic: dims must be positive");
  if (attention_heads < 1 || shared_dim % attention_heads != 0)
    throw ConfigError("semantic: shared_dim must be divisible by attention_heads");
  if (mapper_dropout < 0.0 || mapper_dropout >= 1.0)
    throw ConfigError("semantic: mapper_dropout must be in [0,1)");
  if (image_size != 224) throw ConfigError("semantic: image_size is fixed at 224");
  if (encoder_kind == EncoderKind::File && encoder_checkpoint.empty())
    throw ConfigError("semantic: file encoder requires encoder_checkpoint");
}

FeatureMapper::FeatureMapper(nn::ParamStore& ps, const std::string& prefix, int in, int out,
                             double dropout)
    : map(ps, prefix, in, out, nn::ParamGroup::ClipAdapter), drop(dropout) {}

ad::Var FeatureMapper::operator()(const ad::Var& x, nn::Ctx ctx) const {
  ad::Var h = ad::tanh(map(x));
  if (ctx.training && ctx.rng) h = ad::dropout(h, drop, *ctx.rng, true);
  return h;
}

AttentionRefiner::AttentionRefiner(nn::ParamStore& ps, const std::string& prefix, int dim,
                                   int heads)
    : mha(ps, prefix + ".mha", dim, heads) {
  ln_gamma = ps.create(prefix + ".ln.gamma", {dim}, nn::ParamGroup::Attention,
                       nn::Init::constant(1.0));
  ln_beta = ps.create(prefix + ".ln.beta", {dim}, nn::ParamGroup::Attention, nn::Init::zero());
}

ad::Var AttentionRefiner::operator()(const ad::Var& f_combined) const {
  const int S = f_combined.shape()[0];
  const ad::Var tok = ad::reshape(f_combined, {1, S});
  const ad::Var refined = ad::layer_norm_rows(ad::add(tok, mha(tok)), ln_gamma, ln_beta);
  return ad::reshape(refined, {S});
}

SemanticSpatialAttention::SemanticSpatialAttention(nn::ParamStore& ps, const std::string& prefix,
                                                   int decoder_channels, int semantic_dim,
                                                   int hidden) {
  reduce = nn::Conv3d(ps, prefix + ".reduce", decoder_channels, hidden, {1, 1, 1}, {1, 1, 1},
                      {0, 0, 0}, nn::ParamGroup::Attention);
  context = nn::Linear(ps, prefix + ".context", semantic_dim, hidden, nn::ParamGroup::Attention);
  conv = nn::Conv3d(ps, prefix + ".conv", hidden, 1, {3, 3, 3}, {1, 1, 1}, {1, 1, 1},
                    nn::ParamGroup::Attention);
}

ad::Var SemanticSpatialAttention::attention_map(const ad::Var& decoder_features,
                                                const ad::Var& f_fused) const {
  const auto& s = decoder_features.shape();
  const ad::Var ctx = ad::broadcast_to_volume(context(f_fused), s[1], s[2], s[3]);
  const ad::Var h = ad::relu(ad::add(reduce(decoder_features), ctx));
  return ad::sigmoid(conv(h));
}

ad::Var SemanticSpatialAttention::operator()(const ad::Var& y_base,
                                             const ad::Var& decoder_features,
                                             const ad::Var& f_fused, double blend) const {
  if (y_base.shape().size() != 4 || y_base.shape()[0] != 1 ||
      y_base.shape()[1] != decoder_features.shape()[1] ||
      y_base.shape()[2] != decoder_features.shape()[2] ||
      y_base.shape()[3] != decoder_features.shape()[3])
    throw std::invalid_argument("semantic_spatial_attention: spatial misalignment");
  ad::Var a = attention_map(decoder_features, f_fused);
  if (blend < 1.0) a = ad::add_scalar(ad::scale(a, blend), 1.0 - blend);
  return ad::mul(y_base, a);
}

SemanticPath::SemanticPath(nn::ParamStore& ps, SemanticConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.bridge == BridgeMode::Learned) {
    slice_conv1_ = nn::Conv3d(ps, "semantic.slice_net.conv1", 4, cfg_.slice_hidden, {1, 3, 3},
                              {1, 1, 1}, {0, 1, 1}, nn::ParamGroup::ClipAdapter);
    slice_conv2_ = nn::Conv3d(ps, "semantic.slice_net.conv2", cfg_.slice_hidden, 3, {1, 3, 3},
                              {1, 1, 1}, {0, 1, 1}, nn::ParamGroup::ClipAdapter);
  }
  vision_mapper_ = FeatureMapper(ps, "semantic.vision_mapper", cfg_.embed_dim, cfg_.shared_dim,
                                 cfg_.mapper_dropout);
  text_mapper_ = FeatureMapper(ps, "semantic.text_mapper", cfg_.embed_dim, cfg_.shared_dim,
                               cfg_.mapper_dropout);
  refiner_ = AttentionRefiner(ps, "semantic.refiner", cfg_.shared_dim, cfg_.attention_heads);
  switch (cfg_.encoder_kind) {
    case EncoderKind::Toy:
      encoder_ = make_toy_encoder(cfg_.encoder_seed, cfg_.embed_dim);
      break;
    case EncoderKind::File:
      encoder_ = make_file_encoder(cfg_.encoder_checkpoint,
                                   cfg_.encoder_trainable ? &ps : nullptr);
      break;
  }
  if (encoder_->dim() != cfg_.embed_dim)
    throw ConfigError("semantic: encoder dim does not match embed_dim");
}

ad::Var SemanticPath::slice_to_image(const Tensor& slice, nn::Ctx) const {
  if (slice.rank() != 3) throw std::invalid_argument("slice_to_image: expected (C,h,w)");
  const int C = slice.dim(0), h = slice.dim(1), w = slice.dim(2);
  ad::Var x = ad::Var::leaf(slice);
  ad::Var img3;
  if (cfg_.bridge == BridgeMode::Learned) {
    ad::Var t = ad::reshape(x, {C, 1, h, w});
    t = ad::relu(slice_conv1_(t));
    t = slice_conv2_(t);
    img3 = ad::reshape(t, {3, h, w});
  } else {
    // Traditional 3D-2D bridging: modality-mean grayscale replicated to RGB,
    // no learned enhancement.
    const ad::Var m = ad::channel_mean(ad::reshape(x, {C, 1, h, w}));
    img3 = ad::reshape(ad::concat_channels({m, m, m}), {3, h, w});
  }
  return ad::resize_bilinear2d(img3, cfg_.image_size, cfg_.image_size);
}

SemanticFeatures SemanticPath::compute(const Tensor& case_tensor, const std::string& description,
                                       bool guidance, nn::Ctx ctx) const {
  const auto slices = extract_canonical_slices(case_tensor);
  std::array<ad::Var, 3> view_feats;
  for (std::size_t i = 0; i < slices.size(); ++i)
    view_feats[i] = encoder_->encode_image(slice_to_image(slices[i], ctx));

  SemanticFeatures out;
  out.f_3d = fuse_views(view_feats[0], view_feats[1], view_feats[2]);
  out.f_vision_mapped = vision_mapper_(out.f_3d, ctx);
  if (guidance) {
    out.f_text_mapped = text_mapper_(encoder_->encode_text(description), ctx);
    auto [g, combined] = gated_fuse(out.f_vision_mapped, out.f_text_mapped);
    out.g_text = g;
    out.f_combined = combined;
  } else {
    out.f_combined = out.f_vision_mapped;
  }
  out.f_fused = refiner_(out.f_combined);
  return out;
}

}  // namespace trifuse
