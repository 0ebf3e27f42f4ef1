#include "trifuse/nn.hpp"

#include <cmath>

namespace trifuse::nn {

const char* param_group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::EncoderDecoder: return "encoder_decoder";
    case ParamGroup::ClipAdapter: return "clip_adapter";
    case ParamGroup::Attention: return "attention";
    case ParamGroup::Head: return "head";
  }
  return "?";
}

ad::Var ParamStore::create(const std::string& name, std::vector<int> shape, ParamGroup group,
                           Init init) {
  if (find(name)) throw std::invalid_argument("parameter '" + name + "' already registered");
  Tensor t(shape);
  rng_t rng = make_rng(seed_, name);
  switch (init.kind) {
    case Init::Zero:
      break;
    case Init::Constant:
      t.fill(init.value);
      break;
    case Init::KaimingNormal: {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / init.fan_in));
      for (std::int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
      break;
    }
    case Init::XavierUniform: {
      const double limit = std::sqrt(6.0 / (init.fan_in + init.fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (std::int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
      break;
    }
  }
  ad::Var v = ad::Var::leaf(std::move(t), true);
  entries_.push_back({name, v, group});
  return v;
}

const ParamStore::Entry* ParamStore::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

ParamStore::Entry* ParamStore::find(const std::string& name) {
  for (auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.var.zero_grad();
}

std::int64_t ParamStore::total_params() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += e.var.value().size();
  return n;
}

std::int64_t ParamStore::group_params(ParamGroup g) const {
  std::int64_t n = 0;
  for (const auto& e : entries_)
    if (e.group == g) n += e.var.value().size();
  return n;
}

Conv3d::Conv3d(ParamStore& ps, const std::string& prefix, int cin, int cout,
               std::array<int, 3> kernel, std::array<int, 3> stride_, std::array<int, 3> pad_,
               ParamGroup group)
    : stride(stride_), pad(pad_) {
  if (cin < 1 || cout < 1) throw ConfigError("conv: channel counts must be positive");
  const double fan_in = static_cast<double>(cin) * kernel[0] * kernel[1] * kernel[2];
  w = ps.create(prefix + ".weight", {cout, cin, kernel[0], kernel[1], kernel[2]}, group,
                Init::kaiming(fan_in));
  b = ps.create(prefix + ".bias", {cout}, group, Init::zero());
}

InstanceNorm::InstanceNorm(ParamStore& ps, const std::string& prefix, int channels,
                           ParamGroup group) {
  gamma = ps.create(prefix + ".gamma", {channels}, group, Init::constant(1.0));
  beta = ps.create(prefix + ".beta", {channels}, group, Init::zero());
}

Linear::Linear(ParamStore& ps, const std::string& prefix, int in, int out, ParamGroup group) {
  w = ps.create(prefix + ".weight", {out, in}, group, Init::xavier(in, out));
  b = ps.create(prefix + ".bias", {out}, group, Init::zero());
}

ChannelAttention::ChannelAttention(ParamStore& ps, const std::string& prefix, int channels,
                                   int reduction) {
  const int hidden = std::max(1, channels / reduction);
  fc1 = Linear(ps, prefix + ".fc1", channels, hidden, ParamGroup::Attention);
  fc2 = Linear(ps, prefix + ".fc2", hidden, channels, ParamGroup::Attention);
}

ad::Var ChannelAttention::gate(const ad::Var& x) const {
  const ad::Var avg = fc2(ad::relu(fc1(ad::global_avg_pool(x))));
  const ad::Var mx = fc2(ad::relu(fc1(ad::global_max_pool(x))));
  return ad::sigmoid(ad::add(avg, mx));
}

ad::Var ChannelAttention::operator()(const ad::Var& x) const {
  return ad::mul_channels(x, gate(x));
}

SpatialAttention::SpatialAttention(ParamStore& ps, const std::string& prefix, int kernel) {
  const int p = kernel / 2;
  conv = Conv3d(ps, prefix + ".conv", 2, 1, {kernel, kernel, kernel}, {1, 1, 1}, {p, p, p},
                ParamGroup::Attention);
}

ad::Var SpatialAttention::map(const ad::Var& x) const {
  const ad::Var stacked = ad::concat_channels({ad::channel_mean(x), ad::channel_max(x)});
  return ad::sigmoid(conv(stacked));
}

ad::Var SpatialAttention::operator()(const ad::Var& x) const {
  return ad::mul_spatial(x, map(x));
}

Cbam::Cbam(ParamStore& ps, const std::string& prefix, int channels, int reduction,
           int spatial_kernel)
    : channel(ps, prefix + ".channel", channels, reduction),
      spatial(ps, prefix + ".spatial", spatial_kernel) {}

ResidualBlock::ResidualBlock(ParamStore& ps, const std::string& prefix, int cin, int cout,
                             std::array<int, 3> kernel, bool with_cbam, int cbam_reduction,
                             int spatial_kernel)
    : use_cbam(with_cbam) {
  const std::array<int, 3> pad{kernel[0] / 2, kernel[1] / 2, kernel[2] / 2};
  norm1 = InstanceNorm(ps, prefix + ".norm1", cin, ParamGroup::EncoderDecoder);
  conv1 = Conv3d(ps, prefix + ".conv1", cin, cout, kernel, {1, 1, 1}, pad,
                 ParamGroup::EncoderDecoder);
  norm2 = InstanceNorm(ps, prefix + ".norm2", cout, ParamGroup::EncoderDecoder);
  conv2 = Conv3d(ps, prefix + ".conv2", cout, cout, kernel, {1, 1, 1}, pad,
                 ParamGroup::EncoderDecoder);
  if (cin != cout) {
    has_proj = true;
    proj = Conv3d(ps, prefix + ".proj", cin, cout, {1, 1, 1}, {1, 1, 1}, {0, 0, 0},
                  ParamGroup::EncoderDecoder);
  }
  if (with_cbam) cbam = Cbam(ps, prefix + ".cbam", cout, cbam_reduction, spatial_kernel);
}

ad::Var ResidualBlock::operator()(const ad::Var& x) const {
  ad::Var h = conv1(ad::relu(norm1(x)));
  h = conv2(ad::relu(norm2(h)));
  if (use_cbam) h = cbam(h);
  const ad::Var shortcut = has_proj ? proj(x) : x;
  return ad::add(shortcut, h);
}

AttentionGate::AttentionGate(ParamStore& ps, const std::string& prefix, int skip_channels,
                             int gate_channels, int inter_channels) {
  theta = Conv3d(ps, prefix + ".theta", skip_channels, inter_channels, {1, 1, 1}, {1, 1, 1},
                 {0, 0, 0}, ParamGroup::Attention);
  phi = Conv3d(ps, prefix + ".phi", gate_channels, inter_channels, {1, 1, 1}, {1, 1, 1}, {0, 0, 0},
               ParamGroup::Attention);
  psi = Conv3d(ps, prefix + ".psi", inter_channels, 1, {1, 1, 1}, {1, 1, 1}, {0, 0, 0},
               ParamGroup::Attention);
}

ad::Var AttentionGate::alpha(const ad::Var& skip, const ad::Var& gating) const {
  const ad::Var g_up = ad::upsample_trilinear2x(gating);
  if (g_up.shape()[1] != skip.shape()[1] || g_up.shape()[2] != skip.shape()[2] ||
      g_up.shape()[3] != skip.shape()[3])
    throw std::invalid_argument("attention_gate: gating does not upsample to skip shape");
  return ad::sigmoid(psi(ad::relu(ad::add(theta(skip), phi(g_up)))));
}

ad::Var AttentionGate::operator()(const ad::Var& skip, const ad::Var& gating) const {
  return ad::mul_spatial(skip, alpha(skip, gating));
}

MultiHeadSelfAttention::MultiHeadSelfAttention(ParamStore& ps, const std::string& prefix, int dim_,
                                               int heads_)
    : heads(heads_), dim(dim_) {
  if (dim % heads != 0) throw ConfigError("multihead: dim must divide heads");
  wq = Linear(ps, prefix + ".wq", dim, dim, ParamGroup::Attention);
  wk = Linear(ps, prefix + ".wk", dim, dim, ParamGroup::Attention);
  wv = Linear(ps, prefix + ".wv", dim, dim, ParamGroup::Attention);
  wo = Linear(ps, prefix + ".wo", dim, dim, ParamGroup::Attention);
}

ad::Var MultiHeadSelfAttention::operator()(const ad::Var& x) const {
  const int d = dim / heads;
  const ad::Var q = wq.rows(x), k = wk.rows(x), v = wv.rows(x);
  std::vector<ad::Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (int h = 0; h < heads; ++h) {
    const ad::Var qh = ad::slice_cols(q, h * d, d);
    const ad::Var kh = ad::slice_cols(k, h * d, d);
    const ad::Var vh = ad::slice_cols(v, h * d, d);
    const ad::Var attn =
        ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt_d));
    outs.push_back(ad::matmul(attn, vh));
  }
  return wo.rows(ad::concat_cols(outs));
}

}  // namespace trifuse::nn
