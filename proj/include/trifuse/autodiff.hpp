#pragma once

#include <array>
#include <functional>
#include <memory>
#include <vector>

#include "trifuse/common.hpp"
#include "trifuse/tensor.hpp"

namespace trifuse::ad {

// Reverse-mode autodiff over dense tensors. Each op builds a node whose
// closure scatters the node's gradient into its parents. Graphs are built
// per forward pass; parameters are long-lived leaf nodes.

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad() {
    if (grad.size() != value.size()) grad = Tensor(value.shape());
    return grad;
  }
};

using NodePtr = std::shared_ptr<Node>;

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : node_(std::move(n)) {}

  static Var leaf(Tensor value, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  Tensor& grad() { return node_->ensure_grad(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::vector<int>& shape() const { return node_->value.shape(); }
  double scalar() const { return node_->value[0]; }
  const NodePtr& node() const { return node_; }

  void zero_grad() {
    if (node_ && node_->grad.size()) node_->grad.set_zero();
  }

  // Reverse pass from a scalar-valued node.
  void backward() const;

 private:
  NodePtr node_;
};

bool grad_enabled();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// --- elementwise & arithmetic ---
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

// --- reductions ---
Var sum(const Var& a);
Var mean(const Var& a);

// --- shape ---
Var reshape(const Var& a, std::vector<int> shape);
Var concat_channels(const std::vector<Var>& xs);           // (Ci,D,H,W) -> (sum Ci,D,H,W)
Var slice_channels(const Var& x, int first, int count);    // (C,D,H,W) -> (count,D,H,W)
Var broadcast_to_volume(const Var& v, int d, int h, int w); // (S) -> (S,d,h,w)

// --- broadcasting products over a feature map ---
Var mul_channels(const Var& x, const Var& g);     // g: (C), scales each channel
Var mul_spatial(const Var& x, const Var& a);      // a: (1,D,H,W), scales each voxel
Var affine_channels(const Var& x, const Var& s, const Var& t);  // x*s+t per channel

// --- linear algebra ---
Var matmul(const Var& a, const Var& b);                     // (M,K)x(K,N)
Var transpose(const Var& a);                                // (M,N) -> (N,M)
Var linear(const Var& x, const Var& w, const Var& b);       // w:(M,N), x:(N) -> (M)
Var linear_rows(const Var& x, const Var& w, const Var& b);  // x:(L,N) -> (L,M)
Var slice_cols(const Var& x, int first, int count);         // (L,N) -> (L,count)
Var concat_cols(const std::vector<Var>& xs);
Var softmax_rows(const Var& x);
Var l2_normalize(const Var& x);

// --- normalization ---
Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-8);

// --- convolution & resampling ---
Var conv3d(const Var& x, const Var& w, const Var& b, std::array<int, 3> stride = {1, 1, 1},
           std::array<int, 3> pad = {1, 1, 1});
Var upsample_trilinear2x(const Var& x);
Var resize_bilinear2d(const Var& x, int out_h, int out_w);  // x: (C,H,W)
Var avg_pool2d(const Var& x, int k);                        // x: (C,H,W), stride = k

// --- pooling over a feature map ---
Var global_avg_pool(const Var& x);  // (C,D,H,W) -> (C)
Var global_max_pool(const Var& x);  // (C,D,H,W) -> (C)
Var channel_mean(const Var& x);     // (C,D,H,W) -> (1,D,H,W)
Var channel_max(const Var& x);      // (C,D,H,W) -> (1,D,H,W)

// --- stochastic / losses ---
Var dropout(const Var& x, double p, rng_t& rng, bool training);
Var bce_mean(const Var& probs, const Tensor& targets, double eps = 1e-12);
Var cross_entropy_logits(const Var& logits, int target);

}  // namespace trifuse::ad
