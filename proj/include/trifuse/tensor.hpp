#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "trifuse/common.hpp"

namespace trifuse {

// Dense n-d array in C order (last index fastest), backed by an Eigen array.
// Rank is dynamic; the network uses (C,D,H,W), vectors use rank 1.
template <typename Scalar>
class TensorT {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  TensorT() = default;
  explicit TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.setZero(count(shape_));
  }
  TensorT(std::vector<int> shape, Scalar fill) : shape_(std::move(shape)) {
    data_.setConstant(count(shape_), fill);
  }

  static TensorT zeros(std::vector<int> shape) { return TensorT(std::move(shape)); }
  static TensorT full(std::vector<int> shape, Scalar v) { return TensorT(std::move(shape), v); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Storage& array() { return data_; }
  const Storage& array() const { return data_; }

  Scalar& operator[](std::int64_t i) { return data_[i]; }
  Scalar operator[](std::int64_t i) const { return data_[i]; }

  Scalar& operator()(int i) { return data_[i]; }
  Scalar operator()(int i) const { return data_[i]; }
  Scalar& operator()(int i, int j) { return data_[static_cast<std::int64_t>(i) * shape_[1] + j]; }
  Scalar operator()(int i, int j) const { return data_[static_cast<std::int64_t>(i) * shape_[1] + j]; }
  Scalar& operator()(int i, int j, int k) {
    return data_[(static_cast<std::int64_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  Scalar operator()(int i, int j, int k) const {
    return data_[(static_cast<std::int64_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  Scalar& operator()(int i, int j, int k, int l) {
    return data_[((static_cast<std::int64_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  Scalar operator()(int i, int j, int k, int l) const {
    return data_[((static_cast<std::int64_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  void fill(Scalar v) { data_.setConstant(v); }
  void set_zero() { data_.setZero(); }

  bool all_finite() const { return data_.isFinite().all(); }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  static std::int64_t count(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

  static std::string shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
  }
  std::string shape_string() const { return shape_string(shape_); }

 private:
  std::vector<int> shape_;
  Storage data_;
};

using Tensor = TensorT<double>;

template <typename Scalar>
void check_same_shape(const TensorT<Scalar>& a, const TensorT<Scalar>& b, const char* what) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_string() +
                                " vs " + b.shape_string());
}

}  // namespace trifuse
