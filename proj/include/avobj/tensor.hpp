#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <vector>

#include "avobj/common.hpp"

namespace avobj {

template <typename S>
using EigenMatrix =
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<EigenMatrix<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const EigenMatrix<S>>;
template <typename S>
using VecMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>;
template <typename S>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;

// Dense row-major tensor owning its storage. Scalar type selects the working
// precision of everything built on top.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(static_cast<std::size_t>(shape_size(shape_)), S(0)) {}

  Tensor(Shape shape, std::vector<S> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<Index>(data_.size()) != shape_size(shape_))
      throw config_error("tensor data size does not match shape " +
                         shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, S value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static Tensor scalar(S value) { return full({}, value); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_[static_cast<std::size_t>(i)]; }
  Index size() const { return static_cast<Index>(data_.size()); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::vector<S>& vec() { return data_; }
  const std::vector<S>& vec() const { return data_; }

  S& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  const S& operator[](Index i) const {
    return data_[static_cast<std::size_t>(i)];
  }

  template <typename... Ix>
  S& operator()(Ix... ix) {
    return data_[static_cast<std::size_t>(flat_index(ix...))];
  }
  template <typename... Ix>
  const S& operator()(Ix... ix) const {
    return data_[static_cast<std::size_t>(flat_index(ix...))];
  }

  // Row-major strides; stride of a size-1 trailing group is still defined.
  Shape strides() const {
    Shape st(shape_.size(), 1);
    for (Index i = rank() - 2; i >= 0; --i)
      st[static_cast<std::size_t>(i)] =
          st[static_cast<std::size_t>(i + 1)] * shape_[static_cast<std::size_t>(i + 1)];
    return st;
  }

  // Same data viewed under a new shape. Copies the buffer.
  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw config_error("reshape " + shape_str(shape_) + " -> " +
                         shape_str(shape) + " changes element count");
    return Tensor(std::move(shape), data_);
  }

  // Map as a rows x cols row-major matrix; rows*cols must equal size().
  MatMap<S> mat(Index rows, Index cols) {
    return MatMap<S>(data_.data(), rows, cols);
  }
  ConstMatMap<S> mat(Index rows, Index cols) const {
    return ConstMatMap<S>(data_.data(), rows, cols);
  }

  VecMap<S> flat() { return VecMap<S>(data_.data(), size()); }
  ConstVecMap<S> flat() const { return ConstVecMap<S>(data_.data(), size()); }

  bool all_finite() const {
    for (const S v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(shape_);
    for (Index i = 0; i < size(); ++i)
      out[i] = static_cast<T>(data_[static_cast<std::size_t>(i)]);
    return out;
  }

 private:
  template <typename... Ix>
  Index flat_index(Ix... ix) const {
    const Index idx[] = {static_cast<Index>(ix)...};
    constexpr Index n = sizeof...(Ix);
    Index flat = 0;
    for (Index i = 0; i < n; ++i)
      flat = flat * shape_[static_cast<std::size_t>(i)] + idx[i];
    return flat;
  }

  Shape shape_;
  std::vector<S> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace avobj
