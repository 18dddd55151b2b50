#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace inbiased {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

/// Per-sample layout of a channel-first image or feature map.
struct Dims {
  int channels = 1;
  int height = 1;
  int width = 1;

  [[nodiscard]] Index size() const { return Index{channels} * height * width; }
  [[nodiscard]] Index plane() const { return Index{height} * width; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

std::string to_string(const Dims& dims);

/// A batch of samples stored one per row. Each row is a channel-first
/// flattening (c, y, x) of one sample, so `values` is N x (C*H*W).
template <typename Scalar>
struct Tensor {
  RowMatrix<Scalar> values;
  Dims dims;

  Tensor() = default;
  Tensor(RowMatrix<Scalar> v, Dims d) : values(std::move(v)), dims(d) {}
  Tensor(Index batch, Dims d) : values(RowMatrix<Scalar>::Zero(batch, d.size())), dims(d) {}

  [[nodiscard]] Index batch() const { return values.rows(); }

  /// Sample `i` viewed as a (channels x H*W) matrix.
  [[nodiscard]] Eigen::Map<RowMatrix<Scalar>> sample(Index i) {
    return {values.row(i).data(), dims.channels, dims.plane()};
  }
  [[nodiscard]] Eigen::Map<const RowMatrix<Scalar>> sample(Index i) const {
    return {values.row(i).data(), dims.channels, dims.plane()};
  }

  /// Channel `c` of sample `i` viewed as an (H x W) image.
  [[nodiscard]] Eigen::Map<RowMatrix<Scalar>> plane(Index i, int c) {
    return {values.row(i).data() + c * dims.plane(), dims.height, dims.width};
  }
  [[nodiscard]] Eigen::Map<const RowMatrix<Scalar>> plane(Index i, int c) const {
    return {values.row(i).data() + c * dims.plane(), dims.height, dims.width};
  }

  template <typename Other>
  [[nodiscard]] Tensor<Other> cast() const {
    return {values.template cast<Other>(), dims};
  }
};

/// Group tags attached to samples of datasets that report per-group accuracy.
enum class Group : std::int8_t { none = -1, blond_female = 0, nonblond_male = 1, blond_male = 2, nonblond_female = 3 };

/// Labeled images with pixel values in [0,1].
template <typename Scalar>
struct ImageBatch {
  Tensor<Scalar> images;
  std::vector<int> labels;
  std::vector<Group> groups;  // empty unless the source dataset is grouped

  [[nodiscard]] Index size() const { return images.batch(); }

  template <typename Other>
  [[nodiscard]] ImageBatch<Other> cast() const {
    return {images.template cast<Other>(), labels, groups};
  }
};

/// Rows `indices` of a batch, in the given order.
template <typename Scalar>
ImageBatch<Scalar> gather(const ImageBatch<Scalar>& batch, const std::vector<Index>& indices);

template <typename Scalar>
Tensor<Scalar> gather(const Tensor<Scalar>& tensor, const std::vector<Index>& indices);

/// True when every entry is finite.
template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace inbiased
