#pragma once

#include "inbiased/tensor.hpp"

#include <array>
#include <utility>

namespace inbiased {

enum class Interpolation { bilinear };
enum class ShapeChannels { replicate3, single };

struct ShapeExtractorConfig {
  int upsample_factor = 2;
  int blur_kernel = 3;  // odd
  double blur_sigma = 0.8;
  Interpolation interpolation = Interpolation::bilinear;
  ShapeChannels output_channels = ShapeChannels::replicate3;

  /// Throws InvalidArgument when an invariant is violated.
  void validate() const;
};

/// Horizontal derivative kernel (responds to vertical edges).
inline constexpr std::array<std::array<int, 3>, 3> kSobelX{{{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}}};
/// Vertical derivative kernel.
inline constexpr std::array<std::array<int, 3>, 3> kSobelY{{{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}}};

/// Sobel edge-magnitude images of an RGB (or grayscale) batch:
///   upsample -> gaussian blur -> G_x, G_y convolution -> magnitude
///   -> downsample to the input size -> per-image max normalization.
/// Output pixels lie in [0,1] and are exactly zero for constant images.
template <typename Scalar>
Tensor<Scalar> extract_shape(const Tensor<Scalar>& images, const ShapeExtractorConfig& cfg);

/// Same as above; labels and groups pass through unchanged.
template <typename Scalar>
ImageBatch<Scalar> extract_shape(const ImageBatch<Scalar>& batch, const ShapeExtractorConfig& cfg);

namespace imaging {

/// Bilinear resampling with half-pixel centers (align_corners = false).
template <typename Scalar>
RowMatrix<Scalar> resize_bilinear(const Eigen::Ref<const RowMatrix<Scalar>>& image, int out_height, int out_width);

/// Normalized 1-D gaussian taps of odd length `size`.
std::vector<double> gaussian_taps(int size, double sigma);

/// (image * G_x, image * G_y) with reflect-101 borders.
template <typename Scalar>
std::pair<RowMatrix<Scalar>, RowMatrix<Scalar>> sobel_gradients(const Eigen::Ref<const RowMatrix<Scalar>>& image);

/// Separable gaussian blur with reflect-101 borders.
template <typename Scalar>
RowMatrix<Scalar> gaussian_blur(const Eigen::Ref<const RowMatrix<Scalar>>& image, int size, double sigma);

/// Luminance of a 3-channel sample (0.299, 0.587, 0.114); single-channel
/// samples are returned as-is.
template <typename Scalar>
RowMatrix<Scalar> luminance(const Tensor<Scalar>& images, Index sample);

}  // namespace imaging

}  // namespace inbiased
