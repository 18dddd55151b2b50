#include "inbiased/shape_extraction.hpp"

#include "inbiased/error.hpp"

#include <cmath>
#include <limits>

namespace inbiased {

void ShapeExtractorConfig::validate() const {
  if (upsample_factor < 1) throw InvalidArgument("upsample_factor must be >= 1");
  if (blur_kernel < 1 || blur_kernel % 2 == 0) throw InvalidArgument("blur_kernel must be a positive odd integer");
  if (!(blur_sigma > 0.0) || !std::isfinite(blur_sigma)) throw InvalidArgument("blur_sigma must be positive");
}

namespace imaging {
namespace {

inline Index reflect101(Index i, Index n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
  return i;
}

struct Tap {
  Index lo;
  Index hi;
  double weight;  // of hi
};

std::vector<Tap> linear_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<Index>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const Index hi = std::min<Index>(lo + 1, in - 1);
    taps[static_cast<std::size_t>(o)] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

template <typename Scalar>
RowMatrix<Scalar> resize_bilinear(const Eigen::Ref<const RowMatrix<Scalar>>& image, int out_height, int out_width) {
  const auto rows = linear_taps(static_cast<int>(image.rows()), out_height);
  const auto cols = linear_taps(static_cast<int>(image.cols()), out_width);
  // horizontal pass, then vertical; a + w (b - a) keeps constants exact
  RowMatrix<Scalar> horizontal(image.rows(), out_width);
  for (Index x = 0; x < out_width; ++x) {
    const auto& t = cols[static_cast<std::size_t>(x)];
    const auto w = static_cast<Scalar>(t.weight);
    horizontal.col(x) = image.col(t.lo) + w * (image.col(t.hi) - image.col(t.lo));
  }
  RowMatrix<Scalar> out(out_height, out_width);
  for (Index y = 0; y < out_height; ++y) {
    const auto& t = rows[static_cast<std::size_t>(y)];
    const auto w = static_cast<Scalar>(t.weight);
    out.row(y) = horizontal.row(t.lo) + w * (horizontal.row(t.hi) - horizontal.row(t.lo));
  }
  return out;
}

std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> taps(static_cast<std::size_t>(size));
  const int r = size / 2;
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    const double v = std::exp(-(i * i) / (2.0 * sigma * sigma));
    taps[static_cast<std::size_t>(i + r)] = v;
    sum += v;
  }
  for (auto& v : taps) v /= sum;
  return taps;
}

template <typename Scalar>
std::pair<RowMatrix<Scalar>, RowMatrix<Scalar>> sobel_gradients(const Eigen::Ref<const RowMatrix<Scalar>>& image) {
  const Index h = image.rows();
  const Index w = image.cols();
  RowMatrix<Scalar> dx(h, w);
  RowMatrix<Scalar> dy(h, w);
  // Convolution with G_x / G_y written as weighted differences of mirrored
  // taps, so flat regions give exactly zero.
  for (Index y = 0; y < h; ++y) {
    const Index up = reflect101(y - 1, h);
    const Index down = reflect101(y + 1, h);
    for (Index x = 0; x < w; ++x) {
      const Index left = reflect101(x - 1, w);
      const Index right = reflect101(x + 1, w);
      dx(y, x) = (image(up, left) - image(up, right)) + Scalar(2) * (image(y, left) - image(y, right)) +
                 (image(down, left) - image(down, right));
      dy(y, x) = (image(up, left) - image(down, left)) + Scalar(2) * (image(up, x) - image(down, x)) +
                 (image(up, right) - image(down, right));
    }
  }
  return {std::move(dx), std::move(dy)};
}

template <typename Scalar>
RowMatrix<Scalar> gaussian_blur(const Eigen::Ref<const RowMatrix<Scalar>>& image, int size, double sigma) {
  const auto taps = gaussian_taps(size, sigma);
  const int r = size / 2;
  const Index h = image.rows();
  const Index w = image.cols();
  RowMatrix<Scalar> horizontal(h, w);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      Scalar acc = 0;
      for (int k = -r; k <= r; ++k) acc += static_cast<Scalar>(taps[static_cast<std::size_t>(k + r)]) * image(y, reflect101(x + k, w));
      horizontal(y, x) = acc;
    }
  }
  RowMatrix<Scalar> out(h, w);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      Scalar acc = 0;
      for (int k = -r; k <= r; ++k) acc += static_cast<Scalar>(taps[static_cast<std::size_t>(k + r)]) * horizontal(reflect101(y + k, h), x);
      out(y, x) = acc;
    }
  }
  return out;
}

template <typename Scalar>
RowMatrix<Scalar> luminance(const Tensor<Scalar>& images, Index sample) {
  if (images.dims.channels == 1) return images.plane(sample, 0);
  if (images.dims.channels != 3) throw ShapeError("luminance expects 1 or 3 channels, got " + to_string(images.dims));
  return Scalar(0.299) * images.plane(sample, 0) + Scalar(0.587) * images.plane(sample, 1) +
         Scalar(0.114) * images.plane(sample, 2);
}

}  // namespace imaging

template <typename Scalar>
Tensor<Scalar> extract_shape(const Tensor<Scalar>& images, const ShapeExtractorConfig& cfg) {
  cfg.validate();
  const Dims in = images.dims;
  if (in.channels != 1 && in.channels != 3) throw ShapeError("extract_shape expects 1 or 3 channels, got " + to_string(in));
  if (in.height < 3 || in.width < 3) throw ShapeError("extract_shape needs spatial dims >= 3, got " + to_string(in));
  if (in.height < cfg.blur_kernel || in.width < cfg.blur_kernel) {
    throw ShapeError("image " + to_string(in) + " is smaller than the blur kernel");
  }
  if (!images.values.allFinite()) throw InvalidArgument("extract_shape: non-finite pixel values");

  const int channels_out = cfg.output_channels == ShapeChannels::replicate3 ? 3 : 1;
  Tensor<Scalar> out(images.batch(), Dims{channels_out, in.height, in.width});
  const int up_h = in.height * cfg.upsample_factor;
  const int up_w = in.width * cfg.upsample_factor;
  const auto tiny = std::numeric_limits<Scalar>::epsilon() * Scalar(64);

  for (Index i = 0; i < images.batch(); ++i) {
    const RowMatrix<Scalar> gray = imaging::luminance(images, i);
    const RowMatrix<Scalar> upsampled = cfg.upsample_factor == 1 ? gray : imaging::resize_bilinear<Scalar>(gray, up_h, up_w);
    const RowMatrix<Scalar> blurred = imaging::gaussian_blur<Scalar>(upsampled, cfg.blur_kernel, cfg.blur_sigma);
    const auto [dx, dy] = imaging::sobel_gradients<Scalar>(blurred);
    const RowMatrix<Scalar> magnitude = (dx.array().square() + dy.array().square()).sqrt().matrix();
    RowMatrix<Scalar> shape =
        cfg.upsample_factor == 1 ? magnitude : imaging::resize_bilinear<Scalar>(magnitude, in.height, in.width);
    const Scalar peak = shape.maxCoeff();
    if (peak <= tiny) {
      shape.setZero();
    } else {
      shape /= peak;
    }
    for (int c = 0; c < channels_out; ++c) out.plane(i, c) = shape;
  }
  return out;
}

template <typename Scalar>
ImageBatch<Scalar> extract_shape(const ImageBatch<Scalar>& batch, const ShapeExtractorConfig& cfg) {
  return {extract_shape(batch.images, cfg), batch.labels, batch.groups};
}

#define INBIASED_INSTANTIATE(S)                                                                                    \
  template Tensor<S> extract_shape(const Tensor<S>&, const ShapeExtractorConfig&);                                \
  template ImageBatch<S> extract_shape(const ImageBatch<S>&, const ShapeExtractorConfig&);                        \
  template RowMatrix<S> imaging::resize_bilinear<S>(const Eigen::Ref<const RowMatrix<S>>&, int, int);             \
  template std::pair<RowMatrix<S>, RowMatrix<S>> imaging::sobel_gradients<S>(const Eigen::Ref<const RowMatrix<S>>&); \
  template RowMatrix<S> imaging::gaussian_blur<S>(const Eigen::Ref<const RowMatrix<S>>&, int, double);            \
  template RowMatrix<S> imaging::luminance<S>(const Tensor<S>&, Index);
INBIASED_INSTANTIATE(float)
INBIASED_INSTANTIATE(double)
#undef INBIASED_INSTANTIATE

}  // namespace inbiased
