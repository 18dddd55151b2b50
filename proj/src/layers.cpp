#include "inbiased/layers.hpp"

#include "inbiased/error.hpp"

#include <cmath>
#include <limits>

namespace inbiased {

namespace {

template <typename Scalar>
RowMatrix<Scalar> uniform_matrix(Index rows, Index cols, double bound, Rng& rng) {
  RowMatrix<Scalar> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
  return m;
}

template <typename Scalar>
RowMatrix<Scalar> normal_matrix(Index rows, Index cols, double stddev, Rng& rng) {
  RowMatrix<Scalar> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(stddev * rng.normal());
  return m;
}

}  // namespace

// ---------------------------------------------------------------- Linear

template <typename Scalar>
Linear<Scalar>::Linear(Index in, Index out, Rng& rng, bool with_bias) {
  // kaiming-uniform with a = sqrt(5): bound 1/sqrt(fan_in) for weight and bias
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = {"weight", uniform_matrix<Scalar>(out, in, bound, rng)};
  if (with_bias) bias = {"bias", uniform_matrix<Scalar>(1, out, bound, rng)};
}

template <typename Scalar>
Dims Linear<Scalar>::output_dims(const Dims& input) const {
  if (input.size() != weight.value.cols()) {
    throw ShapeError("linear expects " + std::to_string(weight.value.cols()) + " inputs, got " + to_string(input));
  }
  return {static_cast<int>(weight.value.rows()), 1, 1};
}

template <typename Scalar>
RowMatrix<Scalar> Linear<Scalar>::apply(const RowMatrix<Scalar>& x) const {
  if (x.cols() != weight.value.cols()) {
    throw ShapeError("linear expects " + std::to_string(weight.value.cols()) + " inputs, got " + std::to_string(x.cols()));
  }
  RowMatrix<Scalar> y(x.rows(), weight.value.rows());
  y.noalias() = x * weight.value.transpose();
  if (bias.value.size() > 0) y.rowwise() += bias.value.row(0);
  return y;
}

template <typename Scalar>
Tensor<Scalar> Linear<Scalar>::forward(const Tensor<Scalar>& x, Mode, Tape<Scalar>* tape) const {
  const Dims out = output_dims(x.dims);
  Tensor<Scalar> y(apply(x.values), out);
  if (tape) tape->push(x);
  return y;
}

template <typename Scalar>
Tensor<Scalar> Linear<Scalar>::backward(const Tensor<Scalar>& grad, Tape<Scalar>& tape) const {
  auto x = tape.template pop<Tensor<Scalar>>();
  if (auto* sink = tape.gradients()) {
    RowMatrix<Scalar> dw(weight.value.rows(), weight.value.cols());
    dw.noalias() = grad.values.transpose() * x.values;
    sink->accumulate(weight, dw);
    if (bias.value.size() > 0) {
      RowMatrix<Scalar> db = grad.values.colwise().sum();
      sink->accumulate(bias, db);
    }
  }
  Tensor<Scalar> dx;
  dx.dims = x.dims;
  dx.values.noalias() = grad.values * weight.value;
  return dx;
}

template <typename Scalar>
void Linear<Scalar>::collect_parameters(std::vector<Parameter<Scalar>*>& out) {
  out.push_back(&weight);
  if (bias.value.size() > 0) out.push_back(&bias);
}

// ---------------------------------------------------------------- Relu

template <typename Scalar>
Tensor<Scalar> Relu<Scalar>::forward(const Tensor<Scalar>& x, Mode, Tape<Scalar>* tape) const {
  Tensor<Scalar> y(x.values.cwiseMax(Scalar(0)), x.dims);
  if (tape) tape->push(y.values);
  return y;
}

template <typename Scalar>
Tensor<Scalar> Relu<Scalar>::backward(const Tensor<Scalar>& grad, Tape<Scalar>& tape) const {
  auto y = tape.template pop<RowMatrix<Scalar>>();
  return {(y.array() > Scalar(0)).select(grad.values, Scalar(0)), grad.dims};
}

// ---------------------------------------------------------------- Flatten

template <typename Scalar>
Tensor<Scalar> Flatten<Scalar>::forward(const Tensor<Scalar>& x, Mode, Tape<Scalar>* tape) const {
  if (tape) tape->push(x.dims);
  return {x.values, output_dims(x.dims)};
}

template <typename Scalar>
Tensor<Scalar> Flatten<Scalar>::backward(const Tensor<Scalar>& grad, Tape<Scalar>& tape) const {
  return {grad.values, tape.template pop<Dims>()};
}

// ---------------------------------------------------------------- Conv2d

template <typename Scalar>
Conv2d<Scalar>::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& rng)
    : in_channels_(in_channels), out_channels_(out_channels), kernel_(kernel), stride_(stride), padding_(padding) {
  // kaiming-normal, fan_out, relu gain
  const double stddev = std::sqrt(2.0 / (static_cast<double>(out_channels) * kernel * kernel));
  weight = {"weight", normal_matrix<Scalar>(out_channels, Index{in_channels} * kernel * kernel, stddev, rng)};
}

template <typename Scalar>
Dims Conv2d<Scalar>::output_dims(const Dims& input) const {
  if (input.channels != in_channels_) {
    throw ShapeError("conv2d expects " + std::to_string(in_channels_) + " channels, got " + to_string(input));
  }
  const int h = (input.height + 2 * padding_ - kernel_) / stride_ + 1;
  const int w = (input.width + 2 * padding_ - kernel_) / stride_ + 1;
  if (h < 1 || w < 1) throw ShapeError("conv2d input too small: " + to_string(input));
  return {out_channels_, h, w};
}

template <typename Scalar>
void Conv2d<Scalar>::im2col(const Scalar* image, const Dims& in, const Dims& out, RowMatrix<Scalar>& col) const {
  col.resize(Index{in.channels} * kernel_ * kernel_, out.plane());
  for (int c = 0; c < in.channels; ++c) {
    const Scalar* plane = image + c * in.plane();
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx) {
        Scalar* dst = col.row((Index{c} * kernel_ + ky) * kernel_ + kx).data();
        for (int oy = 0; oy < out.height; ++oy) {
          const int iy = oy * stride_ - padding_ + ky;
          Scalar* row = dst + Index{oy} * out.width;
          if (iy < 0 || iy >= in.height) {
            std::fill(row, row + out.width, Scalar(0));
            continue;
          }
          const Scalar* src = plane + Index{iy} * in.width;
          for (int ox = 0; ox < out.width; ++ox) {
            const int ix = ox * stride_ - padding_ + kx;
            row[ox] = (ix < 0 || ix >= in.width) ? Scalar(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename Scalar>
void Conv2d<Scalar>::col2im(const RowMatrix<Scalar>& col, const Dims& in, const Dims& out, Scalar* image) const {
  std::fill(image, image + in.size(), Scalar(0));
  for (int c = 0; c < in.channels; ++c) {
    Scalar* plane = image + c * in.plane();
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx) {
        const Scalar* src = col.row((Index{c} * kernel_ + ky) * kernel_ + kx).data();
        for (int oy = 0; oy < out.height; ++oy) {
          const int iy = oy * stride_ - padding_ + ky;
          if (iy < 0 || iy >= in.height) continue;
          Scalar* dst = plane + Index{iy} * in.width;
          const Scalar* row = src + Index{oy} * out.width;
          for (int ox = 0; ox < out.width; ++ox) {
            const int ix = ox * stride_ - padding_ + kx;
            if (ix >= 0 && ix < in.width) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

template <typename Scalar>
Tensor<Scalar> Conv2d<Scalar>::forward(const Tensor<Scalar>& x, Mode, Tape<Scalar>* tape) const {
  const Dims out = output_dims(x.dims);
  Tensor<Scalar> y(x.batch(), out);
  RowMatrix<Scalar> col;
  for (Index i = 0; i < x.batch(); ++i) {
    im2col(x.values.row(i).data(), x.dims, out, col);
    Eigen::Map<RowMatrix<Scalar>> dst(y.values.row(i).data(), out.channels, out.plane());
    dst.noalias() = weight.value * col;
  }
  if (tape) tape->push(x);
  return y;
}

template <typename Scalar>
Tensor<Scalar> Conv2d<Scalar>::backward(const Tensor<Scalar>& grad, Tape<Scalar>& tape) const {
  auto x = tape.template pop<Tensor<Scalar>>();
  const Dims out = grad.dims;
  Tensor<Scalar> dx(x.batch(), x.dims);
  auto* sink = tape.gradients();
  RowMatrix<Scalar> dw;
  if (sink) dw = RowMatrix<Scalar>::Zero(weight.value.rows(), weight.value.cols());
  RowMatrix<Scalar> col;
  RowMatrix<Scalar> dcol;
  for (Index i = 0; i < x.batch(); ++i) {
    Eigen::Map<const RowMatrix<Scalar>> g(grad.values.row(i).data(), out.channels, out.plane());
    if (sink) {
      im2col(x.values.row(i).data(), x.dims, out, col);
      dw.noalias() += g * col.transpose();
    }
    dcol.noalias() = weight.value.transpose() * g;
    col2im(dcol, x.dims, out, dx.values.row(i).data());
  }
  if (sink) sink->accumulate(weight, dw);
  return dx;
}

// ---------------------------------------------------------------- BatchNorm2d

namespace {

template <typename Scalar>
struct BatchNormRecord {
  RowMatrix<Scalar> normalized;  // x-hat
  Vector<Scalar> inv_std;
  bool batch_statistics = false;
};

}  // namespace

template <typename Scalar>
BatchNorm2d<Scalar>::BatchNorm2d(int channels, double momentum, double eps)
    : gamma{"gamma", RowMatrix<Scalar>::Ones(1, channels)},
      beta{"beta", RowMatrix<Scalar>::Zero(1, channels)},
      running_mean(RowMatrix<Scalar>::Zero(1, channels)),
      running_var(RowMatrix<Scalar>::Ones(1, channels)),
      channels_(channels),
      momentum_(momentum),
      eps_(eps) {}

template <typename Scalar>
Tensor<Scalar> BatchNorm2d<Scalar>::forward(const Tensor<Scalar>& x, Mode mode, Tape<Scalar>* tape) const {
  if (x.dims.channels != channels_) throw ShapeError("batchnorm channel mismatch: " + to_string(x.dims));
  const Index n = x.batch();
  const Index p = x.dims.plane();
  Vector<Scalar> mean(channels_);
  Vector<Scalar> var(channels_);
  const bool batch_stats = mode == Mode::train;
  if (batch_stats) {
    const auto count = static_cast<Scalar>(n * p);
    if (n * p < 2) throw ShapeError("batchnorm in train mode needs more than one value per channel");
    for (int c = 0; c < channels_; ++c) {
      Scalar s = 0;
      for (Index i = 0; i < n; ++i) s += x.values.row(i).segment(c * p, p).sum();
      mean(c) = s / count;
      Scalar v = 0;
      for (Index i = 0; i < n; ++i) v += (x.values.row(i).segment(c * p, p).array() - mean(c)).square().sum();
      var(c) = v / count;
    }
    const auto m = static_cast<Scalar>(momentum_);
    const Scalar unbias = count / (count - Scalar(1));
    running_mean = (Scalar(1) - m) * running_mean + m * mean.transpose();
    running_var = (Scalar(1) - m) * running_var + m * unbias * var.transpose();
  } else {
    mean = running_mean.row(0).transpose();
    var = running_var.row(0).transpose();
  }
  BatchNormRecord<Scalar> rec;
  rec.batch_statistics = batch_stats;
  rec.inv_std = (var.array() + static_cast<Scalar>(eps_)).rsqrt();
  rec.normalized.resize(n, x.values.cols());
  Tensor<Scalar> y(n, x.dims);
  for (Index i = 0; i < n; ++i) {
    for (int c = 0; c < channels_; ++c) {
      auto xhat = rec.normalized.row(i).segment(c * p, p);
      xhat = (x.values.row(i).segment(c * p, p).array() - mean(c)) * rec.inv_std(c);
      y.values.row(i).segment(c * p, p) = (xhat.array() * gamma.value(0, c) + beta.value(0, c)).matrix();
    }
  }
  if (tape) tape->push(std::move(rec));
  return y;
}

template <typename Scalar>
Tensor<Scalar> BatchNorm2d<Scalar>::backward(const Tensor<Scalar>& grad, Tape<Scalar>& tape) const {
  auto rec = tape.template pop<BatchNormRecord<Scalar>>();
  const Index n = grad.batch();
  const Index p = grad.dims.plane();
  const auto count = static_cast<Scalar>(n * p);
  RowMatrix<Scalar> dgamma = RowMatrix<Scalar>::Zero(1, channels_);
  RowMatrix<Scalar> dbeta = RowMatrix<Scalar>::Zero(1, channels_);
  for (int c = 0; c < channels_; ++c) {
    for (Index i = 0; i < n; ++i) {
      const auto g = grad.values.row(i).segment(c * p, p);
      dbeta(0, c) += g.sum();
      dgamma(0, c) += g.dot(rec.normalized.row(i).segment(c * p, p));
    }
  }
  Tensor<Scalar> dx(n, grad.dims);
  for (int c = 0; c < channels_; ++c) {
    const Scalar scale = gamma.value(0, c) * rec.inv_std(c);
    for (Index i = 0; i < n; ++i) {
      const auto g = grad.values.row(i).segment(c * p, p).array();
      if (rec.batch_statistics) {
        const auto xhat = rec.normalized.row(i).segment(c * p, p).array();
        dx.values.row(i).segment(c * p, p) =
            (scale * (g - dbeta(0, c) / count - xhat * dgamma(0, c) / count)).matrix();
      } else {
        dx.values.row(i).segment(c * p, p) = (scale * g).matrix();
      }
    }
  }
  if (auto* sink = tape.gradients()) {
    sink->accumulate(gamma, dgamma);
    sink->accumulate(beta, dbeta);
  }
  return dx;
}

template <typename Scalar>
void BatchNorm2d<Scalar>::collect_parameters(std::vector<Parameter<Scalar>*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

template <typename Scalar>
void BatchNorm2d<Scalar>::collect_buffers(std::vector<RowMatrix<Scalar>*>& out) {
  out.push_back(&running_mean);
  out.push_back(&running_var);
}

// ---------------------------------------------------------------- MaxPool2d

namespace {
struct PoolRecord {
  std::vector<Index> argmax;  // flat input offset per output element
  Dims input;
};
}  // namespace

template <typename Scalar>
Dims MaxPool2d<Scalar>::output_dims(const Dims& input) const {
  const int h = (input.height + 2 * padding_ - kernel_) / stride_ + 1;
  const int w = (input.width + 2 * padding_ - kernel_) / stride_ + 1;
  if (h < 1 || w < 1) throw ShapeError("maxpool input too small: " + to_string(input));
  return {input.channels, h, w};
}

template <typename Scalar>
Tensor<Scalar> MaxPool2d<Scalar>::forward(const Tensor<Scalar>& x, Mode, Tape<Scalar>* tape) const {
  const Dims in = x.dims;
  const Dims out = output_dims(in);
  Tensor<Scalar> y(x.batch(), out);
  PoolRecord rec{std::vector<Index>(static_cast<std::size_t>(x.batch() * out.size())), in};
  for (Index i = 0; i < x.batch(); ++i) {
    const Scalar* src = x.values.row(i).data();
    for (int c = 0; c < out.channels; ++c) {
      for (int oy = 0; oy < out.height; ++oy) {
        for (int ox = 0; ox < out.width; ++ox) {
          Scalar best = -std::numeric_limits<Scalar>::infinity();
          Index best_at = -1;
          for (int ky = 0; ky < kernel_; ++ky) {
            const int iy = oy * stride_ - padding_ + ky;
            if (iy < 0 || iy >= in.height) continue;
            for (int kx = 0; kx < kernel_; ++kx) {
              const int ix = ox * stride_ - padding_ + kx;
              if (ix < 0 || ix >= in.width) continue;
              const Index at = c * in.plane() + Index{iy} * in.width + ix;
              if (best_at < 0 || src[at] > best) {
                best = src[at];
                best_at = at;
              }
            }
          }
          const Index o = c * out.plane() + Index{oy} * out.width + ox;
          y.values(i, o) = best;
          rec.argmax[static_cast<std::size_t>(i * out.size() + o)] = best_at;
        }
      }
    }
  }
  if (tape) tape->push(std::move(rec));
  return y;
}

template <typename Scalar>
Tensor<Scalar> MaxPool2d<Scalar>::backward(const Tensor<Scalar>& grad, Tape<Scalar>& tape) const {
  auto rec = tape.template pop<PoolRecord>();
  Tensor<Scalar> dx(grad.batch(), rec.input);
  const Index per = grad.dims.size();
  for (Index i = 0; i < grad.batch(); ++i) {
    for (Index o = 0; o < per; ++o) dx.values(i, rec.argmax[static_cast<std::size_t>(i * per + o)]) += grad.values(i, o);
  }
  return dx;
}

// ---------------------------------------------------------------- GlobalAvgPool

template <typename Scalar>
Tensor<Scalar> GlobalAvgPool<Scalar>::forward(const Tensor<Scalar>& x, Mode, Tape<Scalar>* tape) const {
  const Dims out = output_dims(x.dims);
  Tensor<Scalar> y(x.batch(), out);
  const Index p = x.dims.plane();
  for (Index i = 0; i < x.batch(); ++i) {
    for (int c = 0; c < x.dims.channels; ++c) y.values(i, c) = x.values.row(i).segment(c * p, p).mean();
  }
  if (tape) tape->push(x.dims);
  return y;
}

template <typename Scalar>
Tensor<Scalar> GlobalAvgPool<Scalar>::backward(const Tensor<Scalar>& grad, Tape<Scalar>& tape) const {
  const auto in = tape.template pop<Dims>();
  Tensor<Scalar> dx(grad.batch(), in);
  const Index p = in.plane();
  const Scalar inv = Scalar(1) / static_cast<Scalar>(p);
  for (Index i = 0; i < grad.batch(); ++i) {
    for (int c = 0; c < in.channels; ++c) dx.values.row(i).segment(c * p, p).setConstant(grad.values(i, c) * inv);
  }
  return dx;
}

// ---------------------------------------------------------------- Sequential

template <typename Scalar>
Sequential<Scalar>::Sequential(const Sequential& other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

template <typename Scalar>
Sequential<Scalar>& Sequential<Scalar>::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential copy(other);
    *this = std::move(copy);
  }
  return *this;
}

template <typename Scalar>
Dims Sequential<Scalar>::output_dims(const Dims& input) const {
  Dims d = input;
  for (const auto& l : layers_) d = l->output_dims(d);
  return d;
}

template <typename Scalar>
Tensor<Scalar> Sequential<Scalar>::forward(const Tensor<Scalar>& x, Mode mode, Tape<Scalar>* tape) const {
  Tensor<Scalar> h = x;
  for (const auto& l : layers_) h = l->forward(h, mode, tape);
  return h;
}

template <typename Scalar>
Tensor<Scalar> Sequential<Scalar>::backward(const Tensor<Scalar>& grad, Tape<Scalar>& tape) const {
  Tensor<Scalar> g = grad;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g, tape);
  return g;
}

template <typename Scalar>
void Sequential<Scalar>::collect_parameters(std::vector<Parameter<Scalar>*>& out) {
  for (auto& l : layers_) l->collect_parameters(out);
}

template <typename Scalar>
void Sequential<Scalar>::collect_buffers(std::vector<RowMatrix<Scalar>*>& out) {
  for (auto& l : layers_) l->collect_buffers(out);
}

// ---------------------------------------------------------------- BasicBlock

template <typename Scalar>
BasicBlock<Scalar>::BasicBlock(int in_channels, int out_channels, int stride, Rng& rng) {
  main_.template emplace<Conv2d<Scalar>>(in_channels, out_channels, 3, stride, 1, rng);
  main_.template emplace<BatchNorm2d<Scalar>>(out_channels);
  main_.template emplace<Relu<Scalar>>();
  main_.template emplace<Conv2d<Scalar>>(out_channels, out_channels, 3, 1, 1, rng);
  main_.template emplace<BatchNorm2d<Scalar>>(out_channels);
  if (stride != 1 || in_channels != out_channels) {
    shortcut_.template emplace<Conv2d<Scalar>>(in_channels, out_channels, 1, stride, 0, rng);
    shortcut_.template emplace<BatchNorm2d<Scalar>>(out_channels);
  }
}

template <typename Scalar>
Tensor<Scalar> BasicBlock<Scalar>::forward(const Tensor<Scalar>& x, Mode mode, Tape<Scalar>* tape) const {
  Tensor<Scalar> main = main_.forward(x, mode, tape);
  const Tensor<Scalar> skip = shortcut_.forward(x, mode, tape);
  main.values = (main.values + skip.values).cwiseMax(Scalar(0));
  if (tape) tape->push(main.values);
  return main;
}

template <typename Scalar>
Tensor<Scalar> BasicBlock<Scalar>::backward(const Tensor<Scalar>& grad, Tape<Scalar>& tape) const {
  const auto y = tape.template pop<RowMatrix<Scalar>>();
  const Tensor<Scalar> g((y.array() > Scalar(0)).select(grad.values, Scalar(0)), grad.dims);
  Tensor<Scalar> dskip = shortcut_.backward(g, tape);
  Tensor<Scalar> dmain = main_.backward(g, tape);
  dmain.values += dskip.values;
  return dmain;
}

template <typename Scalar>
void BasicBlock<Scalar>::collect_parameters(std::vector<Parameter<Scalar>*>& out) {
  main_.collect_parameters(out);
  shortcut_.collect_parameters(out);
}

template <typename Scalar>
void BasicBlock<Scalar>::collect_buffers(std::vector<RowMatrix<Scalar>*>& out) {
  main_.collect_buffers(out);
  shortcut_.collect_buffers(out);
}

#define INBIASED_INSTANTIATE(S) \
  template class Linear<S>;     \
  template class Relu<S>;       \
  template class Flatten<S>;    \
  template class Conv2d<S>;     \
  template class BatchNorm2d<S>; \
  template class MaxPool2d<S>;  \
  template class GlobalAvgPool<S>; \
  template class Sequential<S>; \
  template class BasicBlock<S>;
INBIASED_INSTANTIATE(float)
INBIASED_INSTANTIATE(double)
#undef INBIASED_INSTANTIATE

}  // namespace inbiased
