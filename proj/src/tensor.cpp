#include "inbiased/tensor.hpp"

#include "inbiased/rng.hpp"

#include <cmath>
#include <numeric>

namespace inbiased {

std::string to_string(const Dims& dims) {
  return std::to_string(dims.channels) + "x" + std::to_string(dims.height) + "x" + std::to_string(dims.width);
}

template <typename Scalar>
Tensor<Scalar> gather(const Tensor<Scalar>& tensor, const std::vector<Index>& indices) {
  Tensor<Scalar> out(static_cast<Index>(indices.size()), tensor.dims);
  for (std::size_t i = 0; i < indices.size(); ++i) out.values.row(static_cast<Index>(i)) = tensor.values.row(indices[i]);
  return out;
}

template <typename Scalar>
ImageBatch<Scalar> gather(const ImageBatch<Scalar>& batch, const std::vector<Index>& indices) {
  ImageBatch<Scalar> out;
  out.images = gather(batch.images, indices);
  out.labels.reserve(indices.size());
  for (Index i : indices) out.labels.push_back(batch.labels[static_cast<std::size_t>(i)]);
  if (!batch.groups.empty()) {
    out.groups.reserve(indices.size());
    for (Index i : indices) out.groups.push_back(batch.groups[static_cast<std::size_t>(i)]);
  }
  return out;
}

template Tensor<float> gather(const Tensor<float>&, const std::vector<Index>&);
template Tensor<double> gather(const Tensor<double>&, const std::vector<Index>&);
template ImageBatch<float> gather(const ImageBatch<float>&, const std::vector<Index>&);
template ImageBatch<double> gather(const ImageBatch<double>&, const std::vector<Index>&);

std::uint64_t Rng::below(std::uint64_t n) {
  if (n <= 1) return 0;
  // rejection sampling removes modulo bias
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t r = 0;
  do {
    r = engine_();
  } while (r >= limit);
  return r % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u = 0.0;
  do {
    u = uniform();
  } while (u <= 0.0);
  const double v = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u));
  const double angle = 2.0 * 3.14159265358979323846 * v;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::vector<std::int64_t> Rng::permutation(std::int64_t n) {
  std::vector<std::int64_t> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  for (std::int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(below(static_cast<std::uint64_t>(i + 1)));
    std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
  }
  return p;
}

}  // namespace inbiased
