#include "inbiased/data_factory.hpp"

#include "inbiased/error.hpp"
#include "inbiased/io.hpp"
#include "inbiased/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>

#ifndef INBIASED_DEFAULT_DATA_ROOT
#define INBIASED_DEFAULT_DATA_ROOT "data"
#endif

namespace inbiased {
namespace {

constexpr std::array<std::pair<DatasetName, const char*>, 11> kNames{{
    {DatasetName::mnist, "mnist"},
    {DatasetName::colored_mnist_fg, "colored_mnist_fg"},
    {DatasetName::colored_mnist_bg, "colored_mnist_bg"},
    {DatasetName::colored_mnist_fgbg, "colored_mnist_fgbg"},
    {DatasetName::stl10, "stl10"},
    {DatasetName::tinted_stl10, "tinted_stl10"},
    {DatasetName::cifar10, "cifar10"},
    {DatasetName::cifar100, "cifar100"},
    {DatasetName::tinyimagenet, "tinyimagenet"},
    {DatasetName::skewed_celeba, "skewed_celeba"},
    {DatasetName::folder, "folder"},
}};

// Regularized lower incomplete gamma P(a, x) by its power series.
double gamma_p_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  for (int n = 1; n < 10000; ++n) {
    term *= x / (a + n);
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Regularized upper incomplete gamma Q(a, x) by Lentz's continued fraction.
double gamma_q_fraction(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

std::array<float, 3> to_float(const std::array<double, 3>& c) {
  return {static_cast<float>(c[0]), static_cast<float>(c[1]), static_cast<float>(c[2])};
}

}  // namespace

DatasetName parse_dataset_name(const std::string& name) {
  for (const auto& [value, text] : kNames) {
    if (name == text) return value;
  }
  throw InvalidArgument("unknown dataset '" + name + "'");
}

std::string to_string(DatasetName name) {
  for (const auto& [value, text] : kNames) {
    if (value == name) return text;
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "test") return Split::test;
  throw InvalidArgument("unknown split '" + name + "' (expected train or test)");
}

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

fs::path default_data_root() {
  if (const char* env = std::getenv("INBIASED_DATA"); env != nullptr && *env != '\0') return env;
  return INBIASED_DEFAULT_DATA_ROOT;
}

void DatasetSpec::validate() const {
  if (!(tint_alpha >= 0.0 && tint_alpha <= 1.0)) throw InvalidArgument("tint_alpha must lie in [0,1]");
  if (limit < 0) throw InvalidArgument("limit must be >= 0");
  if (image_size < 0) throw InvalidArgument("image_size must be >= 0");
  if (name == DatasetName::folder && root.empty()) throw InvalidArgument("folder dataset needs a root directory");
}

std::array<double, 3> hsv_to_rgb(double hue, double saturation, double value) {
  const double h = (hue - std::floor(hue)) * 6.0;
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = value * (1.0 - saturation);
  const double q = value * (1.0 - saturation * f);
  const double t = value * (1.0 - saturation * (1.0 - f));
  switch (sector) {
    case 0: return {value, t, p};
    case 1: return {q, value, p};
    case 2: return {p, value, t};
    case 3: return {p, q, value};
    case 4: return {t, p, value};
    default: return {value, p, q};
  }
}

ColorPalette make_palette(std::uint64_t seed, int count) {
  if (count < 1) throw InvalidArgument("palette needs at least one color");
  Rng rng(seed, "palette");
  const double rotation = rng.uniform();
  ColorPalette palette;
  for (int k = 0; k < count; ++k) palette.colors.push_back(hsv_to_rgb(rotation + static_cast<double>(k) / count, 1.0, 1.0));
  return palette;
}

Dataset make_colored_mnist(ColoredMnistVariant variant, const Dataset& mnist, std::uint64_t seed) {
  const auto& src = mnist.data.images;
  if (src.dims.channels != 1) throw ShapeError("colored MNIST expects grayscale digits, got " + to_string(src.dims));
  if (mnist.num_classes() > 10) throw InvalidArgument("colored MNIST supports at most 10 classes");

  Dataset out;
  out.spec = mnist.spec;
  out.spec.seed = seed;
  out.spec.name = variant == ColoredMnistVariant::fg   ? DatasetName::colored_mnist_fg
                  : variant == ColoredMnistVariant::bg ? DatasetName::colored_mnist_bg
                                                       : DatasetName::colored_mnist_fgbg;
  out.classes = mnist.classes;
  out.palette = make_palette(seed);
  const auto& colors = out.palette->colors;
  const bool train = mnist.spec.split == Split::train;
  const Dims dims{3, src.dims.height, src.dims.width};
  out.data = {Tensor<float>(src.batch(), dims), mnist.data.labels, mnist.data.groups};
  out.color_index.resize(static_cast<std::size_t>(src.batch()));
  if (variant == ColoredMnistVariant::fgbg) out.second_color_index.resize(out.color_index.size());

  Rng rng(seed, "colored_mnist/test");
  const std::array<float, 3> white{1.0f, 1.0f, 1.0f};
  const std::array<float, 3> black{0.0f, 0.0f, 0.0f};
  for (Index i = 0; i < src.batch(); ++i) {
    const int label = mnist.data.labels[static_cast<std::size_t>(i)];
    int primary = label;
    int secondary = (label + kFgbgBackgroundOffset) % 10;
    if (!train) {
      primary = static_cast<int>(rng.below(10));
      if (variant == ColoredMnistVariant::fgbg) {
        // uniform over the nine colors different from the foreground
        secondary = static_cast<int>(rng.below(9));
        if (secondary >= primary) ++secondary;
      }
    }
    out.color_index[static_cast<std::size_t>(i)] = primary;
    if (variant == ColoredMnistVariant::fgbg) out.second_color_index[static_cast<std::size_t>(i)] = secondary;

    std::array<float, 3> fg{};
    std::array<float, 3> bg{};
    switch (variant) {
      case ColoredMnistVariant::fg:
        fg = to_float(colors[static_cast<std::size_t>(primary)]);
        bg = black;
        break;
      case ColoredMnistVariant::bg:
        fg = white;
        bg = to_float(colors[static_cast<std::size_t>(primary)]);
        break;
      case ColoredMnistVariant::fgbg:
        fg = to_float(colors[static_cast<std::size_t>(primary)]);
        bg = to_float(colors[static_cast<std::size_t>(secondary)]);
        break;
    }
    const RowMatrix<float> mask = (src.plane(i, 0).array() > kDigitMaskThreshold).cast<float>().matrix();
    for (int c = 0; c < 3; ++c) {
      const float f = fg[static_cast<std::size_t>(c)];
      const float b = bg[static_cast<std::size_t>(c)];
      out.data.images.plane(i, c) = (f * mask.array() + b * (1.0f - mask.array())).matrix();
    }
  }
  return out;
}

Dataset make_tinted_stl10(const Dataset& stl10, std::uint64_t seed, double tint_alpha) {
  if (!(tint_alpha >= 0.0 && tint_alpha <= 1.0)) throw InvalidArgument("tint_alpha must lie in [0,1]");
  if (stl10.data.images.dims.channels != 3) throw ShapeError("tinting expects RGB images");
  Dataset out = stl10;
  out.spec.name = DatasetName::tinted_stl10;
  out.spec.seed = seed;
  out.spec.tint_alpha = tint_alpha;
  out.palette = make_palette(seed);
  if (stl10.spec.split != Split::train) return out;

  const auto alpha = static_cast<float>(tint_alpha);
  out.color_index = out.data.labels;
  for (Index i = 0; i < out.data.size(); ++i) {
    const auto color = to_float(out.palette->colors.at(static_cast<std::size_t>(out.data.labels[static_cast<std::size_t>(i)])));
    for (int c = 0; c < 3; ++c) {
      auto plane = out.data.images.plane(i, c);
      plane = ((1.0f - alpha) * plane.array() + alpha * color[static_cast<std::size_t>(c)]).matrix();
    }
  }
  return out;
}

ImageBatch<float> subsample(const ImageBatch<float>& batch, Index limit, std::uint64_t seed) {
  if (limit <= 0 || limit >= batch.size()) return batch;
  const auto perm = Rng(seed, "subset").permutation(batch.size());
  std::vector<Index> keep(perm.begin(), perm.begin() + limit);
  std::sort(keep.begin(), keep.end());
  return gather(batch, keep);
}

std::string content_hash(const ImageBatch<float>& batch) {
  io::Sha256 h;
  const auto& t = batch.images;
  h.update_value(t.dims.channels);
  h.update_value(t.dims.height);
  h.update_value(t.dims.width);
  h.update_value(t.batch());
  h.update(t.values.data(), static_cast<std::size_t>(t.values.size()) * sizeof(float));
  h.update(batch.labels.data(), batch.labels.size() * sizeof(int));
  h.update(batch.groups.data(), batch.groups.size() * sizeof(Group));
  return h.hex();
}

BatchStream::BatchStream(const ImageBatch<float>& data, Index batch_size, std::optional<std::uint64_t> shuffle_seed)
    : data_(&data), batch_size_(batch_size) {
  if (batch_size < 1) throw InvalidArgument("batch_size must be positive");
  if (shuffle_seed) {
    const auto perm = Rng(*shuffle_seed).permutation(data.size());
    order_.assign(perm.begin(), perm.end());
  } else {
    order_.resize(static_cast<std::size_t>(data.size()));
    for (Index i = 0; i < data.size(); ++i) order_[static_cast<std::size_t>(i)] = i;
  }
}

bool BatchStream::next(ImageBatch<float>& out) {
  const auto n = static_cast<Index>(order_.size());
  if (cursor_ >= n) return false;
  const Index end = std::min(n, cursor_ + batch_size_);
  out = gather(*data_, std::vector<Index>(order_.begin() + cursor_, order_.begin() + end));
  cursor_ = end;
  return true;
}

Index BatchStream::batches() const { return (static_cast<Index>(order_.size()) + batch_size_ - 1) / batch_size_; }

double chi_square_survival(double x, int dof) {
  if (dof < 1) throw InvalidArgument("chi-square needs dof >= 1");
  if (x <= 0.0) return 1.0;
  const double a = 0.5 * dof;
  const double half = 0.5 * x;
  return half < a + 1.0 ? 1.0 - gamma_p_series(a, half) : gamma_q_fraction(a, half);
}

ChiSquareResult chi_square_independence(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw InvalidArgument("chi-square samples differ in length");
  if (a.empty()) throw InvalidArgument("chi-square needs at least one observation");
  std::map<int, std::size_t> rows;
  std::map<int, std::size_t> cols;
  for (int v : a) rows.emplace(v, 0);
  for (int v : b) cols.emplace(v, 0);
  std::size_t r = 0;
  for (auto& [_, idx] : rows) idx = r++;
  std::size_t c = 0;
  for (auto& [_, idx] : cols) idx = c++;

  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < a.size(); ++i) table(static_cast<Index>(rows[a[i]]), static_cast<Index>(cols[b[i]])) += 1.0;

  const Eigen::VectorXd row_sums = table.rowwise().sum();
  const Eigen::RowVectorXd col_sums = table.colwise().sum();
  const double n = table.sum();
  const Eigen::MatrixXd expected = row_sums * col_sums / n;

  ChiSquareResult result;
  result.statistic = ((table - expected).array().square() / expected.array()).sum();
  result.dof = static_cast<int>((rows.size() - 1) * (cols.size() - 1));
  result.p_value = result.dof == 0 ? 1.0 : chi_square_survival(result.statistic, result.dof);
  return result;
}

}  // namespace inbiased
