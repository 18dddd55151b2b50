#pragma once

#include "inbiased/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace inbiased {

namespace fs = std::filesystem;

enum class DatasetName {
  mnist,
  colored_mnist_fg,
  colored_mnist_bg,
  colored_mnist_fgbg,
  stl10,
  tinted_stl10,
  cifar10,
  cifar100,
  tinyimagenet,
  skewed_celeba,
  folder,
};

enum class Split { train, test };

DatasetName parse_dataset_name(const std::string& name);
std::string to_string(DatasetName name);
Split parse_split(const std::string& name);
std::string to_string(Split split);

/// Data root from $INBIASED_DATA, falling back to the repository's data/.
fs::path default_data_root();

struct DatasetSpec {
  DatasetName name = DatasetName::mnist;
  Split split = Split::train;
  std::uint64_t seed = 0;
  /// Data root; for `folder` datasets, the folder itself.
  fs::path root;
  double tint_alpha = 0.3;
  /// Keep a seeded random subset of at most this many samples (0 = all).
  Index limit = 0;
  /// Square output size for datasets decoded from image files (0 = native).
  int image_size = 0;
  /// Fetch missing downloadable sets into `root`.
  bool download = false;

  void validate() const;
};

/// Colors are RGB triples in [0,1].
struct ColorPalette {
  std::vector<std::array<double, 3>> colors;
};

/// `count` evenly spaced hues at full saturation and value, with a
/// seed-derived rotation of the hue circle.
ColorPalette make_palette(std::uint64_t seed, int count = 10);

std::array<double, 3> hsv_to_rgb(double hue, double saturation, double value);

struct Dataset {
  DatasetSpec spec;
  ImageBatch<float> data;
  std::vector<std::string> classes;
  std::optional<ColorPalette> palette;
  /// Palette index per sample that carries the class color: the foreground
  /// for FG/FGBG, the background for BG, the tint for Tinted-STL-10.
  std::vector<int> color_index;
  /// Secondary palette index per sample (FGBG background), else empty.
  std::vector<int> second_color_index;

  [[nodiscard]] int num_classes() const { return static_cast<int>(classes.size()); }
};

Dataset load_dataset(const DatasetSpec& spec);

enum class ColoredMnistVariant { fg, bg, fgbg };

/// Pixels with grayscale intensity above this belong to the digit.
inline constexpr float kDigitMaskThreshold = 0.1f;
/// Background palette offset relative to the label in FGBG training data.
inline constexpr int kFgbgBackgroundOffset = 5;

/// Colored MNIST from grayscale MNIST samples. Training data colors by label;
/// test colors are drawn per sample from the palette independent of label.
Dataset make_colored_mnist(ColoredMnistVariant variant, const Dataset& mnist, std::uint64_t seed);
Dataset make_colored_mnist(ColoredMnistVariant variant, Split split, std::uint64_t seed, const fs::path& root);

/// Training images are blended toward their class color,
/// x' = (1 - alpha) x + alpha palette[label]; test images pass through.
Dataset make_tinted_stl10(const Dataset& stl10, std::uint64_t seed, double tint_alpha);
Dataset make_tinted_stl10(Split split, std::uint64_t seed, double tint_alpha, const fs::path& root);

/// Training keeps blond females and non-blond males only; test keeps every
/// combination. Labels are gender (0 female, 1 male); groups are tagged.
Dataset make_skewed_celeba(Split split, const fs::path& root, int image_size = 64, Index limit = 0,
                           std::uint64_t seed = 0);

/// Images below `root/<class>/` with classes in sorted order, or in the
/// order of `label_map` when given (unknown class folders then throw
/// LabelMismatchError).
Dataset load_image_folder(const fs::path& root, int image_size = 0,
                          const std::vector<std::string>* label_map = nullptr);

// Raw readers, exposed for tests and tools.
ImageBatch<float> read_mnist_idx(const fs::path& images, const fs::path& labels);
ImageBatch<float> read_cifar_binary(const std::vector<fs::path>& files, int label_bytes, int label_offset);
ImageBatch<float> read_stl10_binary(const fs::path& images, const fs::path& labels);

/// Deterministic subset of at most `limit` samples (seeded permutation,
/// original order restored).
ImageBatch<float> subsample(const ImageBatch<float>& batch, Index limit, std::uint64_t seed);

/// SHA-256 over dims, pixel bytes, labels and groups.
std::string content_hash(const ImageBatch<float>& batch);

/// Mini-batches over a dataset, in order or in a seeded permutation.
class BatchStream {
 public:
  BatchStream(const ImageBatch<float>& data, Index batch_size, std::optional<std::uint64_t> shuffle_seed = {});

  /// False once the pass is exhausted.
  bool next(ImageBatch<float>& out);
  [[nodiscard]] Index batches() const;
  [[nodiscard]] const std::vector<Index>& order() const { return order_; }

 private:
  const ImageBatch<float>* data_;
  Index batch_size_;
  std::vector<Index> order_;
  Index cursor_ = 0;
};

struct ChiSquareResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
};

/// Pearson chi-square test of independence between two categorical
/// samples. Empty rows/columns of the contingency table are dropped.
ChiSquareResult chi_square_independence(const std::vector<int>& a, const std::vector<int>& b);

/// Upper tail P[X > x] of a chi-square distribution with `dof` degrees.
double chi_square_survival(double x, int dof);

/// Writes one subdirectory per class of PNG images and a manifest.json
/// describing the spec, palette and file hashes. Returns the manifest path.
fs::path write_image_folder(const Dataset& dataset, const fs::path& out);

}  // namespace inbiased
