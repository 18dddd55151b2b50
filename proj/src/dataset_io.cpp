#include "inbiased/data_factory.hpp"

#include "inbiased/error.hpp"
#include "inbiased/io.hpp"
#include "inbiased/rng.hpp"

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace inbiased {
namespace {

using nlohmann::json;

std::uint32_t big_endian32(const std::string& bytes, std::size_t offset) {
  if (offset + 4 > bytes.size()) throw DataError("truncated IDX header");
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  return v;
}

std::vector<std::string> digit_classes() {
  std::vector<std::string> names;
  for (int d = 0; d < 10; ++d) names.push_back(std::to_string(d));
  return names;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

/// First existing file among `name` and `name.gz` in `dir`.
std::optional<fs::path> find_file(const fs::path& dir, const std::string& name) {
  for (const auto& candidate : {dir / name, dir / (name + ".gz")}) {
    if (fs::is_regular_file(candidate)) return candidate;
  }
  return std::nullopt;
}

/// First directory in `candidates` containing every file in `required`.
std::optional<fs::path> find_layout(const std::vector<fs::path>& candidates, const std::vector<std::string>& required) {
  for (const auto& dir : candidates) {
    if (std::all_of(required.begin(), required.end(), [&](const std::string& f) { return find_file(dir, f).has_value(); })) {
      return dir;
    }
  }
  return std::nullopt;
}

[[noreturn]] void missing(const std::string& dataset, const fs::path& root, const std::string& layout) {
  throw DataError(dataset + " not found under " + root.string() + "; expected layout: " + layout +
                  " (set INBIASED_DATA or pass download=true for downloadable sets)");
}

struct Remote {
  std::string url;
  std::string md5;
};

void fetch_and_unpack(const Remote& remote, const fs::path& root) {
  fs::create_directories(root);
  const fs::path archive = root / fs::path(remote.url).filename();
  io::fetch(remote.url, archive, remote.md5);
  io::FileLock lock(fs::path(archive.string() + ".extract.lock"));
  const fs::path stamp(archive.string() + ".extracted");
  if (!fs::exists(stamp)) {
    io::extract_tar(archive, root);
    io::write_file_atomic(stamp, remote.md5);
  }
}

bool is_image_file(const fs::path& p) {
  static const std::unordered_set<std::string> kExt{".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".pgm", ".tif", ".tiff", ".webp"};
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return kExt.contains(ext);
}

/// Decodes an image file to channel-first RGB floats in [0,1].
void decode_into(const fs::path& path, int image_size, Tensor<float>& out, Index row, Dims& dims) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw DataError("cannot decode image " + path.string());
  if (image_size > 0 && (img.rows != image_size || img.cols != image_size)) {
    const int interp = img.rows > image_size ? cv::INTER_AREA : cv::INTER_LINEAR;
    cv::resize(img, img, cv::Size(image_size, image_size), 0, 0, interp);
  }
  cv::cvtColor(img, img, cv::COLOR_BGR2RGB);
  const Dims got{3, img.rows, img.cols};
  if (row == 0) {
    dims = got;
    out = Tensor<float>(out.batch(), dims);
  } else if (got != dims) {
    throw DataError("image " + path.string() + " is " + to_string(got) + " but earlier images are " + to_string(dims) +
                    "; pass an image_size to resize");
  }
  for (int y = 0; y < img.rows; ++y) {
    const auto* px = img.ptr<unsigned char>(y);
    for (int x = 0; x < img.cols; ++x) {
      for (int c = 0; c < 3; ++c) out.plane(row, c)(y, x) = static_cast<float>(px[3 * x + c]) / 255.0f;
    }
  }
}

Tensor<float> decode_all(const std::vector<fs::path>& files, int image_size) {
  Tensor<float> images(static_cast<Index>(files.size()), Dims{3, 1, 1});
  Dims dims;
  for (std::size_t i = 0; i < files.size(); ++i) decode_into(files[i], image_size, images, static_cast<Index>(i), dims);
  return images;
}

std::vector<fs::path> sorted_images(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) return files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

Dataset load_mnist(const DatasetSpec& spec) {
  const std::string prefix = spec.split == Split::train ? "train" : "t10k";
  const std::vector<std::string> files{prefix + "-images-idx3-ubyte", prefix + "-labels-idx1-ubyte"};
  const std::vector<fs::path> candidates{spec.root / "mnist", spec.root / "MNIST" / "raw", spec.root / "mnist-desk", spec.root};
  auto dir = find_layout(candidates, files);
  if (!dir && spec.download) {
    const std::vector<std::pair<std::string, std::string>> remote{
        {"train-images-idx3-ubyte.gz", "f68b3c2dcbeaaa9fbdd348bbdeb94873"},
        {"train-labels-idx1-ubyte.gz", "d53e105ee54ea40749a09fcbcd1e9432"},
        {"t10k-images-idx3-ubyte.gz", "9fb629c4189551a2d022fa330f9573f3"},
        {"t10k-labels-idx1-ubyte.gz", "ec29112dd5afa0611ce80d1b7f02629c"},
    };
    for (const auto& [name, md5] : remote) io::fetch("https://ossci-datasets.s3.amazonaws.com/mnist/" + name, spec.root / "mnist" / name, md5);
    dir = spec.root / "mnist";
  }
  if (!dir) missing("mnist", spec.root, "mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]");
  Dataset out;
  out.spec = spec;
  out.data = read_mnist_idx(*find_file(*dir, files[0]), *find_file(*dir, files[1]));
  out.classes = digit_classes();
  return out;
}

Dataset load_cifar(const DatasetSpec& spec, bool hundred) {
  const fs::path dir = spec.root / (hundred ? "cifar-100-binary" : "cifar-10-batches-bin");
  std::vector<std::string> names;
  if (hundred) {
    names = {spec.split == Split::train ? "train.bin" : "test.bin"};
  } else if (spec.split == Split::train) {
    for (int b = 1; b <= 5; ++b) names.push_back("data_batch_" + std::to_string(b) + ".bin");
  } else {
    names = {"test_batch.bin"};
  }
  if (!find_layout({dir}, names) && spec.download) {
    fetch_and_unpack(hundred ? Remote{"https://www.cs.toronto.edu/~kriz/cifar-100-binary.tar.gz", "03b5dce01913d631647c71ecec9e9cb8"}
                             : Remote{"https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz", "c32a1d4ab5d03f1284b67883e8d87530"},
                     spec.root);
  }
  if (!find_layout({dir}, names)) {
    missing(hundred ? "cifar100" : "cifar10", spec.root,
            hundred ? "cifar-100-binary/{train,test}.bin" : "cifar-10-batches-bin/{data_batch_1..5,test_batch}.bin");
  }
  std::vector<fs::path> files;
  for (const auto& n : names) files.push_back(dir / n);
  Dataset out;
  out.spec = spec;
  out.data = hundred ? read_cifar_binary(files, 2, 1) : read_cifar_binary(files, 1, 0);
  const fs::path meta = dir / (hundred ? "fine_label_names.txt" : "batches.meta.txt");
  if (fs::exists(meta)) {
    for (const auto& line : read_lines(meta)) {
      if (!line.empty()) out.classes.push_back(line);
    }
  }
  const int count = hundred ? 100 : 10;
  if (static_cast<int>(out.classes.size()) != count) {
    out.classes.clear();
    for (int c = 0; c < count; ++c) out.classes.push_back(std::to_string(c));
  }
  return out;
}

Dataset load_stl10(const DatasetSpec& spec) {
  const fs::path dir = spec.root / "stl10_binary";
  const std::string prefix = spec.split == Split::train ? "train" : "test";
  const std::vector<std::string> names{prefix + "_X.bin", prefix + "_y.bin"};
  if (!find_layout({dir}, names) && spec.download) {
    fetch_and_unpack({"http://ai.stanford.edu/~acoates/stl10/stl10_binary.tar.gz", "91f7769df0f17e558f3565bffb0c7dfb"}, spec.root);
  }
  if (!find_layout({dir}, names)) missing("stl10", spec.root, "stl10_binary/{train,test}_{X,y}.bin");
  Dataset out;
  out.spec = spec;
  out.data = read_stl10_binary(dir / names[0], dir / names[1]);
  if (fs::exists(dir / "class_names.txt")) {
    for (const auto& line : read_lines(dir / "class_names.txt")) {
      if (!line.empty()) out.classes.push_back(line);
    }
  }
  if (out.classes.size() != 10) out.classes = digit_classes();
  return out;
}

Dataset load_tinyimagenet(const DatasetSpec& spec) {
  const fs::path dir = spec.root / "tiny-imagenet-200";
  if (!fs::exists(dir / "wnids.txt")) {
    missing("tinyimagenet", spec.root, "tiny-imagenet-200/{wnids.txt,train/<wnid>/images/*.JPEG,val/val_annotations.txt,val/images/*.JPEG}");
  }
  Dataset out;
  out.spec = spec;
  std::unordered_map<std::string, int> index;
  for (const auto& line : read_lines(dir / "wnids.txt")) {
    if (line.empty()) continue;
    index.emplace(line, static_cast<int>(out.classes.size()));
    out.classes.push_back(line);
  }
  std::vector<fs::path> files;
  std::vector<int> labels;
  if (spec.split == Split::train) {
    for (const auto& wnid : out.classes) {
      for (auto& f : sorted_images(dir / "train" / wnid / "images")) {
        files.push_back(std::move(f));
        labels.push_back(index.at(wnid));
      }
    }
  } else {
    // the official val split serves as the labeled test set
    for (const auto& line : read_lines(dir / "val" / "val_annotations.txt")) {
      std::istringstream ss(line);
      std::string file;
      std::string wnid;
      if (!(ss >> file >> wnid)) continue;
      const auto it = index.find(wnid);
      if (it == index.end()) throw LabelMismatchError("val annotation names unknown class " + wnid);
      files.push_back(dir / "val" / "images" / file);
      labels.push_back(it->second);
    }
  }
  if (files.empty()) throw EmptyDatasetError("no tinyimagenet images for split " + to_string(spec.split));
  // subset before decoding
  ImageBatch<float> index_batch{Tensor<float>(static_cast<Index>(files.size()), Dims{1, 1, 1}), labels, {}};
  for (Index i = 0; i < index_batch.size(); ++i) index_batch.images.values(i, 0) = static_cast<float>(i);
  index_batch = subsample(index_batch, spec.limit, spec.seed);
  std::vector<fs::path> keep;
  for (Index i = 0; i < index_batch.size(); ++i) keep.push_back(files[static_cast<std::size_t>(index_batch.images.values(i, 0))]);
  out.data = {decode_all(keep, spec.image_size), index_batch.labels, {}};
  return out;
}

}  // namespace

ImageBatch<float> read_mnist_idx(const fs::path& images, const fs::path& labels) {
  const std::string img = io::read_maybe_gzip(images);
  const std::string lab = io::read_maybe_gzip(labels);
  if (big_endian32(img, 0) != 0x803) throw DataError(images.string() + " is not an IDX3 image file");
  if (big_endian32(lab, 0) != 0x801) throw DataError(labels.string() + " is not an IDX1 label file");
  const auto n = static_cast<Index>(big_endian32(img, 4));
  const int h = static_cast<int>(big_endian32(img, 8));
  const int w = static_cast<int>(big_endian32(img, 12));
  if (static_cast<Index>(big_endian32(lab, 4)) != n) throw DataError("MNIST image/label counts differ");
  if (img.size() != static_cast<std::size_t>(16 + n * h * w) || lab.size() != static_cast<std::size_t>(8 + n)) {
    throw DataError("truncated MNIST file " + images.string());
  }
  ImageBatch<float> out{Tensor<float>(n, Dims{1, h, w}), std::vector<int>(static_cast<std::size_t>(n)), {}};
  const auto* px = reinterpret_cast<const unsigned char*>(img.data()) + 16;
  for (Index i = 0; i < n * h * w; ++i) out.images.values.data()[i] = static_cast<float>(px[i]) / 255.0f;
  for (Index i = 0; i < n; ++i) {
    const int label = static_cast<unsigned char>(lab[static_cast<std::size_t>(8 + i)]);
    if (label > 9) throw DataError("MNIST label out of range");
    out.labels[static_cast<std::size_t>(i)] = label;
  }
  return out;
}

ImageBatch<float> read_cifar_binary(const std::vector<fs::path>& files, int label_bytes, int label_offset) {
  constexpr int kPixels = 3 * 32 * 32;
  const auto record = static_cast<std::size_t>(label_bytes + kPixels);
  std::vector<std::string> blobs;
  Index n = 0;
  for (const auto& f : files) {
    blobs.push_back(io::read_file(f));
    if (blobs.back().size() % record != 0) throw DataError("truncated CIFAR file " + f.string());
    n += static_cast<Index>(blobs.back().size() / record);
  }
  ImageBatch<float> out{Tensor<float>(n, Dims{3, 32, 32}), std::vector<int>(static_cast<std::size_t>(n)), {}};
  Index row = 0;
  for (const auto& blob : blobs) {
    for (std::size_t off = 0; off < blob.size(); off += record, ++row) {
      out.labels[static_cast<std::size_t>(row)] = static_cast<unsigned char>(blob[off + static_cast<std::size_t>(label_offset)]);
      const auto* px = reinterpret_cast<const unsigned char*>(blob.data() + off + static_cast<std::size_t>(label_bytes));
      for (int k = 0; k < kPixels; ++k) out.images.values(row, k) = static_cast<float>(px[k]) / 255.0f;
    }
  }
  return out;
}

ImageBatch<float> read_stl10_binary(const fs::path& images, const fs::path& labels) {
  constexpr int kSide = 96;
  constexpr std::size_t kRecord = 3 * kSide * kSide;
  const std::string img = io::read_file(images);
  const std::string lab = io::read_file(labels);
  if (img.size() % kRecord != 0 || img.size() / kRecord != lab.size()) throw DataError("STL-10 image/label files disagree");
  const auto n = static_cast<Index>(lab.size());
  ImageBatch<float> out{Tensor<float>(n, Dims{3, kSide, kSide}), std::vector<int>(static_cast<std::size_t>(n)), {}};
  for (Index i = 0; i < n; ++i) {
    const int label = static_cast<unsigned char>(lab[static_cast<std::size_t>(i)]);
    if (label < 1 || label > 10) throw DataError("STL-10 label out of range");
    out.labels[static_cast<std::size_t>(i)] = label - 1;
    const auto* px = reinterpret_cast<const unsigned char*>(img.data()) + static_cast<std::size_t>(i) * kRecord;
    // planes are stored column-major
    for (int c = 0; c < 3; ++c) {
      for (int x = 0; x < kSide; ++x) {
        for (int y = 0; y < kSide; ++y) out.images.plane(i, c)(y, x) = static_cast<float>(px[(c * kSide + x) * kSide + y]) / 255.0f;
      }
    }
  }
  return out;
}

Dataset load_image_folder(const fs::path& root, int image_size, const std::vector<std::string>* label_map) {
  if (!fs::is_directory(root)) throw DataError("folder dataset " + root.string() + " does not exist");
  std::vector<std::string> subdirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) subdirs.push_back(entry.path().filename().string());
  }
  std::sort(subdirs.begin(), subdirs.end());

  Dataset out;
  out.spec.name = DatasetName::folder;
  out.spec.split = Split::test;
  out.spec.root = root;
  out.spec.image_size = image_size;
  if (label_map != nullptr) {
    out.classes = *label_map;
  } else if (fs::exists(root / "manifest.json")) {
    // keep the class order a generated folder was written with
    const json manifest = json::parse(io::read_file(root / "manifest.json"));
    out.classes = manifest.at("classes").get<std::vector<std::string>>();
  } else {
    out.classes = subdirs;
  }
  std::unordered_map<std::string, int> index;
  for (std::size_t c = 0; c < out.classes.size(); ++c) index.emplace(out.classes[c], static_cast<int>(c));

  std::vector<fs::path> files;
  std::vector<int> labels;
  for (const auto& name : subdirs) {
    auto images = sorted_images(root / name);
    if (images.empty()) continue;
    const auto it = index.find(name);
    if (it == index.end()) throw LabelMismatchError("class folder '" + name + "' is not in the model's label map");
    for (auto& f : images) {
      files.push_back(std::move(f));
      labels.push_back(it->second);
    }
  }
  if (files.empty()) throw EmptyDatasetError("no images found below " + root.string());
  out.data = {decode_all(files, image_size), std::move(labels), {}};
  return out;
}

Dataset make_skewed_celeba(Split split, const fs::path& root, int image_size, Index limit, std::uint64_t seed) {
  fs::path dir;
  for (const auto& candidate : {root / "celeba", root / "CelebA", root}) {
    if (fs::exists(candidate / "list_attr_celeba.txt")) {
      dir = candidate;
      break;
    }
  }
  if (dir.empty()) {
    throw DataError("CelebA attribute file not found under " + root.string() +
                    "; expected celeba/list_attr_celeba.txt, celeba/img_align_celeba/*.jpg and optionally "
                    "celeba/list_eval_partition.txt (CelebA is not downloaded automatically)");
  }
  const auto lines = read_lines(dir / "list_attr_celeba.txt");
  if (lines.size() < 2) throw DataError("malformed CelebA attribute file");
  std::vector<std::string> attrs;
  {
    std::istringstream ss(lines[1]);
    for (std::string a; ss >> a;) attrs.push_back(a);
  }
  const auto col = [&](const std::string& name) {
    const auto it = std::find(attrs.begin(), attrs.end(), name);
    if (it == attrs.end()) throw DataError("CelebA attribute file lacks the " + name + " column");
    return static_cast<std::size_t>(it - attrs.begin());
  };
  const std::size_t blond_col = col("Blond_Hair");
  const std::size_t male_col = col("Male");

  std::unordered_map<std::string, int> partition;
  if (fs::exists(dir / "list_eval_partition.txt")) {
    for (const auto& line : read_lines(dir / "list_eval_partition.txt")) {
      std::istringstream ss(line);
      std::string file;
      int part = 0;
      if (ss >> file >> part) partition.emplace(file, part);
    }
  }
  const auto in_split = [&](const std::string& file) {
    if (!partition.empty()) {
      const auto it = partition.find(file);
      if (it == partition.end()) return false;
      return split == Split::train ? it->second == 0 : it->second == 2;
    }
    // without the official partition: a stable 80/20 split by file name
    const bool train = mix64(fnv1a(file)) % 10 < 8;
    return train == (split == Split::train);
  };

  std::vector<fs::path> files;
  std::vector<int> labels;
  std::vector<Group> groups;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    std::istringstream ss(lines[i]);
    std::string file;
    if (!(ss >> file)) continue;
    std::vector<int> values;
    for (int v; ss >> v;) values.push_back(v);
    if (values.size() != attrs.size()) throw DataError("CelebA attribute row for " + file + " has wrong width");
    if (!in_split(file)) continue;
    const bool blond = values[blond_col] == 1;
    const bool male = values[male_col] == 1;
    const Group group = blond ? (male ? Group::blond_male : Group::blond_female) : (male ? Group::nonblond_male : Group::nonblond_female);
    if (split == Split::train && group != Group::blond_female && group != Group::nonblond_male) continue;
    files.push_back(dir / "img_align_celeba" / file);
    labels.push_back(male ? 1 : 0);
    groups.push_back(group);
  }
  if (files.empty()) throw EmptyDatasetError("Skewed-CelebA " + to_string(split) + " split is empty");

  std::vector<Index> keep(files.size());
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = static_cast<Index>(i);
  if (limit > 0 && limit < static_cast<Index>(files.size())) {
    const auto perm = Rng(seed, "subset").permutation(static_cast<Index>(files.size()));
    keep.assign(perm.begin(), perm.begin() + limit);
    std::sort(keep.begin(), keep.end());
  }
  std::vector<fs::path> kept_files;
  std::vector<int> kept_labels;
  std::vector<Group> kept_groups;
  for (Index k : keep) {
    kept_files.push_back(files[static_cast<std::size_t>(k)]);
    kept_labels.push_back(labels[static_cast<std::size_t>(k)]);
    kept_groups.push_back(groups[static_cast<std::size_t>(k)]);
  }

  Dataset out;
  out.spec = {DatasetName::skewed_celeba, split, seed, root};
  out.spec.limit = limit;
  out.spec.image_size = image_size;
  out.classes = {"female", "male"};
  out.data = {decode_all(kept_files, image_size), std::move(kept_labels), std::move(kept_groups)};
  return out;
}

Dataset make_colored_mnist(ColoredMnistVariant variant, Split split, std::uint64_t seed, const fs::path& root) {
  DatasetSpec spec{DatasetName::mnist, split, seed, root};
  return make_colored_mnist(variant, load_dataset(spec), seed);
}

Dataset make_tinted_stl10(Split split, std::uint64_t seed, double tint_alpha, const fs::path& root) {
  DatasetSpec spec{DatasetName::stl10, split, seed, root};
  return make_tinted_stl10(load_dataset(spec), seed, tint_alpha);
}

Dataset load_dataset(const DatasetSpec& requested) {
  DatasetSpec spec = requested;
  if (spec.root.empty()) spec.root = default_data_root();
  spec.validate();

  const auto limited = [&](Dataset d) {
    d.data = subsample(d.data, spec.limit, spec.seed);
    d.spec = spec;
    return d;
  };
  const auto mnist_spec = [&] {
    DatasetSpec s = spec;
    s.name = DatasetName::mnist;
    return s;
  };
  const auto colored = [&](ColoredMnistVariant v) {
    Dataset d = make_colored_mnist(v, limited(load_mnist(mnist_spec())), spec.seed);
    d.spec = spec;
    return d;
  };
  switch (spec.name) {
    case DatasetName::mnist: return limited(load_mnist(spec));
    case DatasetName::colored_mnist_fg: return colored(ColoredMnistVariant::fg);
    case DatasetName::colored_mnist_bg: return colored(ColoredMnistVariant::bg);
    case DatasetName::colored_mnist_fgbg: return colored(ColoredMnistVariant::fgbg);
    case DatasetName::stl10: return limited(load_stl10(spec));
    case DatasetName::tinted_stl10: {
      DatasetSpec s = spec;
      s.name = DatasetName::stl10;
      Dataset d = make_tinted_stl10(limited(load_stl10(s)), spec.seed, spec.tint_alpha);
      d.spec = spec;
      return d;
    }
    case DatasetName::cifar10: return limited(load_cifar(spec, false));
    case DatasetName::cifar100: return limited(load_cifar(spec, true));
    case DatasetName::tinyimagenet: {
      Dataset d = load_tinyimagenet(spec);
      d.spec = spec;
      return d;
    }
    case DatasetName::skewed_celeba: {
      Dataset d = make_skewed_celeba(spec.split, spec.root, spec.image_size > 0 ? spec.image_size : 64, spec.limit, spec.seed);
      d.spec = spec;
      return d;
    }
    case DatasetName::folder: {
      Dataset d = load_image_folder(spec.root, spec.image_size);
      return limited(std::move(d));
    }
  }
  throw InvalidArgument("unhandled dataset");
}

fs::path write_image_folder(const Dataset& dataset, const fs::path& out) {
  const auto& images = dataset.data.images;
  const int channels = images.dims.channels;
  if (channels != 1 && channels != 3) throw ShapeError("only 1- or 3-channel images can be written");
  fs::create_directories(out);
  json files = json::array();
  std::vector<int> written(dataset.classes.size(), 0);
  for (Index i = 0; i < dataset.data.size(); ++i) {
    const int label = dataset.data.labels[static_cast<std::size_t>(i)];
    const std::string& cls = dataset.classes.at(static_cast<std::size_t>(label));
    const fs::path dir = out / cls;
    fs::create_directories(dir);
    char name[32];
    std::snprintf(name, sizeof(name), "%06lld.png", static_cast<long long>(i));

    cv::Mat img(images.dims.height, images.dims.width, channels == 3 ? CV_8UC3 : CV_8UC1);
    for (int y = 0; y < images.dims.height; ++y) {
      auto* px = img.ptr<unsigned char>(y);
      for (int x = 0; x < images.dims.width; ++x) {
        for (int c = 0; c < channels; ++c) {
          // OpenCV stores BGR
          const int src = channels == 3 ? 2 - c : c;
          const float v = std::clamp(images.plane(i, src)(y, x), 0.0f, 1.0f);
          px[channels * x + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
        }
      }
    }
    const fs::path path = dir / name;
    if (!cv::imwrite(path.string(), img)) throw DataError("cannot write " + path.string());
    ++written[static_cast<std::size_t>(label)];
    files.push_back({{"path", (fs::path(cls) / name).string()}, {"label", label}, {"sha256", io::sha256_file(path)}});
  }

  json manifest;
  manifest["dataset"] = to_string(dataset.spec.name);
  manifest["split"] = to_string(dataset.spec.split);
  manifest["seed"] = dataset.spec.seed;
  manifest["limit"] = dataset.spec.limit;
  if (dataset.spec.name == DatasetName::tinted_stl10) manifest["tint_alpha"] = dataset.spec.tint_alpha;
  manifest["count"] = dataset.data.size();
  manifest["dims"] = {images.dims.channels, images.dims.height, images.dims.width};
  manifest["classes"] = dataset.classes;
  manifest["per_class"] = written;
  manifest["palette"] = dataset.palette ? json(dataset.palette->colors) : json(nullptr);
  manifest["content_hash"] = content_hash(dataset.data);
  manifest["files"] = std::move(files);
  const fs::path path = out / "manifest.json";
  io::write_file_atomic(path, manifest.dump(2) + "\n");
  return path;
}

}  // namespace inbiased
