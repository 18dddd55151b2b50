#include <doctest.h>

#include "inbiased/data_factory.hpp"
#include "inbiased/error.hpp"
#include "inbiased/io.hpp"
#include "inbiased/rng.hpp"
#include "support/temp_dir.hpp"

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

using namespace inbiased;
using testing::TempDir;

namespace {

const fs::path kDeskRoot = INBIASED_TEST_DATA;

void write_bytes(const fs::path& path, const std::string& bytes) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string be32(std::uint32_t v) {
  return {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8), static_cast<char>(v)};
}

/// Minimal ustar writer for archive round trips.
std::string tar_entry(const std::string& name, const std::string& body, char type = '0') {
  std::string header(512, '\0');
  std::memcpy(header.data(), name.data(), name.size());
  std::snprintf(header.data() + 100, 8, "%07o", 0644);
  std::snprintf(header.data() + 108, 8, "%07o", 0);
  std::snprintf(header.data() + 116, 8, "%07o", 0);
  std::snprintf(header.data() + 124, 12, "%011o", static_cast<unsigned>(body.size()));
  std::snprintf(header.data() + 136, 12, "%011o", 0);
  header[156] = type;
  std::memcpy(header.data() + 257, "ustar", 5);
  std::memset(header.data() + 148, ' ', 8);
  unsigned sum = 0;
  for (char c : header) sum += static_cast<unsigned char>(c);
  std::snprintf(header.data() + 148, 8, "%06o", sum);
  std::string padded = body;
  padded.resize((body.size() + 511) / 512 * 512, '\0');
  return header + padded;
}

Dataset synthetic_rgb(Split split, Index n, int side, std::uint64_t seed) {
  Dataset d;
  d.spec.name = DatasetName::stl10;
  d.spec.split = split;
  d.data.images = Tensor<float>(n, Dims{3, side, side});
  Rng rng(seed);
  for (Index i = 0; i < d.data.images.values.size(); ++i) d.data.images.values.data()[i] = static_cast<float>(rng.uniform());
  for (Index i = 0; i < n; ++i) d.data.labels.push_back(static_cast<int>(i % 10));
  for (int c = 0; c < 10; ++c) d.classes.push_back(std::to_string(c));
  return d;
}

void write_png(const fs::path& path, int h, int w, unsigned char value) {
  fs::create_directories(path.parent_path());
  cv::Mat img(h, w, CV_8UC3, cv::Scalar(value, value / 2, 255 - value));
  REQUIRE(cv::imwrite(path.string(), img));
}

DatasetSpec desk(DatasetName name, Split split, std::uint64_t seed = 0) {
  DatasetSpec spec;
  spec.name = name;
  spec.split = split;
  spec.seed = seed;
  spec.root = kDeskRoot;
  return spec;
}

}  // namespace

TEST_CASE("palette: ten distinct full-saturation colors, fixed by the seed") {
  const auto a = make_palette(0);
  REQUIRE(a.colors.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& c = a.colors[i];
    CHECK(*std::max_element(c.begin(), c.end()) == doctest::Approx(1.0));
    CHECK(*std::min_element(c.begin(), c.end()) == doctest::Approx(0.0));
    for (std::size_t j = i + 1; j < 10; ++j) {
      const auto& d = a.colors[j];
      CHECK(std::abs(c[0] - d[0]) + std::abs(c[1] - d[1]) + std::abs(c[2] - d[2]) > 0.1);
    }
  }
  CHECK(make_palette(0).colors == a.colors);
  CHECK(make_palette(1).colors != a.colors);

  const auto red = hsv_to_rgb(0.0, 1.0, 1.0);
  CHECK(red == std::array<double, 3>{1.0, 0.0, 0.0});
  const auto blue = hsv_to_rgb(2.0 / 3.0, 1.0, 1.0);
  CHECK(blue[2] == doctest::Approx(1.0));
  CHECK(blue[0] == doctest::Approx(0.0));
  CHECK(blue[1] == doctest::Approx(0.0));
}

TEST_CASE("IDX reader decodes a hand-written file") {
  TempDir dir("idx");
  std::string images = be32(0x803) + be32(2) + be32(2) + be32(3);
  for (int k = 0; k < 12; ++k) images.push_back(static_cast<char>(k * 20));
  const std::string labels = be32(0x801) + be32(2) + std::string{7, 2};
  write_bytes(dir / "img", images);
  write_bytes(dir / "lab", labels);
  const auto b = read_mnist_idx(dir / "img", dir / "lab");
  CHECK(b.size() == 2);
  CHECK(b.images.dims == Dims{1, 2, 3});
  CHECK(b.labels == std::vector<int>{7, 2});
  CHECK(b.images.plane(1, 0)(1, 2) == doctest::Approx(220.0 / 255.0));

  write_bytes(dir / "bad", be32(0x801) + be32(0));
  CHECK_THROWS_AS(read_mnist_idx(dir / "bad", dir / "lab"), DataError);
}

TEST_CASE("STL-10 and CIFAR binary readers: layout and labels") {
  TempDir dir("bin");
  // STL: one image whose red plane encodes (x, y) column-major
  std::string stl(3 * 96 * 96, '\0');
  for (int x = 0; x < 96; ++x)
    for (int y = 0; y < 96; ++y) stl[static_cast<std::size_t>(x * 96 + y)] = static_cast<char>(x);
  write_bytes(dir / "x.bin", stl);
  write_bytes(dir / "y.bin", std::string{3});
  const auto s = read_stl10_binary(dir / "x.bin", dir / "y.bin");
  CHECK(s.labels == std::vector<int>{2});
  CHECK(s.images.plane(0, 0)(10, 40) == doctest::Approx(40.0 / 255.0));
  CHECK(s.images.plane(0, 0)(40, 10) == doctest::Approx(10.0 / 255.0));

  std::string cifar;
  for (int r = 0; r < 2; ++r) {
    cifar.push_back(static_cast<char>(5 + r));
    cifar.push_back(static_cast<char>(60 + r));
    cifar.append(3072, static_cast<char>(r * 100));
  }
  write_bytes(dir / "c.bin", cifar);
  const auto fine = read_cifar_binary({dir / "c.bin"}, 2, 1);
  CHECK(fine.labels == std::vector<int>{60, 61});
  CHECK(fine.images.values(1, 3071) == doctest::Approx(100.0 / 255.0));
  CHECK_THROWS_AS(read_cifar_binary({dir / "c.bin"}, 1, 0), DataError);
}

TEST_CASE("bundled MNIST loads with ten classes and pixels in [0,1]") {
  const auto train = load_dataset(desk(DatasetName::mnist, Split::train));
  const auto test = load_dataset(desk(DatasetName::mnist, Split::test));
  CHECK(train.data.size() == 5000);
  CHECK(test.data.size() == 5000);
  CHECK(train.num_classes() == 10);
  CHECK(std::set<int>(test.data.labels.begin(), test.data.labels.end()).size() == 10);
  CHECK(train.data.images.values.minCoeff() >= 0.0f);
  CHECK(train.data.images.values.maxCoeff() <= 1.0f);
  CHECK(train.data.images.dims == Dims{1, 28, 28});

  auto limited = desk(DatasetName::mnist, Split::train);
  limited.limit = 300;
  const auto sub = load_dataset(limited);
  CHECK(sub.data.size() == 300);
  CHECK(content_hash(sub.data) == content_hash(load_dataset(limited).data));
}

TEST_CASE("missing data names the dataset and the expected layout") {
  TempDir dir("empty");
  DatasetSpec spec;
  spec.root = dir.path();
  for (auto name : {DatasetName::mnist, DatasetName::stl10, DatasetName::cifar10, DatasetName::tinyimagenet}) {
    spec.name = name;
    try {
      load_dataset(spec);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find(to_string(name)) != std::string::npos);
      CHECK(msg.find("expected layout") != std::string::npos);
    }
  }
}

TEST_CASE("colored MNIST FG: training colors follow the label exactly") {
  const auto train = load_dataset(desk(DatasetName::colored_mnist_fg, Split::train, 3));
  const auto mnist = load_dataset(desk(DatasetName::mnist, Split::train));
  REQUIRE(train.palette.has_value());
  CHECK(train.data.size() == mnist.data.size());
  CHECK(train.data.labels == mnist.data.labels);
  CHECK(train.data.images.dims == Dims{3, 28, 28});
  int checked = 0;
  for (Index i = 0; i < train.data.size(); i += 97) {
    const int label = train.data.labels[static_cast<std::size_t>(i)];
    const auto& color = train.palette->colors[static_cast<std::size_t>(label)];
    for (int y = 0; y < 28; ++y) {
      for (int x = 0; x < 28; ++x) {
        const bool digit = mnist.data.images.plane(i, 0)(y, x) > kDigitMaskThreshold;
        for (int c = 0; c < 3; ++c) {
          const float expected = digit ? static_cast<float>(color[static_cast<std::size_t>(c)]) : 0.0f;
          CHECK(train.data.images.plane(i, c)(y, x) == expected);
        }
      }
    }
    ++checked;
  }
  CHECK(checked > 10);
  CHECK(train.color_index == train.data.labels);
}

TEST_CASE("colored MNIST test colors are independent of the label") {
  for (auto name : {DatasetName::colored_mnist_fg, DatasetName::colored_mnist_bg, DatasetName::colored_mnist_fgbg}) {
    const auto test = load_dataset(desk(name, Split::test, 0));
    const auto chi = chi_square_independence(test.color_index, test.data.labels);
    CHECK(chi.dof == 81);
    CHECK(chi.p_value > 0.01);

    const auto train = load_dataset(desk(name, Split::train, 0));
    CHECK(chi_square_independence(train.color_index, train.data.labels).p_value < 1e-12);
  }
}

TEST_CASE("colored MNIST FGBG: foreground and background indices differ") {
  for (auto split : {Split::train, Split::test}) {
    const auto d = load_dataset(desk(DatasetName::colored_mnist_fgbg, split, 1));
    REQUIRE(d.second_color_index.size() == d.color_index.size());
    for (std::size_t i = 0; i < d.color_index.size(); ++i) CHECK(d.color_index[i] != d.second_color_index[i]);
    if (split == Split::train) {
      for (std::size_t i = 0; i < d.color_index.size(); ++i) CHECK(d.second_color_index[i] == (d.data.labels[i] + 5) % 10);
    }
  }
}

TEST_CASE("colored MNIST BG: white digit on the class color") {
  const auto d = load_dataset(desk(DatasetName::colored_mnist_bg, Split::train, 2));
  const auto mnist = load_dataset(desk(DatasetName::mnist, Split::train));
  const Index i = 17;
  const auto& color = d.palette->colors[static_cast<std::size_t>(d.data.labels[17])];
  for (int y = 0; y < 28; ++y) {
    for (int x = 0; x < 28; ++x) {
      const bool digit = mnist.data.images.plane(i, 0)(y, x) > kDigitMaskThreshold;
      CHECK(d.data.images.plane(i, 1)(y, x) == (digit ? 1.0f : static_cast<float>(color[1])));
    }
  }
}

TEST_CASE("synthetic datasets are reproducible by content hash") {
  const auto a = load_dataset(desk(DatasetName::colored_mnist_fgbg, Split::test, 4));
  const auto b = load_dataset(desk(DatasetName::colored_mnist_fgbg, Split::test, 4));
  const auto c = load_dataset(desk(DatasetName::colored_mnist_fgbg, Split::test, 5));
  CHECK(content_hash(a.data) == content_hash(b.data));
  CHECK(content_hash(a.data) != content_hash(c.data));
}

TEST_CASE("tinting: identity at 0, constant at 1, test split untouched") {
  const auto raw = synthetic_rgb(Split::train, 20, 6, 1);
  const auto same = make_tinted_stl10(raw, 0, 0.0);
  CHECK(same.data.images.values == raw.data.images.values);

  const auto full = make_tinted_stl10(raw, 0, 1.0);
  const auto& c0 = full.palette->colors[0];
  for (Index i = 0; i < raw.data.size(); ++i) {
    if (raw.data.labels[static_cast<std::size_t>(i)] != 0) continue;
    for (int c = 0; c < 3; ++c) CHECK((full.data.images.plane(i, c).array() == static_cast<float>(c0[static_cast<std::size_t>(c)])).all());
  }

  const auto partial = make_tinted_stl10(raw, 0, 0.3);
  const float expected = 0.7f * raw.data.images.plane(3, 1)(2, 2) + 0.3f * static_cast<float>(partial.palette->colors[3][1]);
  CHECK(partial.data.images.plane(3, 1)(2, 2) == doctest::Approx(expected));
  CHECK(partial.data.labels == raw.data.labels);

  const auto raw_test = synthetic_rgb(Split::test, 20, 6, 2);
  const auto test = make_tinted_stl10(raw_test, 0, 0.3);
  CHECK(test.data.images.values == raw_test.data.images.values);
  CHECK(test.color_index.empty());
  CHECK_THROWS_AS(make_tinted_stl10(raw, 0, 1.5), InvalidArgument);
}

TEST_CASE("STL-10 loads from the binary layout below the data root") {
  TempDir dir("stl");
  std::string x(2 * 3 * 96 * 96, '\x80');
  write_bytes(dir / "stl10_binary/test_X.bin", x);
  write_bytes(dir / "stl10_binary/test_y.bin", std::string{1, 10});
  DatasetSpec spec;
  spec.name = DatasetName::tinted_stl10;
  spec.split = Split::test;
  spec.root = dir.path();
  const auto d = load_dataset(spec);
  CHECK(d.data.size() == 2);
  CHECK(d.data.labels == std::vector<int>{0, 9});
  CHECK(d.num_classes() == 10);
}

TEST_CASE("image folder: two classes of five images") {
  TempDir dir("folder");
  for (int k = 0; k < 5; ++k) {
    write_png(dir / ("cat/" + std::to_string(k) + ".png"), 8, 8, static_cast<unsigned char>(10 * k));
    write_png(dir / ("dog/" + std::to_string(k) + ".png"), 8, 8, static_cast<unsigned char>(200 - k));
  }
  DatasetSpec spec;
  spec.name = DatasetName::folder;
  spec.root = dir.path();
  const auto d = load_dataset(spec);
  CHECK(d.data.size() == 10);
  CHECK(d.num_classes() == 2);
  CHECK(d.classes == std::vector<std::string>{"cat", "dog"});
  CHECK(d.data.labels[0] == 0);
  CHECK(d.data.labels[9] == 1);
  // BGR (10, 5, 245) on disk is RGB (245, 5, 10)
  CHECK(d.data.images.plane(1, 0)(0, 0) == doctest::Approx(245.0f / 255.0f));
  CHECK(d.data.images.plane(1, 2)(0, 0) == doctest::Approx(10.0f / 255.0f));

  const std::vector<std::string> map{"dog", "cat", "bird"};
  const auto mapped = load_image_folder(dir.path(), 0, &map);
  CHECK(mapped.data.labels[0] == 1);
  CHECK(mapped.num_classes() == 3);

  const std::vector<std::string> narrow{"cat"};
  CHECK_THROWS_AS(load_image_folder(dir.path(), 0, &narrow), LabelMismatchError);

  TempDir empty("folder-empty");
  fs::create_directories(empty / "a");
  CHECK_THROWS_AS(load_image_folder(empty.path()), EmptyDatasetError);

  write_png(dir / "dog/big.png", 10, 10, 1);
  CHECK_THROWS_AS(load_image_folder(dir.path()), DataError);
  CHECK(load_image_folder(dir.path(), 8).data.size() == 11);
}

TEST_CASE("skewed CelebA: train holds only B-F and NB-M, test holds every group") {
  TempDir dir("celeba");
  const fs::path root = dir / "celeba";
  fs::create_directories(root);
  std::ofstream attrs(root / "list_attr_celeba.txt");
  std::ofstream parts(root / "list_eval_partition.txt");
  attrs << 16 << "\n5_o_Clock_Shadow Blond_Hair Male\n";
  for (int k = 0; k < 16; ++k) {
    char name[16];
    std::snprintf(name, sizeof(name), "%06d.jpg", k + 1);
    const bool blond = (k & 1) != 0;
    const bool male = (k & 2) != 0;
    attrs << name << " -1 " << (blond ? 1 : -1) << "  " << (male ? 1 : -1) << "\n";
    parts << name << " " << (k < 8 ? 0 : 2) << "\n";
    write_png(root / "img_align_celeba" / name, 20, 16, static_cast<unsigned char>(k));
  }
  attrs.close();
  parts.close();

  const auto train = make_skewed_celeba(Split::train, dir.path(), 8);
  CHECK(train.data.size() == 4);
  for (std::size_t i = 0; i < train.data.groups.size(); ++i) {
    const Group g = train.data.groups[i];
    CHECK((g == Group::blond_female || g == Group::nonblond_male));
    CHECK(train.data.labels[i] == (g == Group::nonblond_male ? 1 : 0));
  }
  CHECK(train.data.images.dims == Dims{3, 8, 8});

  const auto test = make_skewed_celeba(Split::test, dir.path(), 8);
  CHECK(test.data.size() == 8);
  CHECK(std::set<Group>(test.data.groups.begin(), test.data.groups.end()).size() == 4);

  TempDir none("celeba-none");
  CHECK_THROWS_AS(make_skewed_celeba(Split::train, none.path()), DataError);
}

TEST_CASE("chi-square survival matches reference values") {
  // reference: scipy.stats.chi2.sf
  CHECK(chi_square_survival(113.5, 81) == doctest::Approx(0.010020822391852365).epsilon(1e-9));
  CHECK(chi_square_survival(5.0, 3) == doctest::Approx(0.1717971442967335).epsilon(1e-9));
  CHECK(chi_square_survival(0.5, 1) == doctest::Approx(0.47950012218695337).epsilon(1e-9));
  CHECK(chi_square_survival(200.0, 150) == doctest::Approx(0.003973185970821635).epsilon(1e-9));
  CHECK(chi_square_survival(30.0, 10) == doctest::Approx(0.000856641210775301).epsilon(1e-9));
  CHECK(chi_square_survival(1e-3, 4) == doctest::Approx(0.9999998750416589).epsilon(1e-9));

  // perfectly dependent 2x2 table, 50 per cell on the diagonal
  std::vector<int> a;
  std::vector<int> b;
  for (int i = 0; i < 100; ++i) {
    a.push_back(i % 2);
    b.push_back(i % 2);
  }
  const auto r = chi_square_independence(a, b);
  CHECK(r.statistic == doctest::Approx(100.0));
  CHECK(r.dof == 1);
  CHECK(r.p_value < 1e-20);
}

TEST_CASE("batch stream visits every sample once, seeded order") {
  const auto d = synthetic_rgb(Split::train, 23, 3, 0);
  BatchStream a(d.data, 5, 11);
  BatchStream b(d.data, 5, 11);
  CHECK(a.batches() == 5);
  CHECK(a.order() == b.order());
  CHECK(BatchStream(d.data, 5, 12).order() != a.order());
  std::vector<int> seen(23, 0);
  ImageBatch<float> batch;
  Index total = 0;
  while (a.next(batch)) {
    total += batch.size();
    for (Index i = 0; i < batch.size(); ++i) {
      for (Index j = 0; j < d.data.size(); ++j) {
        if (d.data.images.values.row(j) == batch.images.values.row(i)) ++seen[static_cast<std::size_t>(j)];
      }
    }
  }
  CHECK(total == 23);
  for (int s : seen) CHECK(s == 1);
  CHECK_THROWS_AS(BatchStream(d.data, 0), InvalidArgument);
}

TEST_CASE("downloads verify md5 and archives unpack") {
  TempDir dir("dl");
  const std::string payload = "hello dataset\n";
  write_bytes(dir / "src/blob.txt", payload);
  const std::string url = "file://" + (dir / "src/blob.txt").string();
  const std::string md5 = io::md5_file(dir / "src/blob.txt");
  CHECK(md5 == "49f1d0fb4821117680b974aba7524089");

  io::fetch(url, dir / "out/blob.txt", md5);
  CHECK(io::read_file(dir / "out/blob.txt") == payload);
  CHECK_THROWS_AS(io::fetch(url, dir / "out/other.txt", std::string(32, '0')), ChecksumError);
  CHECK_FALSE(fs::exists(dir / "out/other.txt"));
  CHECK_THROWS_AS(io::fetch("file:///nonexistent/path", dir / "out/x", ""), DataError);

  write_bytes(dir / "a.tar", tar_entry("top/", "", '5') + tar_entry("top/inner/f.bin", std::string(700, 'x')) +
                                 tar_entry("top/g.txt", "abc") + std::string(1024, '\0'));
  io::extract_tar(dir / "a.tar", dir / "x");
  CHECK(io::read_file(dir / "x/top/inner/f.bin") == std::string(700, 'x'));
  CHECK(io::read_file(dir / "x/top/g.txt") == "abc");

  write_bytes(dir / "evil.tar", tar_entry("../escape.txt", "no") + std::string(1024, '\0'));
  CHECK_THROWS_AS(io::extract_tar(dir / "evil.tar", dir / "y"), DataError);
}

TEST_CASE("sha256 of a known string") {
  CHECK(io::sha256_hex(std::string_view("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("generated folders round-trip through the folder loader") {
  auto spec = desk(DatasetName::colored_mnist_fg, Split::test, 7);
  spec.limit = 40;
  const auto d = load_dataset(spec);
  TempDir dir("gen");
  const auto manifest_path = write_image_folder(d, dir.path());
  const auto manifest = nlohmann::json::parse(io::read_file(manifest_path));
  CHECK(manifest["count"] == 40);
  CHECK(manifest["palette"].size() == 10);
  CHECK(manifest["dataset"] == "colored_mnist_fg");
  CHECK(manifest["content_hash"] == content_hash(d.data));
  for (const auto& f : manifest["files"]) CHECK(io::sha256_file(dir.path() / f["path"].get<std::string>()) == f["sha256"]);

  const auto back = load_image_folder(dir.path());
  CHECK(back.classes == d.classes);
  REQUIRE(back.data.size() == 40);
  // folder order is class-major; compare as multisets of labels
  auto a = back.data.labels;
  auto b = d.data.labels;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
  CHECK(back.data.images.values.maxCoeff() <= 1.0f);
}
